#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "def/diffusion/denoiser.hpp"

namespace def::diffusion {

enum class Solver { Ancestral, Dpm2m };

std::string to_string(Solver s);
Solver solver_from_string(const std::string& s);

struct GuidanceConfig {
    double omega = 0.5;
    /// Random-walk length: perturbation passes per state.
    int walks = 1;
    Solver solver = Solver::Dpm2m;
    /// Solver steps for dpm2m; ancestral always runs the full chain.
    int steps = 20;

    void validate(int T) const;
    nlohmann::json to_json() const;
    static GuidanceConfig from_json(const nlohmann::json& j);
    /// "Diffusion[omega, K]".
    std::string label() const;
};

/// Guided noise for the batch; one network pass when omega == 0, two otherwise.
nn::Tensor guided_noise(const NoisePredictor& model, const nn::Tensor& z, const nn::Tensor& cond, double omega,
                        std::span<const double> t);

/// Full T-step reverse chain with sigma_t^2 = beta_t. Sample n draws all of
/// its noise from a generator seeded with seeds[n], so results do not depend
/// on batch composition.
nn::Tensor sample_ancestral(const NoisePredictor& model, const nn::Tensor& cond, double omega,
                            std::span<const std::uint64_t> seeds);

/// Second-order multistep DPM-Solver++ in data-prediction form on a grid
/// uniform in half log-SNR from t = T to t = 1; the first step is first order.
nn::Tensor sample_dpm2m(const NoisePredictor& model, const nn::Tensor& cond, double omega, int steps,
                        std::span<const std::uint64_t> seeds);

nn::Tensor sample(const NoisePredictor& model, const nn::Tensor& cond, const GuidanceConfig& cfg,
                  std::span<const std::uint64_t> seeds);

/// Seed for walk `k` of a perturbation seeded with `seed`.
std::uint64_t walk_seed(std::uint64_t seed, int k);

/// Observer of every sampler call a perturbation makes: (walk index, seeds).
using WalkLog = std::function<void(int, std::span<const std::uint64_t>)>;

/// Random-walk perturbation of normalized states: K sampler calls, each
/// conditioned on the previous output, the first on x itself. Forcing
/// channels and time indices are copied from the inputs.
std::vector<FieldState> perturb_batch(const NoisePredictor& model, std::span<const FieldState> xs,
                                      const GuidanceConfig& cfg, std::span<const std::uint64_t> seeds,
                                      const WalkLog& log = {});
FieldState perturb(const NoisePredictor& model, const FieldState& x, const GuidanceConfig& cfg,
                   std::uint64_t seed);

}  // namespace def::diffusion
