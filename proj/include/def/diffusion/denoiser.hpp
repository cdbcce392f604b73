#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "def/diffusion/schedule.hpp"
#include "def/forecaster/forecaster.hpp"
#include "def/grid/field_state.hpp"
#include "def/nn/network.hpp"

namespace def::diffusion {

/// eps(z_t | t, c) for a batch. `z` and `cond` are (v, N, H, W); a null
/// `cond` asks for the unconditional prediction. `t` holds one real-valued
/// diffusion time per sample.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual const NoiseSchedule& schedule() const = 0;
    virtual nn::Tensor predict(const nn::Tensor& z, const nn::Tensor* cond, std::span<const double> t) const = 0;
};

/// Denoiser input channels: noisy slab (v), conditioning slab (v), and one
/// indicator channel that is 1 for a real condition and 0 for the null
/// condition, whose slab is all zeros.
nn::NetSpec default_denoiser_spec(int vars);

/// With prior_skip the prediction is sqrt(1 - alpha_bar_t) z + network
/// output, so the network learns a correction to the unit-Gaussian answer.
class DenoiserModel final : public NoisePredictor {
public:
    DenoiserModel(nn::Network net, NoiseSchedule schedule, bool prior_skip = false);

    int vars() const { return net_.spec().out_channels; }
    const nn::Network& network() const { return net_; }
    nn::Network& network() { return net_; }
    const NoiseSchedule& schedule() const override { return schedule_; }
    bool prior_skip() const { return prior_skip_; }

    nn::Tensor predict(const nn::Tensor& z, const nn::Tensor* cond, std::span<const double> t) const override;

    /// Adds the prior term to a raw network output in place (no-op without
    /// prior_skip).
    void add_skip(nn::Tensor& out, const nn::Tensor& z, std::span<const double> t) const;

    /// Network input for per-sample conditioning: sample n uses cond when
    /// use_cond[n] is true, the null condition otherwise.
    nn::Tensor assemble(const nn::Tensor& z, const nn::Tensor& cond, std::span<const char> use_cond) const;

    void save(const std::string& path, std::int64_t step = 0, const nlohmann::json& extra = {}) const;
    static DenoiserModel load(const std::string& path);

private:
    nn::Network net_;
    NoiseSchedule schedule_;
    bool prior_skip_ = false;
};

/// Exact noise predictor for data distributed N(0, I): the marginal at every t
/// is N(0, I), so E[eps | z_t] = sqrt(1 - alpha_bar_t) z_t. Ignores the
/// condition.
class GaussianScore final : public NoisePredictor {
public:
    explicit GaussianScore(NoiseSchedule schedule) : schedule_(std::move(schedule)) {}
    const NoiseSchedule& schedule() const override { return schedule_; }
    nn::Tensor predict(const nn::Tensor& z, const nn::Tensor* cond, std::span<const double> t) const override;

private:
    NoiseSchedule schedule_;
};

struct DiffusionTrainConfig {
    int epochs = 60;
    int batch = 32;
    double lr = 2e-4;
    double tau = 1.0;
    /// Probability of training on the real condition instead of the null one.
    double cond_prob = 0.9;
    /// Probability of replacing x0 by one forecaster step.
    double advance_prob = 0.5;
    /// Decay of the weight moving average kept as the returned model; 0 keeps
    /// the raw weights.
    double ema = 0.999;
    bool prior_skip = true;
    std::uint64_t seed = 0;
};

struct DiffusionCounters {
    std::int64_t conditional = 0;
    std::int64_t unconditional = 0;
    std::int64_t advanced = 0;
};

struct DiffusionTraining {
    DenoiserModel model;
    /// Mean per-element noise MSE per epoch.
    std::vector<double> loss_curve;
    DiffusionCounters counters;
};

/// Classifier-free-guidance training over a normalized dataset. The forecaster
/// is needed whenever advance_prob > 0 and must have been trained.
DiffusionTraining train_diffusion(std::span<const FieldState> dataset, const forecast::ForecasterModel* forecaster,
                                  const nn::NetSpec& spec, const NoiseSchedule& schedule,
                                  const DiffusionTrainConfig& cfg);

}  // namespace def::diffusion
