#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "def/diffusion/sampler.hpp"
#include "def/forecaster/forecaster.hpp"

namespace def::ensemble {

struct EnsembleConfig {
    int members = 32;
    int leads = 40;
    diffusion::GuidanceConfig guidance;
    /// Perturb only before the first advance instead of before every one.
    bool perturb_first_only = false;
    std::uint64_t master_seed = 0;
    /// A member whose normalized physical values leave [-bound, bound] counts
    /// as diverged, as does one with non-finite values.
    double divergence_bound = 1e3;

    void validate() const;
    nlohmann::json to_json() const;
    static EnsembleConfig from_json(const nlohmann::json& j);
};

/// B member trajectories of normalized states. trajectories[b][n] is lead
/// n + 1, i.e. time index x0.time_index() + n + 1.
struct EnsembleRun {
    EnsembleConfig config;
    std::vector<std::uint64_t> seeds;
    std::vector<std::vector<FieldState>> trajectories;
    /// Members that diverged, in index order. Their
    /// trajectories are left empty and excluded from statistics.
    std::vector<int> casualties;

    int members() const { return static_cast<int>(trajectories.size()); }
    int leads() const { return config.leads; }
    bool alive(int b) const { return !trajectories[b].empty(); }
    /// Surviving members' states at lead index n (0-based).
    std::vector<const FieldState*> at_lead(int n) const;
};

/// seeds[b] = hash(master_seed, b).
std::uint64_t member_seed(std::uint64_t master_seed, int b);

/// Perturb-then-advance ensemble rollout from a normalized x0. With a null
/// denoiser the perturbation is the identity.
EnsembleRun run_ensemble(const FieldState& x0, const forecast::ForecasterModel& forecaster,
                         const diffusion::NoisePredictor* denoiser, const EnsembleConfig& cfg);

/// Pointwise mean / population std over surviving members at lead index n;
/// physical channels only. Throws when no member survives.
FieldState ensemble_mean(const EnsembleRun& run, int n);
FieldState ensemble_spread(const EnsembleRun& run, int n);

/// Same statistics over an explicit member list.
FieldState ensemble_mean(std::span<const FieldState* const> members);
FieldState ensemble_spread(std::span<const FieldState* const> members);

}  // namespace def::ensemble
