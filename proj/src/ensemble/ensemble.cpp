#include "def/ensemble/ensemble.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "def/util/seed.hpp"

namespace def::ensemble {

void EnsembleConfig::validate() const
{
    if (members < 1) throw std::invalid_argument("EnsembleConfig: members must be >= 1");
    if (leads < 1) throw std::invalid_argument("EnsembleConfig: leads must be >= 1");
    if (!(divergence_bound > 0.0)) throw std::invalid_argument("EnsembleConfig: divergence bound must be > 0");
}

nlohmann::json EnsembleConfig::to_json() const
{
    return {{"members", members},
            {"leads", leads},
            {"guidance", guidance.to_json()},
            {"perturb_first_only", perturb_first_only},
            {"master_seed", master_seed},
            {"divergence_bound", divergence_bound}};
}

EnsembleConfig EnsembleConfig::from_json(const nlohmann::json& j)
{
    EnsembleConfig c;
    c.members = j.value("members", c.members);
    c.leads = j.value("leads", c.leads);
    if (j.contains("guidance")) c.guidance = diffusion::GuidanceConfig::from_json(j.at("guidance"));
    c.perturb_first_only = j.value("perturb_first_only", c.perturb_first_only);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.divergence_bound = j.value("divergence_bound", c.divergence_bound);
    return c;
}

std::vector<const FieldState*> EnsembleRun::at_lead(int n) const
{
    if (n < 0 || n >= leads()) throw std::out_of_range("EnsembleRun: lead index out of range");
    std::vector<const FieldState*> out;
    for (const auto& traj : trajectories)
        if (!traj.empty()) out.push_back(&traj[n]);
    return out;
}

namespace {

bool bounded(const FieldState& x, double bound)
{
    if (!x.all_finite()) return false;
    for (double v : x.physical())
        if (std::abs(v) > bound) return false;
    return true;
}

}  // namespace

std::uint64_t member_seed(std::uint64_t master_seed, int b)
{
    return derive_seed(master_seed, static_cast<std::uint64_t>(b));
}

EnsembleRun run_ensemble(const FieldState& x0, const forecast::ForecasterModel& forecaster,
                         const diffusion::NoisePredictor* denoiser, const EnsembleConfig& cfg)
{
    cfg.validate();
    if (denoiser) cfg.guidance.validate(denoiser->schedule().steps());
    require_same_shape(x0.shape(), forecaster.shape(), "run_ensemble");
    x0.require_finite("run_ensemble initial state");

    EnsembleRun run;
    run.config = cfg;
    run.seeds.resize(cfg.members);
    run.trajectories.resize(cfg.members);
    for (int b = 0; b < cfg.members; ++b) {
        run.seeds[b] = member_seed(cfg.master_seed, b);
        run.trajectories[b].reserve(cfg.leads);
    }

    // Members stay in index order inside every batch, and batched inference is
    // per-sample exact, so member b depends only on its own seed.
    std::vector<int> active(cfg.members);
    for (int b = 0; b < cfg.members; ++b) active[b] = b;
    std::vector<FieldState> current(cfg.members, x0);
    std::vector<bool> dead(cfg.members, false);

    for (int n = 0; n < cfg.leads; ++n) {
        const bool do_perturb = denoiser && (n == 0 || !cfg.perturb_first_only);
        std::vector<FieldState> perturbed;
        if (do_perturb) {
            std::vector<std::uint64_t> step_seeds(current.size());
            for (std::size_t k = 0; k < current.size(); ++k)
                step_seeds[k] = derive_seed(run.seeds[active[k]], static_cast<std::uint64_t>(n));
            try {
                perturbed = diffusion::perturb_batch(*denoiser, current, cfg.guidance, step_seeds);
            } catch (const NonFiniteError&) {
                // Redo one member at a time to find the ones that diverge.
                perturbed.clear();
                for (std::size_t k = 0; k < current.size(); ++k) {
                    try {
                        perturbed.push_back(diffusion::perturb(*denoiser, current[k], cfg.guidance, step_seeds[k]));
                    } catch (const NonFiniteError&) {
                        FieldState bad = current[k];
                        bad.physical()[0] = std::numeric_limits<double>::quiet_NaN();
                        perturbed.push_back(std::move(bad));
                    }
                }
            }
        } else {
            perturbed = current;
        }

        std::vector<FieldState> next;
        std::vector<int> next_active;
        std::vector<FieldState> advanced = forecaster.step_batch(perturbed);
        for (std::size_t k = 0; k < advanced.size(); ++k) {
            const int b = active[k];
            if (!bounded(perturbed[k], cfg.divergence_bound) || !bounded(advanced[k], cfg.divergence_bound)) {
                dead[b] = true;
                continue;
            }
            run.trajectories[b].push_back(advanced[k]);
            next.push_back(std::move(advanced[k]));
            next_active.push_back(b);
        }
        current = std::move(next);
        active = std::move(next_active);
        if (current.empty()) break;
    }

    for (int b = 0; b < cfg.members; ++b)
        if (dead[b]) {
            run.trajectories[b].clear();
            run.casualties.push_back(b);
        }
    return run;
}

FieldState ensemble_mean(std::span<const FieldState* const> members)
{
    if (members.empty()) throw std::invalid_argument("ensemble_mean: empty ensemble");
    // Accumulate offsets from the first member so that identical members give
    // that member back exactly.
    FieldState mean = members.front()->physical_only();
    const auto base = members.front()->physical();
    std::vector<double> acc(base.size(), 0.0);
    for (std::size_t b = 1; b < members.size(); ++b) {
        require_same_shape(members[b]->shape(), members.front()->shape(), "ensemble_mean");
        const auto x = members[b]->physical();
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += x[k] - base[k];
    }
    const double B = static_cast<double>(members.size());
    auto m = mean.data();
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = base[k] + acc[k] / B;
    return mean;
}

FieldState ensemble_spread(std::span<const FieldState* const> members)
{
    const FieldState mean = ensemble_mean(members);
    FieldState spread(mean.shape(), mean.time_index());
    auto s = spread.data();
    const auto m = mean.data();
    for (const FieldState* member : members) {
        const auto x = member->physical();
        for (std::size_t k = 0; k < s.size(); ++k) {
            const double d = x[k] - m[k];
            s[k] += d * d;
        }
    }
    const double B = static_cast<double>(members.size());
    for (double& x : s) x = std::sqrt(x / B);
    return spread;
}

FieldState ensemble_mean(const EnsembleRun& run, int n)
{
    const auto members = run.at_lead(n);
    return ensemble_mean(members);
}

FieldState ensemble_spread(const EnsembleRun& run, int n)
{
    const auto members = run.at_lead(n);
    return ensemble_spread(members);
}

}  // namespace def::ensemble
