#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "def/ensemble/ensemble.hpp"

using namespace def;
using namespace def::ensemble;

namespace {

dynamics::DynamicsConfig clock8()
{
    dynamics::DynamicsConfig cfg;
    cfg.height = 8;
    cfg.width = 8;
    cfg.vars = 2;
    cfg.forcings = 2;
    cfg.seed = 5;
    return cfg;
}

forecast::ForecasterModel small_forecaster()
{
    nn::NetSpec s;
    s.in_channels = 4;
    s.out_channels = 2;
    s.stages = {{8, false}, {8, true}};
    // Residual around a small random network keeps rollouts bounded.
    nn::Network net(s, 11);
    for (double& w : net.params().values()) w *= 0.2;
    forecast::ForecasterModel m(std::move(net), NormStats{{0.0, 0.0}, {1.0, 1.0}, 1e-6}, clock8(), true);
    m.set_trained_steps(1);
    return m;
}

diffusion::DenoiserModel small_denoiser()
{
    nn::NetSpec s;
    s.in_channels = 5;
    s.out_channels = 2;
    s.stages = {{8, false}, {8, true}};
    s.time_embed_width = 8;
    // A small correction to the exact Gaussian answer keeps samples bounded.
    nn::Network net(s, 13);
    for (double& w : net.params().values()) w *= 0.2;
    return diffusion::DenoiserModel(std::move(net), diffusion::NoiseSchedule::linear(50, 1e-3, 0.2), true);
}

FieldState initial()
{
    const auto traj = dynamics::generate_trajectory(clock8(), 12);
    return normalize(traj.back(), compute_stats(traj));
}

EnsembleConfig small_config(int members, int leads)
{
    EnsembleConfig cfg;
    cfg.members = members;
    cfg.leads = leads;
    cfg.guidance.steps = 4;
    cfg.master_seed = 21;
    return cfg;
}

FieldState scalar_member(double v, int t = 0)
{
    return FieldState(GridShape{1, 0, 1, 1}, std::vector<double>{v}, t);
}

// Fails for samples whose starting noise is large in the first pixel.
class FragilePredictor final : public diffusion::NoisePredictor {
public:
    explicit FragilePredictor(const diffusion::NoisePredictor& inner) : inner_(inner) {}
    const diffusion::NoiseSchedule& schedule() const override { return inner_.schedule(); }
    nn::Tensor predict(const nn::Tensor& z, const nn::Tensor* cond, std::span<const double> t) const override
    {
        nn::Tensor e = inner_.predict(z, cond, t);
        for (int n = 0; n < z.batch; ++n)
            if (t[n] == schedule().steps() && z.plane(0, n)[0] > 0.5) e.plane(0, n)[0] = std::nan("");
        return e;
    }

private:
    const diffusion::NoisePredictor& inner_;
};

}  // namespace

TEST_CASE("ensemble mean and spread examples")
{
    const FieldState one = scalar_member(1.0), three = scalar_member(3.0);
    const std::vector<const FieldState*> pair{&one, &three};
    CHECK(ensemble_mean(pair).physical()[0] == 2.0);
    CHECK(ensemble_spread(pair).physical()[0] == 1.0);

    const std::vector<const FieldState*> single{&three};
    CHECK(ensemble_mean(single).physical()[0] == 3.0);
    CHECK(ensemble_spread(single).physical()[0] == 0.0);

    const FieldState c = scalar_member(0.1 + 0.2);
    const std::vector<const FieldState*> same(7, &c);
    CHECK(ensemble_mean(same).physical()[0] == c.physical()[0]);
    CHECK(ensemble_spread(same).physical()[0] == 0.0);

    CHECK_THROWS(ensemble_mean(std::vector<const FieldState*>{}));
    CHECK_THROWS(ensemble_spread(std::vector<const FieldState*>{}));
}

TEST_CASE("property: mean and spread ignore member order; spread is zero iff members agree")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 2.0);
    const GridShape shape{2, 1, 3, 3};
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<FieldState> members;
        for (int b = 0; b < 6; ++b) {
            std::vector<double> d(shape.size());
            for (double& x : d) x = normal(rng);
            members.emplace_back(shape, std::move(d));
        }
        std::vector<const FieldState*> ptrs;
        for (const auto& m : members) ptrs.push_back(&m);
        const FieldState mean = ensemble_mean(ptrs);
        const FieldState spread = ensemble_spread(ptrs);
        CHECK(mean.shape().forcings == 0);
        std::shuffle(ptrs.begin(), ptrs.end(), rng);
        const FieldState mean2 = ensemble_mean(ptrs);
        const FieldState spread2 = ensemble_spread(ptrs);
        for (std::size_t k = 0; k < mean.data().size(); ++k) {
            CHECK(mean2.data()[k] == doctest::Approx(mean.data()[k]).epsilon(1e-12));
            CHECK(spread2.data()[k] == doctest::Approx(spread.data()[k]).epsilon(1e-12));
            CHECK(spread.data()[k] > 0.0);
        }
    }
}

TEST_CASE("member seeds are a fixed hash of master seed and index")
{
    CHECK(member_seed(0, 0) != member_seed(0, 1));
    CHECK(member_seed(0, 3) == member_seed(0, 3));
    CHECK(member_seed(1, 3) != member_seed(0, 3));
}

TEST_CASE("identity perturbation gives the deterministic rollout")
{
    const auto fc = small_forecaster();
    const FieldState x0 = initial();
    const EnsembleRun run = run_ensemble(x0, fc, nullptr, small_config(1, 6));
    const auto det = fc.rollout(x0, 6);
    REQUIRE(run.trajectories.size() == 1);
    REQUIRE(run.trajectories[0].size() == 6);
    for (int n = 0; n < 6; ++n) CHECK(run.trajectories[0][n] == det[n]);

    const EnsembleRun many = run_ensemble(x0, fc, nullptr, small_config(3, 4));
    for (int n = 0; n < 4; ++n)
        for (std::size_t k = 0; k < many.at_lead(n)[0]->physical().size(); ++k)
            CHECK(ensemble_spread(many, n).physical()[k] == 0.0);
}

TEST_CASE("runs are bit-identical for the same master seed")
{
    const auto fc = small_forecaster();
    const auto den = small_denoiser();
    const FieldState x0 = initial();
    const auto cfg = small_config(4, 3);
    const EnsembleRun a = run_ensemble(x0, fc, &den, cfg);
    const EnsembleRun b = run_ensemble(x0, fc, &den, cfg);
    CHECK(a.seeds == b.seeds);
    CHECK(a.trajectories == b.trajectories);
    auto other = cfg;
    other.master_seed += 1;
    CHECK(run_ensemble(x0, fc, &den, other).trajectories != a.trajectories);
}

TEST_CASE("each member depends only on its own seed")
{
    const auto fc = small_forecaster();
    const auto den = small_denoiser();
    const FieldState x0 = initial();
    const EnsembleRun big = run_ensemble(x0, fc, &den, small_config(5, 3));
    const EnsembleRun small = run_ensemble(x0, fc, &den, small_config(2, 3));
    for (int b = 0; b < 2; ++b) CHECK(small.trajectories[b] == big.trajectories[b]);
}

TEST_CASE("trajectories share shapes and time indices; members differ")
{
    const auto fc = small_forecaster();
    const auto den = small_denoiser();
    const FieldState x0 = initial();
    const EnsembleRun run = run_ensemble(x0, fc, &den, small_config(6, 5));
    CHECK(run.casualties.empty());
    for (const auto& traj : run.trajectories) {
        REQUIRE(traj.size() == 5);
        for (int n = 0; n < 5; ++n) {
            CHECK(traj[n].shape() == x0.shape());
            CHECK(traj[n].time_index() == x0.time_index() + n + 1);
        }
    }
    double min_rmse = 1e300;
    for (int a = 0; a < 6; ++a)
        for (int b = a + 1; b < 6; ++b) {
            const auto x = run.trajectories[a].back().physical();
            const auto y = run.trajectories[b].back().physical();
            double s = 0.0;
            for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
            min_rmse = std::min(min_rmse, std::sqrt(s / x.size()));
        }
    CHECK(min_rmse > 0.0);
}

TEST_CASE("perturbing only the first step")
{
    const auto fc = small_forecaster();
    const auto den = small_denoiser();
    const FieldState x0 = initial();
    auto cfg = small_config(2, 4);
    cfg.perturb_first_only = true;
    const EnsembleRun run = run_ensemble(x0, fc, &den, cfg);
    for (const auto& traj : run.trajectories) {
        const auto det = fc.rollout(traj[0], 3);
        for (int n = 0; n < 3; ++n) CHECK(traj[n + 1] == det[n]);
    }
}

TEST_CASE("divergent members are dropped and reported")
{
    const auto fc = small_forecaster();
    const auto den = small_denoiser();
    const FragilePredictor fragile(den);
    const FieldState x0 = initial();
    const auto cfg = small_config(12, 2);
    const EnsembleRun run = run_ensemble(x0, fc, &fragile, cfg);
    const EnsembleRun clean = run_ensemble(x0, fc, &den, cfg);
    CHECK_FALSE(run.casualties.empty());
    CHECK(static_cast<int>(run.casualties.size()) < cfg.members);
    for (int b = 0; b < cfg.members; ++b) {
        const bool lost = std::find(run.casualties.begin(), run.casualties.end(), b) != run.casualties.end();
        CHECK(run.alive(b) == !lost);
        if (!lost) CHECK(run.trajectories[b] == clean.trajectories[b]);
    }
    CHECK(run.at_lead(1).size() == cfg.members - run.casualties.size());
    CHECK_NOTHROW(ensemble_mean(run, 1));
}

TEST_CASE("members beyond the divergence bound are dropped")
{
    const auto fc = small_forecaster();
    const auto den = small_denoiser();
    const FieldState x0 = initial();
    auto cfg = small_config(3, 2);
    cfg.divergence_bound = 1e-9;
    const EnsembleRun run = run_ensemble(x0, fc, &den, cfg);
    CHECK(run.casualties == std::vector<int>{0, 1, 2});
    CHECK(run.at_lead(0).empty());
    cfg.divergence_bound = 1e3;
    CHECK(run_ensemble(x0, fc, &den, cfg).casualties.empty());
}

TEST_CASE("ensemble config validation and JSON")
{
    EnsembleConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.members = 0;
    CHECK_THROWS(cfg.validate());
    cfg = EnsembleConfig{};
    cfg.leads = 0;
    CHECK_THROWS(cfg.validate());
    cfg = EnsembleConfig{};
    cfg.divergence_bound = 0.0;
    CHECK_THROWS(cfg.validate());
    cfg = small_config(3, 7);
    cfg.perturb_first_only = true;
    cfg.divergence_bound = 50.0;
    const EnsembleConfig back = EnsembleConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    const auto fc = small_forecaster();
    CHECK_THROWS(run_ensemble(FieldState(GridShape{2, 2, 4, 4}), fc, nullptr, small_config(1, 1)));
    const EnsembleRun run = run_ensemble(initial(), fc, nullptr, small_config(1, 2));
    CHECK_THROWS_AS(run.at_lead(2), std::out_of_range);
}
