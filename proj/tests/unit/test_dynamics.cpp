#include <doctest.h>

#include <cmath>

#include "def/dynamics/advection.hpp"

using namespace def;
using namespace def::dynamics;

namespace {

double channel_mean(const FieldState& s, int c)
{
    double m = 0.0;
    for (double x : s.channel(c)) m += x;
    return m / static_cast<double>(s.channel(c).size());
}

double channel_variance(const FieldState& s, int c)
{
    const double m = channel_mean(s, c);
    double v = 0.0;
    for (double x : s.channel(c)) v += (x - m) * (x - m);
    return v / static_cast<double>(s.channel(c).size());
}

DynamicsConfig quiet_config()
{
    DynamicsConfig cfg;
    cfg.height = 12;
    cfg.width = 10;
    cfg.forcing_amplitude = 0.0;
    cfg.injection = 0.0;
    cfg.coupling = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("default config is valid and matches the desk grid")
{
    DynamicsConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.shape() == GridShape{4, 4, 32, 16});
}

TEST_CASE("stability bound is enforced")
{
    DynamicsConfig cfg;
    cfg.kappa = 0.2;  // channel 3 gets 1.5 * kappa = 0.3 > 0.25
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_THROWS_AS(generate_trajectory(cfg, 3), std::invalid_argument);
    DynamicsConfig fast;
    fast.velocity_u = 0.9;
    CHECK_THROWS_AS(fast.validate(), std::invalid_argument);
    DynamicsConfig neg;
    neg.kappa = -0.1;
    CHECK_THROWS(neg.validate());
    CHECK_THROWS(generate_trajectory(DynamicsConfig{}, 0));
}

TEST_CASE("pure diffusion strictly contracts spatial variance")
{
    DynamicsConfig cfg = quiet_config();
    cfg.velocity_u = cfg.velocity_v = cfg.shear = 0.0;
    cfg.kappa = 0.1;
    const auto traj = generate_trajectory(cfg, 20);
    for (std::size_t t = 1; t < traj.size(); ++t)
        for (int c = 0; c < cfg.vars; ++c) CHECK(channel_variance(traj[t], c) < channel_variance(traj[t - 1], c));
}

TEST_CASE("unit velocity without diffusion is an exact one-cell shift")
{
    DynamicsConfig cfg = quiet_config();
    cfg.velocity_u = 1.0;
    cfg.velocity_v = 0.0;
    cfg.shear = 0.0;
    cfg.kappa = 0.0;
    const FieldState x0 = initial_state(cfg);
    const FieldState x1 = advance(x0, cfg);
    for (int c = 0; c < cfg.vars; ++c)
        for (int i = 0; i < cfg.height; ++i)
            for (int j = 0; j < cfg.width; ++j)
                CHECK(x1.at(c, i, (j + 1) % cfg.width) == x0.at(c, i, j));

    cfg.velocity_u = 0.0;
    cfg.velocity_v = -1.0;
    const FieldState y1 = advance(x0, cfg);
    for (int c = 0; c < cfg.vars; ++c)
        for (int i = 0; i < cfg.height; ++i)
            for (int j = 0; j < cfg.width; ++j)
                CHECK(y1.at(c, (i + cfg.height - 1) % cfg.height, j) == x0.at(c, i, j));
}

TEST_CASE("domain means are conserved with every term switched on")
{
    DynamicsConfig cfg;
    const auto traj = generate_trajectory(cfg, 200);
    for (int c = 0; c < cfg.vars; ++c) {
        const double m0 = channel_mean(traj.front(), c);
        for (const auto& s : traj) CHECK(std::abs(channel_mean(s, c) - m0) <= 1e-10 * std::max(1.0, std::abs(m0)));
    }
}

TEST_CASE("identical seeds give bit-identical trajectories")
{
    DynamicsConfig cfg;
    cfg.height = 16;
    cfg.width = 8;
    const auto a = generate_trajectory(cfg, 30);
    const auto b = generate_trajectory(cfg, 30);
    CHECK(a == b);
    cfg.seed = 2;
    const auto c = generate_trajectory(cfg, 30);
    CHECK_FALSE(a == c);
}

TEST_CASE("trajectory time indices and forcing refresh")
{
    DynamicsConfig cfg;
    const auto traj = generate_trajectory(cfg, 6);
    for (int t = 0; t < 6; ++t) {
        CHECK(traj[t].time_index() == t);
        const auto slab = forcing_channels(t, cfg);
        CHECK(std::equal(slab.begin(), slab.end(), traj[t].forcing().begin()));
        CHECK(traj[t].all_finite());
    }
}

TEST_CASE("forcing channel encodings")
{
    DynamicsConfig cfg;
    const std::size_t P = static_cast<std::size_t>(cfg.height) * cfg.width;
    const auto f0 = forcing_channels(0, cfg);
    for (std::size_t k = 0; k < P; ++k) {
        CHECK(f0[k] == 0.0);
        CHECK(f0[P + k] == 1.0);
        CHECK(f0[2 * P + k] == 0.0);
        CHECK(f0[3 * P + k] == 1.0);
    }
    const auto fq = forcing_channels(static_cast<int>(cfg.day_period / 4), cfg);
    for (std::size_t k = 0; k < P; ++k) CHECK(fq[k] == doctest::Approx(1.0).epsilon(1e-15));
    for (int t = 0; t < 3000; t += 37) {
        const auto f = forcing_channels(t, cfg);
        for (int pair = 0; pair < 2; ++pair) {
            const double s = f[(2 * pair) * P];
            const double c = f[(2 * pair + 1) * P];
            CHECK(s * s + c * c == doctest::Approx(1.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("config JSON round trip")
{
    DynamicsConfig cfg;
    cfg.seed = 99;
    cfg.injection = 0.1;
    const DynamicsConfig back = DynamicsConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
}
