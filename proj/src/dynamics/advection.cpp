#include "def/dynamics/advection.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>

#include "def/util/seed.hpp"

namespace def::dynamics {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Loosely shaped after temperature (K), surface pressure (hPa), wind (m/s)
// and specific humidity (g/kg).
constexpr double kOffsets[4] = {288.0, 1013.0, 5.0, 8.0};
constexpr double kScales[4] = {10.0, 8.0, 4.0, 2.0};

int wrap(int i, int n)
{
    return (i % n + n) % n;
}

// Adds amp * exp(-d^2 / 2r^2) centred at (ci, cj) with periodic distance.
void add_bump(std::span<double> field, int H, int W, double amp, double ci, double cj, double radius)
{
    for (int i = 0; i < H; ++i) {
        double di = std::abs(i - ci);
        di = std::min(di, H - di);
        for (int j = 0; j < W; ++j) {
            double dj = std::abs(j - cj);
            dj = std::min(dj, W - dj);
            field[i * W + j] += amp * std::exp(-(di * di + dj * dj) / (2.0 * radius * radius));
        }
    }
}

}  // namespace

double channel_offset(int c)
{
    return kOffsets[c % 4];
}

double channel_scale(int c)
{
    return kScales[c % 4];
}

double DynamicsConfig::channel_kappa(int c) const
{
    if (vars <= 1) return kappa;
    return kappa * (0.5 + static_cast<double>(c) / (vars - 1));
}

void DynamicsConfig::validate() const
{
    if (height <= 0 || width <= 0 || vars <= 0)
        throw std::invalid_argument("DynamicsConfig: grid and channel counts must be positive");
    if (forcings != 0 && forcings != 2 && forcings != 4)
        throw std::invalid_argument("DynamicsConfig: forcings must be 0, 2 or 4");
    if (kappa < 0.0) throw std::invalid_argument("DynamicsConfig: kappa must be >= 0");
    if (injection < 0.0) throw std::invalid_argument("DynamicsConfig: injection must be >= 0");
    if (coupling < 0.0) throw std::invalid_argument("DynamicsConfig: coupling must be >= 0");
    if (day_period <= 0.0 || year_period <= 0.0)
        throw std::invalid_argument("DynamicsConfig: forcing periods must be positive");
    double max_kappa = 0.0;
    for (int c = 0; c < vars; ++c) max_kappa = std::max(max_kappa, channel_kappa(c));
    if (max_kappa > 0.25)
        throw std::invalid_argument("DynamicsConfig: diffusion stability bound kappa*dt/dx^2 <= 0.25 violated");
    // Positive-coefficient bound for the combined explicit update.
    const double budget = std::abs(velocity_u) + std::abs(shear) + std::abs(velocity_v) +
                          4.0 * max_kappa + 2.0 * coupling;
    if (budget > 1.0 + 1e-12)
        throw std::invalid_argument("DynamicsConfig: advection/diffusion step is unstable (|u|+|shear|+|v|+4*kappa+2*coupling > 1)");
}

nlohmann::json DynamicsConfig::to_json() const
{
    return {{"height", height},
            {"width", width},
            {"vars", vars},
            {"forcings", forcings},
            {"velocity_u", velocity_u},
            {"velocity_v", velocity_v},
            {"shear", shear},
            {"kappa", kappa},
            {"coupling", coupling},
            {"forcing_amplitude", forcing_amplitude},
            {"injection", injection},
            {"day_period", day_period},
            {"year_period", year_period},
            {"seed", seed}};
}

DynamicsConfig DynamicsConfig::from_json(const nlohmann::json& j)
{
    DynamicsConfig c;
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.vars = j.value("vars", c.vars);
    c.forcings = j.value("forcings", c.forcings);
    c.velocity_u = j.value("velocity_u", c.velocity_u);
    c.velocity_v = j.value("velocity_v", c.velocity_v);
    c.shear = j.value("shear", c.shear);
    c.kappa = j.value("kappa", c.kappa);
    c.coupling = j.value("coupling", c.coupling);
    c.forcing_amplitude = j.value("forcing_amplitude", c.forcing_amplitude);
    c.injection = j.value("injection", c.injection);
    c.day_period = j.value("day_period", c.day_period);
    c.year_period = j.value("year_period", c.year_period);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

std::vector<double> forcing_channels(int time_index, const DynamicsConfig& cfg)
{
    const std::size_t plane = static_cast<std::size_t>(cfg.height) * cfg.width;
    std::vector<double> slab(static_cast<std::size_t>(cfg.forcings) * plane);
    const double periods[2] = {cfg.day_period, cfg.year_period};
    for (int k = 0; k < cfg.forcings; ++k) {
        const double phase = kTwoPi * time_index / periods[k / 2];
        const double value = (k % 2 == 0) ? std::sin(phase) : std::cos(phase);
        std::fill(slab.begin() + k * plane, slab.begin() + (k + 1) * plane, value);
    }
    return slab;
}

void fill_forcings(FieldState& state, const DynamicsConfig& cfg)
{
    if (state.shape().forcings != cfg.forcings || state.shape().height != cfg.height ||
        state.shape().width != cfg.width)
        throw ShapeError("fill_forcings: state " + state.shape().str() +
                         " does not match dynamics config");
    const auto slab = forcing_channels(state.time_index(), cfg);
    std::copy(slab.begin(), slab.end(), state.forcing().begin());
}

FieldState initial_state(const DynamicsConfig& cfg)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    FieldState state(cfg.shape(), 0);
    constexpr int kBumps = 6;
    for (int c = 0; c < cfg.vars; ++c) {
        auto field = state.channel(c);
        std::fill(field.begin(), field.end(), channel_offset(c));
        for (int b = 0; b < kBumps; ++b) {
            const double amp = normal(rng) * channel_scale(c);
            const double ci = uniform(rng) * cfg.height;
            const double cj = uniform(rng) * cfg.width;
            const double radius = 2.0 + 3.0 * uniform(rng);
            add_bump(field, cfg.height, cfg.width, amp, ci, cj, radius);
        }
    }
    fill_forcings(state, cfg);
    return state;
}

FieldState advance(const FieldState& state, const DynamicsConfig& cfg)
{
    require_same_shape(state.shape(), cfg.shape(), "advance");
    const int H = cfg.height;
    const int W = cfg.width;
    const std::size_t plane = state.shape().plane();

    FieldState next(cfg.shape(), state.time_index() + 1);

    // Anomalies for inter-channel coupling.
    std::vector<double> means(cfg.vars, 0.0);
    for (int c = 0; c < cfg.vars; ++c) {
        double s = 0.0;
        for (double x : state.channel(c)) s += x;
        means[c] = s / static_cast<double>(plane);
    }

    // Zero-mean source pattern modulated by the day and year clocks.
    const double t = state.time_index();
    const double year_mod = 1.0 + 0.5 * std::sin(kTwoPi * t / cfg.year_period);

    std::vector<double> pattern(plane);
    for (int c = 0; c < cfg.vars; ++c) {
        const auto q = state.channel(c);
        auto out = next.channel(c);
        const double kap = cfg.channel_kappa(c);

        double pattern_mean = 0.0;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const double p = std::cos(kTwoPi * i / H + 0.7 * c) * std::sin(kTwoPi * j / W + 1.3 * c) +
                                 0.5 * std::sin(kTwoPi * 2.0 * i / H + 0.4 * c);
                pattern[i * W + j] = p;
                pattern_mean += p;
            }
        pattern_mean /= static_cast<double>(plane);
        const double source = cfg.forcing_amplitude * channel_scale(c) * year_mod *
                              std::sin(kTwoPi * t / cfg.day_period + 0.5 * c);

        const int up = wrap(c + 1, cfg.vars);
        const int down = wrap(c - 1, cfg.vars);
        const auto q_up = state.channel(up);
        const auto q_down = state.channel(down);

        for (int i = 0; i < H; ++i) {
            // Face velocity along j for this row; divergence free since it
            // does not depend on j.
            const double u = cfg.velocity_u + cfg.shear * std::sin(kTwoPi * (i + 0.5) / H);
            const double v = cfg.velocity_v;
            const int ip = wrap(i + 1, H);
            const int im = wrap(i - 1, H);
            for (int j = 0; j < W; ++j) {
                const int jp = wrap(j + 1, W);
                const int jm = wrap(j - 1, W);
                const double qc = q[i * W + j];

                auto flux_x = [&](int jl, int jr) {
                    return u > 0.0 ? u * q[i * W + jl] : u * q[i * W + jr];
                };
                auto flux_y = [&](int il, int ir) {
                    return v > 0.0 ? v * q[il * W + j] : v * q[ir * W + j];
                };
                const double advect = (flux_x(j, jp) - flux_x(jm, j)) + (flux_y(i, ip) - flux_y(im, i));

                const double lap = q[ip * W + j] + q[im * W + j] + q[i * W + jp] + q[i * W + jm] - 4.0 * qc;

                double couple = 0.0;
                if (cfg.vars > 1) {
                    const std::size_t k = static_cast<std::size_t>(i) * W + j;
                    couple = cfg.coupling * ((q_up[k] - means[up]) + (q_down[k] - means[down]) -
                                             2.0 * (qc - means[c]));
                }

                out[i * W + j] = qc - advect + kap * lap + couple +
                                 source * (pattern[i * W + j] - pattern_mean);
            }
        }
    }
    if (cfg.injection > 0.0) {
        std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(state.time_index())));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        std::vector<double> bump(plane);
        for (int c = 0; c < cfg.vars; ++c) {
            std::fill(bump.begin(), bump.end(), 0.0);
            const double amp = cfg.injection * channel_scale(c) * normal(rng);
            const double ci = uniform(rng) * H;
            const double cj = uniform(rng) * W;
            add_bump(bump, H, W, amp, ci, cj, 2.0 + 2.0 * uniform(rng));
            double mean = 0.0;
            for (double b : bump) mean += b;
            mean /= static_cast<double>(plane);
            auto out = next.channel(c);
            for (std::size_t k = 0; k < plane; ++k) out[k] += bump[k] - mean;
        }
    }
    fill_forcings(next, cfg);
    return next;
}

std::vector<FieldState> generate_trajectory(const DynamicsConfig& cfg, int n_steps)
{
    if (n_steps < 1) throw std::invalid_argument("generate_trajectory: n_steps must be >= 1");
    cfg.validate();
    std::vector<FieldState> states;
    states.reserve(n_steps);
    states.push_back(initial_state(cfg));
    for (int k = 1; k < n_steps; ++k) states.push_back(advance(states.back(), cfg));
    return states;
}

}  // namespace def::dynamics
