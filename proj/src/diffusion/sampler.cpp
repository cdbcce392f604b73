#include "def/diffusion/sampler.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "def/nn/batch.hpp"
#include "def/util/seed.hpp"

namespace def::diffusion {

namespace {

struct SampleRngs {
    std::vector<std::mt19937_64> engines;
    std::normal_distribution<double> normal{0.0, 1.0};

    explicit SampleRngs(std::span<const std::uint64_t> seeds) : engines(seeds.begin(), seeds.end()) {}

    // Fills t with N(0,1) noise; sample n consumes only engines[n], channel by channel.
    void fill(nn::Tensor& t)
    {
        const std::size_t P = t.pixels();
        for (int n = 0; n < t.batch; ++n) {
            normal.reset();
            for (int c = 0; c < t.channels; ++c) {
                double* p = t.plane(c, n);
                for (std::size_t k = 0; k < P; ++k) p[k] = normal(engines[n]);
            }
        }
    }
};

void check_cond(const nn::Tensor& cond, std::span<const std::uint64_t> seeds)
{
    if (cond.batch < 1) throw ShapeError("sampler: empty batch");
    if (seeds.size() != static_cast<std::size_t>(cond.batch))
        throw ShapeError("sampler: need one seed per sample");
}

void require_finite(const nn::Tensor& t, const char* what, int step)
{
    for (double x : t.data)
        if (!std::isfinite(x))
            throw NonFiniteError(std::string(what) + ": non-finite state at step " + std::to_string(step));
}

}  // namespace

std::string to_string(Solver s)
{
    return s == Solver::Ancestral ? "ancestral" : "dpm2m";
}

Solver solver_from_string(const std::string& s)
{
    if (s == "ancestral") return Solver::Ancestral;
    if (s == "dpm2m") return Solver::Dpm2m;
    throw std::invalid_argument("unknown solver '" + s + "' (expected ancestral or dpm2m)");
}

void GuidanceConfig::validate(int T) const
{
    if (!(omega >= 0.0) || !std::isfinite(omega)) throw std::invalid_argument("GuidanceConfig: omega must be >= 0");
    if (walks < 1) throw std::invalid_argument("GuidanceConfig: walks must be >= 1");
    if (steps < 1 || steps > T)
        throw std::invalid_argument("GuidanceConfig: solver steps must lie in [1, " + std::to_string(T) + "]");
}

nlohmann::json GuidanceConfig::to_json() const
{
    return {{"omega", omega}, {"walks", walks}, {"solver", to_string(solver)}, {"steps", steps}};
}

GuidanceConfig GuidanceConfig::from_json(const nlohmann::json& j)
{
    GuidanceConfig g;
    g.omega = j.value("omega", g.omega);
    g.walks = j.value("walks", g.walks);
    g.solver = solver_from_string(j.value("solver", to_string(g.solver)));
    g.steps = j.value("steps", g.steps);
    return g;
}

std::string GuidanceConfig::label() const
{
    std::ostringstream os;
    os << "Diffusion[" << omega << ", " << walks << "]";
    return os.str();
}

nn::Tensor guided_noise(const NoisePredictor& model, const nn::Tensor& z, const nn::Tensor& cond, double omega,
                        std::span<const double> t)
{
    nn::Tensor eps_c = model.predict(z, &cond, t);
    if (omega == 0.0) return eps_c;
    const nn::Tensor eps_u = model.predict(z, nullptr, t);
    nn::Tensor out = eps_c;
    cfg_combine(eps_c.data, eps_u.data, omega, out.data);
    return out;
}

nn::Tensor sample_ancestral(const NoisePredictor& model, const nn::Tensor& cond, double omega,
                            std::span<const std::uint64_t> seeds)
{
    check_cond(cond, seeds);
    const NoiseSchedule& s = model.schedule();
    SampleRngs rngs(seeds);
    nn::Tensor z(cond.channels, cond.batch, cond.height, cond.width);
    rngs.fill(z);
    nn::Tensor noise = z;
    std::vector<double> times(cond.batch);
    for (int t = s.steps(); t >= 1; --t) {
        std::fill(times.begin(), times.end(), static_cast<double>(t));
        const nn::Tensor eps = guided_noise(model, z, cond, omega, times);
        const double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
        const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
        for (std::size_t k = 0; k < z.size(); ++k) z.data[k] = inv_sqrt_alpha * (z.data[k] - coef * eps.data[k]);
        if (t > 1) {
            rngs.fill(noise);
            const double sigma = std::sqrt(s.beta(t));
            for (std::size_t k = 0; k < z.size(); ++k) z.data[k] += sigma * noise.data[k];
        }
        require_finite(z, "sample_ancestral", t);
    }
    return z;
}

nn::Tensor sample_dpm2m(const NoisePredictor& model, const nn::Tensor& cond, double omega, int steps,
                        std::span<const std::uint64_t> seeds)
{
    check_cond(cond, seeds);
    const NoiseSchedule& s = model.schedule();
    const int T = s.steps();
    if (steps < 1 || steps > T) throw std::invalid_argument("sample_dpm2m: T' must lie in [1, T]");

    const double lambda_start = s.lambda_at(T);
    const double lambda_end = s.lambda_at(1.0);
    std::vector<double> grid_t(steps + 1);
    std::vector<double> grid_lambda(steps + 1);
    for (int i = 0; i <= steps; ++i) {
        grid_lambda[i] = lambda_start + (lambda_end - lambda_start) * i / steps;
        grid_t[i] = s.time_at_lambda(grid_lambda[i]);
    }
    grid_t.front() = T;
    grid_t.back() = 1.0;
    grid_lambda.front() = lambda_start;
    grid_lambda.back() = lambda_end;

    SampleRngs rngs(seeds);
    nn::Tensor x(cond.channels, cond.batch, cond.height, cond.width);
    rngs.fill(x);
    nn::Tensor x0_prev;
    double h_prev = 0.0;
    std::vector<double> times(cond.batch);
    for (int i = 1; i <= steps; ++i) {
        const double ts = grid_t[i - 1];
        const double tt = grid_t[i];
        const double alpha_s = std::sqrt(s.alpha_bar_at(ts));
        const double sigma_s = std::sqrt(1.0 - s.alpha_bar_at(ts));
        const double alpha_t = std::sqrt(s.alpha_bar_at(tt));
        const double sigma_t = std::sqrt(1.0 - s.alpha_bar_at(tt));
        const double h = grid_lambda[i] - grid_lambda[i - 1];

        std::fill(times.begin(), times.end(), ts);
        const nn::Tensor eps = guided_noise(model, x, cond, omega, times);
        nn::Tensor x0 = eps;
        for (std::size_t k = 0; k < x.size(); ++k) x0.data[k] = (x.data[k] - sigma_s * eps.data[k]) / alpha_s;

        const double phi = std::expm1(-h);  // e^{-h} - 1
        const double ratio = sigma_t / sigma_s;
        if (i == 1) {
            for (std::size_t k = 0; k < x.size(); ++k) x.data[k] = ratio * x.data[k] - alpha_t * phi * x0.data[k];
        } else {
            const double r = h_prev / h;
            const double c0 = 1.0 + 1.0 / (2.0 * r);
            const double c1 = 1.0 / (2.0 * r);
            for (std::size_t k = 0; k < x.size(); ++k) {
                const double d = c0 * x0.data[k] - c1 * x0_prev.data[k];
                x.data[k] = ratio * x.data[k] - alpha_t * phi * d;
            }
        }
        require_finite(x, "sample_dpm2m", i);
        x0_prev = std::move(x0);
        h_prev = h;
    }
    return x;
}

nn::Tensor sample(const NoisePredictor& model, const nn::Tensor& cond, const GuidanceConfig& cfg,
                  std::span<const std::uint64_t> seeds)
{
    cfg.validate(model.schedule().steps());
    if (cfg.solver == Solver::Ancestral) return sample_ancestral(model, cond, cfg.omega, seeds);
    return sample_dpm2m(model, cond, cfg.omega, cfg.steps, seeds);
}

std::uint64_t walk_seed(std::uint64_t seed, int k)
{
    return derive_seed(seed, static_cast<std::uint64_t>(k));
}

std::vector<FieldState> perturb_batch(const NoisePredictor& model, std::span<const FieldState> xs,
                                      const GuidanceConfig& cfg, std::span<const std::uint64_t> seeds,
                                      const WalkLog& log)
{
    if (xs.empty()) return {};
    if (seeds.size() != xs.size()) throw ShapeError("perturb: need one seed per state");
    cfg.validate(model.schedule().steps());
    const GridShape shape = xs.front().shape();
    for (const auto& x : xs) require_same_shape(x.shape(), shape, "perturb");

    nn::Tensor cond = nn::pack(xs, 0, shape.vars);
    std::vector<std::uint64_t> call_seeds(xs.size());
    for (int k = 0; k < cfg.walks; ++k) {
        for (std::size_t n = 0; n < xs.size(); ++n) call_seeds[n] = walk_seed(seeds[n], k);
        if (log) log(k, call_seeds);
        cond = sample(model, cond, cfg, call_seeds);
    }

    std::vector<FieldState> out;
    out.reserve(xs.size());
    for (std::size_t n = 0; n < xs.size(); ++n) {
        FieldState y = xs[n];
        nn::unpack(cond, static_cast<int>(n), y.physical());
        out.push_back(std::move(y));
    }
    return out;
}

FieldState perturb(const NoisePredictor& model, const FieldState& x, const GuidanceConfig& cfg, std::uint64_t seed)
{
    return perturb_batch(model, std::span(&x, 1), cfg, std::span(&seed, 1)).front();
}

}  // namespace def::diffusion
