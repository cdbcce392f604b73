#include "def/diffusion/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "def/grid/field_state.hpp"

namespace def::diffusion {

NoiseSchedule::NoiseSchedule(std::vector<double> betas)
{
    if (betas.empty()) throw std::invalid_argument("NoiseSchedule: T must be >= 1");
    beta_.assign(1, 0.0);
    alpha_bar_.assign(1, 1.0);
    log_alpha_bar_.assign(1, 0.0);
    for (double b : betas) {
        if (!(b >= 0.0 && b < 1.0)) throw std::invalid_argument("NoiseSchedule: beta outside [0, 1)");
        beta_.push_back(b);
        log_alpha_bar_.push_back(log_alpha_bar_.back() + std::log1p(-b));
        alpha_bar_.push_back(std::exp(log_alpha_bar_.back()));
    }
    origin_ = {{"kind", "explicit"}, {"betas", betas}};
}

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end)
{
    if (T < 1) throw std::invalid_argument("NoiseSchedule: T must be >= 1");
    std::vector<double> betas(T);
    for (int k = 0; k < T; ++k)
        betas[k] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * k / (T - 1.0);
    NoiseSchedule s(std::move(betas));
    s.origin_ = {{"kind", "linear"}, {"T", T}, {"beta_start", beta_start}, {"beta_end", beta_end}};
    return s;
}

void NoiseSchedule::check_t(int t) const
{
    if (t < 0 || t > steps())
        throw std::out_of_range("NoiseSchedule: t=" + std::to_string(t) + " outside [0, " +
                                std::to_string(steps()) + "]");
}

double NoiseSchedule::beta(int t) const
{
    check_t(t);
    return beta_[t];
}

double NoiseSchedule::alpha(int t) const
{
    return 1.0 - beta(t);
}

double NoiseSchedule::alpha_bar(int t) const
{
    check_t(t);
    return alpha_bar_[t];
}

double NoiseSchedule::alpha_bar_at(double t) const
{
    if (!(t >= 0.0 && t <= steps())) throw std::out_of_range("NoiseSchedule: continuous t out of range");
    const int k = std::min(static_cast<int>(t), steps() - 1);
    const double frac = t - k;
    return std::exp(log_alpha_bar_[k] + frac * (log_alpha_bar_[k + 1] - log_alpha_bar_[k]));
}

double NoiseSchedule::lambda_at(double t) const
{
    const double ab = alpha_bar_at(t);
    return 0.5 * (std::log(ab) - std::log1p(-ab));
}

double NoiseSchedule::time_at_lambda(double lambda) const
{
    // alpha_bar / (1 - alpha_bar) = e^{2 lambda}  =>  log alpha_bar = -log(1 + e^{-2 lambda})
    const double target = -std::log1p(std::exp(-2.0 * lambda));
    const int T = steps();
    if (target >= log_alpha_bar_[1]) return 1.0;
    if (target <= log_alpha_bar_[T]) return T;
    // log_alpha_bar_ is non-increasing; find k with la[k] >= target > la[k+1].
    auto it = std::upper_bound(log_alpha_bar_.begin() + 1, log_alpha_bar_.end(), target,
                               [](double value, double elem) { return value > elem; });
    const int k1 = static_cast<int>(it - log_alpha_bar_.begin());
    const int k = k1 - 1;
    const double span = log_alpha_bar_[k] - log_alpha_bar_[k1];
    if (span <= 0.0) return k;
    return k + (log_alpha_bar_[k] - target) / span;
}

nlohmann::json NoiseSchedule::to_json() const
{
    return origin_;
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j)
{
    const std::string kind = j.value("kind", "linear");
    if (kind == "linear")
        return linear(j.value("T", 1000), j.value("beta_start", 1e-4), j.value("beta_end", 2e-2));
    if (kind == "explicit") return NoiseSchedule(j.at("betas").get<std::vector<double>>());
    throw std::invalid_argument("NoiseSchedule: unknown kind '" + kind + "'");
}

void forward_noise(std::span<const double> x0, int t, std::span<const double> eps, const NoiseSchedule& s,
                   std::span<double> out)
{
    if (t < 1 || t > s.steps())
        throw std::out_of_range("forward_noise: t=" + std::to_string(t) + " outside [1, T]");
    if (eps.size() != x0.size() || out.size() != x0.size())
        throw ShapeError("forward_noise: x0, eps and output sizes differ");
    const double a = std::sqrt(s.alpha_bar(t));
    const double b = std::sqrt(1.0 - s.alpha_bar(t));
    for (std::size_t k = 0; k < x0.size(); ++k) out[k] = a * x0[k] + b * eps[k];
}

std::vector<double> forward_noise(std::span<const double> x0, int t, std::span<const double> eps,
                                  const NoiseSchedule& s)
{
    std::vector<double> out(x0.size());
    forward_noise(x0, t, eps, s, out);
    return out;
}

void cfg_combine(std::span<const double> eps_c, std::span<const double> eps_u, double omega,
                 std::span<double> out)
{
    if (eps_u.size() != eps_c.size() || out.size() != eps_c.size())
        throw ShapeError("cfg_combine: size mismatch");
    if (omega == 0.0) {
        std::copy(eps_c.begin(), eps_c.end(), out.begin());
        return;
    }
    // Same value as (1 + omega) eps_c - omega eps_u, written so that eps_c == eps_u
    // returns eps_c bit-for-bit.
    for (std::size_t k = 0; k < eps_c.size(); ++k) out[k] = eps_c[k] + omega * (eps_c[k] - eps_u[k]);
}

std::vector<double> cfg_combine(std::span<const double> eps_c, std::span<const double> eps_u, double omega)
{
    std::vector<double> out(eps_c.size());
    cfg_combine(eps_c, eps_u, omega, out);
    return out;
}

}  // namespace def::diffusion
