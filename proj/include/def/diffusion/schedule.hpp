#pragma once

#include <span>
#include <vector>

#include <json.hpp>

namespace def::diffusion {

/// Variance schedule {beta_t, alpha_t, alpha_bar_t}, t = 1..T, with
/// alpha_bar_0 = 1.
class NoiseSchedule {
public:
    /// betas[k] is beta_{k+1}. Every beta must lie in [0, 1).
    explicit NoiseSchedule(std::vector<double> betas);

    /// Linear betas from `beta_start` to `beta_end` over T steps.
    static NoiseSchedule linear(int T = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

    int steps() const { return static_cast<int>(beta_.size()) - 1; }
    double beta(int t) const;
    double alpha(int t) const;
    double alpha_bar(int t) const;

    /// alpha_bar at a real-valued time in [0, T], linear in log alpha_bar
    /// between integer steps.
    double alpha_bar_at(double t) const;
    /// Half log-SNR, 0.5 * log(alpha_bar / (1 - alpha_bar)), for t in (0, T].
    double lambda_at(double t) const;
    /// Inverse of lambda_at on [1, T].
    double time_at_lambda(double lambda) const;

    nlohmann::json to_json() const;
    static NoiseSchedule from_json(const nlohmann::json& j);

private:
    void check_t(int t) const;

    std::vector<double> beta_;       // index 0 unused (0)
    std::vector<double> alpha_bar_;  // alpha_bar_[0] = 1
    std::vector<double> log_alpha_bar_;
    nlohmann::json origin_;
};

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, elementwise.
void forward_noise(std::span<const double> x0, int t, std::span<const double> eps, const NoiseSchedule& s,
                   std::span<double> out);
std::vector<double> forward_noise(std::span<const double> x0, int t, std::span<const double> eps,
                                  const NoiseSchedule& s);

/// Guided noise (1 + omega) eps_c - omega eps_u.
void cfg_combine(std::span<const double> eps_c, std::span<const double> eps_u, double omega,
                 std::span<double> out);
std::vector<double> cfg_combine(std::span<const double> eps_c, std::span<const double> eps_u, double omega);

}  // namespace def::diffusion
