#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "def/dynamics/advection.hpp"
#include "def/grid/normalization.hpp"
#include "def/nn/network.hpp"

namespace def::forecast {

/// U-Net taking v+f channels to v, without a time embedding.
nn::NetSpec default_forecaster_spec(int vars, int forcings);

/// Deterministic next-state map G. Works on normalized states; the norm
/// stats travel with the model so callers can go back to physical units.
class ForecasterModel {
public:
    ForecasterModel(nn::Network net, NormStats stats, dynamics::DynamicsConfig clock, bool residual = false);

    const nn::Network& network() const { return net_; }
    nn::Network& network() { return net_; }
    const NormStats& stats() const { return stats_; }
    /// Source of the forcing channels (only its shape and periods are used).
    const dynamics::DynamicsConfig& clock() const { return clock_; }
    bool residual() const { return residual_; }
    GridShape shape() const { return clock_.shape(); }
    /// Optimizer steps behind the current parameters (0 for a fresh model).
    std::int64_t trained_steps() const { return trained_steps_; }
    void set_trained_steps(std::int64_t n) { trained_steps_ = n; }

    /// One step: physical channels from the network, forcings recomputed for
    /// time_index + 1. Input must be normalized.
    FieldState step(const FieldState& x) const;
    /// step() for many states in one batched pass. Each result is identical to
    /// the corresponding single step().
    std::vector<FieldState> step_batch(std::span<const FieldState> xs) const;

    /// N successive steps from x0 (x0 itself not included). Throws
    /// NonFiniteError naming the first non-finite step.
    std::vector<FieldState> rollout(const FieldState& x0, int n) const;

    void save(const std::string& path) const;
    static ForecasterModel load(const std::string& path);

private:
    void check(const FieldState& x) const;

    nn::Network net_;
    NormStats stats_;
    dynamics::DynamicsConfig clock_;
    bool residual_ = false;
    std::int64_t trained_steps_ = 0;
};

struct ForecasterTrainConfig {
    int epochs = 30;
    int batch = 32;
    double lr = 1e-3;
    /// Gradient-norm clipping threshold.
    double tau = 1.0;
    std::uint64_t seed = 0;
};

struct ForecasterTraining {
    ForecasterModel model;
    /// Mean training MSE per epoch.
    std::vector<double> loss_curve;
};

/// MSE training on normalized (x_t, x_{t+1}) pairs. Throws NonFiniteError when
/// the loss diverges.
ForecasterTraining train_forecaster(std::span<const Window> pairs, const nn::NetSpec& spec,
                                    const NormStats& stats, const dynamics::DynamicsConfig& clock,
                                    const ForecasterTrainConfig& cfg, bool residual = false);

}  // namespace def::forecast
