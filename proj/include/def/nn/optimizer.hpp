#pragma once

#include <cstdint>
#include <vector>

#include "def/nn/param_store.hpp"

namespace def::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::size_t n_params, AdamConfig cfg);

    /// One update from the gradients currently in `store`.
    void step(ParamStore& store);

    const AdamConfig& config() const { return cfg_; }
    std::int64_t steps() const { return t_; }

private:
    AdamConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::int64_t t_ = 0;
};

/// Rescales gradients by 1 / max(1, ||g||_2 / tau). Returns the norm before
/// rescaling. Throws NonFiniteError when any gradient is NaN or Inf.
double clip_gradients(ParamStore& store, double tau);

/// Clip with threshold `tau`, then one Adam step. Returns the pre-clip norm.
double clip_and_step(ParamStore& store, Adam& opt, double tau);

}  // namespace def::nn
