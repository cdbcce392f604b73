#include "def/nn/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "def/grid/field_state.hpp"

namespace def::nn {

Adam::Adam(std::size_t n_params, AdamConfig cfg) : cfg_(cfg), m_(n_params, 0.0), v_(n_params, 0.0)
{
    if (!(cfg.lr > 0.0)) throw std::invalid_argument("Adam: learning rate must be positive");
}

void Adam::step(ParamStore& store)
{
    if (store.size() != m_.size()) throw std::invalid_argument("Adam: parameter count changed");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto w = store.values();
    auto g = store.grads();
    for (std::size_t i = 0; i < w.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m_[i] / c1;
        const double vhat = v_[i] / c2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
}

double clip_gradients(ParamStore& store, double tau)
{
    if (!(tau > 0.0)) throw std::invalid_argument("clip_gradients: tau must be positive");
    const double norm = store.grad_norm();
    if (!std::isfinite(norm)) throw NonFiniteError("clip_gradients: non-finite gradient");
    const double scale = 1.0 / std::max(1.0, norm / tau);
    if (scale != 1.0)
        for (double& g : store.grads()) g *= scale;
    return norm;
}

double clip_and_step(ParamStore& store, Adam& opt, double tau)
{
    const double norm = clip_gradients(store, tau);
    opt.step(store);
    return norm;
}

}  // namespace def::nn
