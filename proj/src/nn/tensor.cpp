#include "def/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "def/nn/param_store.hpp"

namespace def::nn {

Tensor::Tensor(int c, int n, int h, int w, double fill)
    : channels(c), batch(n), height(h), width(w)
{
    if (c < 0 || n < 0 || h < 0 || w < 0) throw std::invalid_argument("Tensor: negative extent");
    data.assign(static_cast<std::size_t>(c) * n * h * w, fill);
}

std::string Tensor::shape_str() const
{
    return "[" + std::to_string(channels) + "," + std::to_string(batch) + "," +
           std::to_string(height) + "," + std::to_string(width) + "]";
}

ParamRef ParamStore::add(std::string name, std::size_t size)
{
    ParamRef ref{values_.size(), size};
    values_.resize(values_.size() + size, 0.0);
    grads_.resize(values_.size(), 0.0);
    entries_.push_back({std::move(name), ref});
    return ref;
}

void ParamStore::zero_grad()
{
    std::fill(grads_.begin(), grads_.end(), 0.0);
}

double ParamStore::grad_norm() const
{
    double s = 0.0;
    for (double g : grads_) s += g * g;
    return std::sqrt(s);
}

bool ParamStore::all_finite() const
{
    auto finite = [](double x) { return std::isfinite(x); };
    return std::all_of(values_.begin(), values_.end(), finite) &&
           std::all_of(grads_.begin(), grads_.end(), finite);
}

}  // namespace def::nn
