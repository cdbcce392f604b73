#pragma once

#include <optional>
#include <random>
#include <string>

#include "def/nn/autograd.hpp"

namespace def::nn {

/// Periodic (circular padding) 2D convolution, odd square kernel, stride 1.
/// Cross-correlation convention:
///   y[o,n,i,j] = b[o] + sum_{c,a,b} w[o,c,a,b] * x[c,n,i+a-r,j+b-r],  r = k/2,
/// with indices wrapped modulo the grid.
struct ConvLayer {
    int in = 0;
    int out = 0;
    int kernel = 1;
    ParamRef weight;
    std::optional<ParamRef> bias;

    static ConvLayer create(ParamStore& store, const std::string& name, int in, int out, int kernel,
                            bool with_bias);
    /// Uniform(-a, a) with a = gain * sqrt(3 / fan_in); biases zero.
    void init(ParamStore& store, std::mt19937_64& rng, double gain = 1.0) const;
    void zero(ParamStore& store) const;
};

Var conv2d(Graph& g, const ParamStore& params, const ConvLayer& layer, const Var& x);

Var silu(Graph& g, const Var& x);
Var tanh_act(Graph& g, const Var& x);

Var add(Graph& g, const Var& a, const Var& b);
/// x (C,N,H,W) + e (C,N,1,1) broadcast over the grid.
Var add_broadcast(Graph& g, const Var& x, const Var& e);
/// x * (1 + s) + b with s, b (C,N,1,1) broadcast over the grid.
Var scale_shift(Graph& g, const Var& x, const Var& s, const Var& b);

/// 2x2 average pooling; height and width must be even.
Var avg_pool2(Graph& g, const Var& x);
/// Nearest-neighbour 2x upsampling.
Var upsample2(Graph& g, const Var& x);
/// Channel concatenation [a; b].
Var concat(Graph& g, const Var& a, const Var& b);

/// Per-sample softmax self-attention over grid positions:
///   out[:, i] = sum_j softmax_j(q[:, i] . k[:, j] / sqrt(C)) v[:, j]
Var attention(Graph& g, const Var& q, const Var& k, const Var& v);

/// Mean of squared differences over every element; a (1,1,1,1) tensor.
Var mse(Graph& g, const Var& pred, const Tensor& target);

}  // namespace def::nn
