#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "def/nn/ops.hpp"

namespace def::nn {

enum class Activation { SiLU, Tanh };

struct Stage {
    int channels = 0;
    bool downsample = false;

    bool operator==(const Stage&) const = default;
};

/// Shape of a periodic U-Net: an encoder with one residual block per stage
/// (optionally preceded by 2x2 pooling), optional self-attention at the
/// coarsest level, and a mirrored decoder fed by skip connections.
struct NetSpec {
    int in_channels = 0;
    int out_channels = 0;
    std::vector<Stage> stages;
    Activation activation = Activation::SiLU;
    /// Width of the sinusoidal timestep embedding; 0 disables it.
    int time_embed_width = 0;
    /// Blocks scale as well as shift their activations by the embedding.
    bool time_scale_shift = false;
    bool attention = false;

    void validate() const;
    /// Grid extents must be divisible by this.
    int downsample_factor() const;

    nlohmann::json to_json() const;
    static NetSpec from_json(const nlohmann::json& j);

    bool operator==(const NetSpec&) const = default;
};

/// Interleaved sinusoidal embedding: e[2k] = sin(t f_k), e[2k+1] = cos(t f_k),
/// f_k = 10000^(-2k/width).
std::vector<double> time_embedding(double t, int width);

class Network {
public:
    /// Random initialisation from `init_seed`. With `zero_output` the final
    /// convolution starts at zero, so the untrained network outputs zeros.
    Network(NetSpec spec, std::uint64_t init_seed, bool zero_output = false);

    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept;
    Network& operator=(Network&&) noexcept;
    ~Network();

    const NetSpec& spec() const { return spec_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Appends the network to `g`. `times` holds one timestep per sample
    /// and must be empty iff the time embedding is disabled.
    Var build(Graph& g, const Var& x, std::span<const double> times) const;

    /// Forward pass that keeps activations for a following backward().
    Tensor forward(const Tensor& x, std::span<const double> times = {});
    /// Accumulates parameter gradients of <upstream, output> into params().
    void backward(const Tensor& upstream);

    /// Stateless forward pass; safe to call concurrently on a shared network.
    Tensor infer(const Tensor& x, std::span<const double> times = {}) const;

private:
    struct ResBlock {
        ConvLayer conv1;
        ConvLayer conv2;
        std::optional<ConvLayer> temb;
        std::optional<ConvLayer> tscale;
        std::optional<ConvLayer> skip;
    };
    struct AttnBlock {
        ConvLayer q, k, v, proj;
    };
    struct Cache;

    ResBlock make_block(const std::string& name, int in, int out);
    Var run_block(Graph& g, const ResBlock& b, const Var& h, const Var* temb) const;
    Var act(Graph& g, const Var& x) const;
    void check_input(const Tensor& x, std::span<const double> times) const;

    NetSpec spec_;
    ParamStore params_;
    ConvLayer stem_;
    std::vector<ResBlock> down_;
    std::vector<ResBlock> up_;
    std::optional<AttnBlock> attn_;
    std::optional<ConvLayer> time_mlp_;
    ConvLayer head_;
    std::unique_ptr<Cache> cache_;
};

}  // namespace def::nn
