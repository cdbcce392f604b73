#include "def/nn/network.hpp"

#include <cmath>
#include <stdexcept>

namespace def::nn {

void NetSpec::validate() const
{
    if (in_channels <= 0 || out_channels <= 0)
        throw std::invalid_argument("NetSpec: channel counts must be positive");
    if (stages.empty()) throw std::invalid_argument("NetSpec: at least one stage is required");
    for (const auto& s : stages)
        if (s.channels <= 0) throw std::invalid_argument("NetSpec: stage channels must be positive");
    if (time_embed_width < 0 || time_embed_width % 2 != 0)
        throw std::invalid_argument("NetSpec: time embedding width must be even and >= 0");
    if (time_scale_shift && time_embed_width == 0)
        throw std::invalid_argument("NetSpec: time_scale_shift needs a time embedding");
}

int NetSpec::downsample_factor() const
{
    int f = 1;
    for (const auto& s : stages)
        if (s.downsample) f *= 2;
    return f;
}

nlohmann::json NetSpec::to_json() const
{
    nlohmann::json st = nlohmann::json::array();
    for (const auto& s : stages) st.push_back({{"channels", s.channels}, {"downsample", s.downsample}});
    return {{"in_channels", in_channels},
            {"out_channels", out_channels},
            {"stages", st},
            {"activation", activation == Activation::SiLU ? "silu" : "tanh"},
            {"time_embed_width", time_embed_width},
            {"time_scale_shift", time_scale_shift},
            {"attention", attention}};
}

NetSpec NetSpec::from_json(const nlohmann::json& j)
{
    NetSpec s;
    s.in_channels = j.at("in_channels").get<int>();
    s.out_channels = j.at("out_channels").get<int>();
    for (const auto& st : j.at("stages"))
        s.stages.push_back({st.at("channels").get<int>(), st.at("downsample").get<bool>()});
    const auto act = j.value("activation", std::string("silu"));
    if (act == "silu")
        s.activation = Activation::SiLU;
    else if (act == "tanh")
        s.activation = Activation::Tanh;
    else
        throw std::invalid_argument("NetSpec: unknown activation '" + act + "'");
    s.time_embed_width = j.value("time_embed_width", 0);
    s.time_scale_shift = j.value("time_scale_shift", false);
    s.attention = j.value("attention", false);
    s.validate();
    return s;
}

std::vector<double> time_embedding(double t, int width)
{
    if (width <= 0 || width % 2 != 0)
        throw std::invalid_argument("time_embedding: width must be even and positive");
    std::vector<double> e(width);
    const int half = width / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::pow(10000.0, -2.0 * k / width);
        e[2 * k] = std::sin(t * freq);
        e[2 * k + 1] = std::cos(t * freq);
    }
    return e;
}

struct Network::Cache {
    Graph graph;
    Var output;
    explicit Cache(ParamStore* sink) : graph(sink) {}
};

Network::ResBlock Network::make_block(const std::string& name, int in, int out)
{
    ResBlock b;
    b.conv1 = ConvLayer::create(params_, name + ".conv1", in, out, 3, true);
    if (spec_.time_embed_width > 0)
        b.temb = ConvLayer::create(params_, name + ".temb", spec_.time_embed_width, out, 1, true);
    if (spec_.time_scale_shift)
        b.tscale = ConvLayer::create(params_, name + ".tscale", spec_.time_embed_width, out, 1, true);
    b.conv2 = ConvLayer::create(params_, name + ".conv2", out, out, 3, true);
    if (in != out) b.skip = ConvLayer::create(params_, name + ".skip", in, out, 1, false);
    return b;
}

Network::Network(NetSpec spec, std::uint64_t init_seed, bool zero_output) : spec_(std::move(spec))
{
    spec_.validate();
    const int c0 = spec_.stages.front().channels;
    if (spec_.time_embed_width > 0)
        time_mlp_ = ConvLayer::create(params_, "time_mlp", spec_.time_embed_width, spec_.time_embed_width, 1, true);
    stem_ = ConvLayer::create(params_, "stem", spec_.in_channels, c0, 3, true);

    int cur = c0;
    for (std::size_t i = 0; i < spec_.stages.size(); ++i) {
        down_.push_back(make_block("down" + std::to_string(i), cur, spec_.stages[i].channels));
        cur = spec_.stages[i].channels;
    }
    if (spec_.attention) {
        AttnBlock a;
        a.q = ConvLayer::create(params_, "attn.q", cur, cur, 1, true);
        a.k = ConvLayer::create(params_, "attn.k", cur, cur, 1, true);
        a.v = ConvLayer::create(params_, "attn.v", cur, cur, 1, true);
        a.proj = ConvLayer::create(params_, "attn.proj", cur, cur, 1, true);
        attn_ = a;
    }
    up_.resize(spec_.stages.size());
    for (std::size_t r = spec_.stages.size(); r-- > 0;) {
        const int skip_ch = spec_.stages[r].channels;
        up_[r] = make_block("up" + std::to_string(r), cur + skip_ch, skip_ch);
        cur = skip_ch;
    }
    head_ = ConvLayer::create(params_, "head", cur, spec_.out_channels, 3, false);

    std::mt19937_64 rng(init_seed);
    if (time_mlp_) time_mlp_->init(params_, rng);
    stem_.init(params_, rng);
    auto init_block = [&](const ResBlock& b) {
        b.conv1.init(params_, rng);
        if (b.temb) b.temb->init(params_, rng);
        if (b.tscale) b.tscale->init(params_, rng, 0.1);
        b.conv2.init(params_, rng, 0.5);
        if (b.skip) b.skip->init(params_, rng);
    };
    for (const auto& b : down_) init_block(b);
    if (attn_) {
        attn_->q.init(params_, rng);
        attn_->k.init(params_, rng);
        attn_->v.init(params_, rng);
        attn_->proj.init(params_, rng, 0.5);
    }
    for (std::size_t r = up_.size(); r-- > 0;) init_block(up_[r]);
    if (zero_output)
        head_.zero(params_);
    else
        head_.init(params_, rng);
}

Network::Network(const Network& other)
    : spec_(other.spec_),
      params_(other.params_),
      stem_(other.stem_),
      down_(other.down_),
      up_(other.up_),
      attn_(other.attn_),
      time_mlp_(other.time_mlp_),
      head_(other.head_)
{
}

Network& Network::operator=(const Network& other)
{
    if (this != &other) {
        Network copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;
Network::~Network() = default;

Var Network::act(Graph& g, const Var& x) const
{
    return spec_.activation == Activation::SiLU ? silu(g, x) : tanh_act(g, x);
}

Var Network::run_block(Graph& g, const ResBlock& b, const Var& h, const Var* temb) const
{
    Var a = conv2d(g, params_, b.conv1, act(g, h));
    if (temb && b.tscale)
        a = scale_shift(g, a, conv2d(g, params_, *b.tscale, *temb), conv2d(g, params_, *b.temb, *temb));
    else if (temb && b.temb)
        a = add_broadcast(g, a, conv2d(g, params_, *b.temb, *temb));
    a = conv2d(g, params_, b.conv2, act(g, a));
    Var skip = b.skip ? conv2d(g, params_, *b.skip, h) : h;
    return add(g, a, skip);
}

void Network::check_input(const Tensor& x, std::span<const double> times) const
{
    if (x.channels != spec_.in_channels)
        throw std::invalid_argument("Network: expected " + std::to_string(spec_.in_channels) +
                                    " input channels, got " + std::to_string(x.channels));
    const int f = spec_.downsample_factor();
    if (x.height % f != 0 || x.width % f != 0)
        throw std::invalid_argument("Network: grid " + std::to_string(x.height) + "x" +
                                    std::to_string(x.width) + " not divisible by " + std::to_string(f));
    if (spec_.time_embed_width > 0) {
        if (times.size() != static_cast<std::size_t>(x.batch))
            throw std::invalid_argument("Network: one timestep per sample is required");
    } else if (!times.empty()) {
        throw std::invalid_argument("Network: timesteps given to a network without time embedding");
    }
}

Var Network::build(Graph& g, const Var& x, std::span<const double> times) const
{
    check_input(x->value, times);
    const int N = x->value.batch;

    Var temb;
    if (time_mlp_) {
        const int E = spec_.time_embed_width;
        Tensor e(E, N, 1, 1);
        for (int n = 0; n < N; ++n) {
            const auto v = time_embedding(times[n], E);
            for (int c = 0; c < E; ++c) e.data[static_cast<std::size_t>(c) * N + n] = v[c];
        }
        temb = silu(g, conv2d(g, params_, *time_mlp_, g.input(std::move(e))));
    }
    const Var* tp = temb ? &temb : nullptr;

    Var h = conv2d(g, params_, stem_, x);
    std::vector<Var> skips;
    for (std::size_t i = 0; i < down_.size(); ++i) {
        if (spec_.stages[i].downsample) h = avg_pool2(g, h);
        h = run_block(g, down_[i], h, tp);
        skips.push_back(h);
    }
    if (attn_) {
        Var q = conv2d(g, params_, attn_->q, h);
        Var k = conv2d(g, params_, attn_->k, h);
        Var v = conv2d(g, params_, attn_->v, h);
        h = add(g, h, conv2d(g, params_, attn_->proj, attention(g, q, k, v)));
    }
    for (std::size_t r = up_.size(); r-- > 0;) {
        h = run_block(g, up_[r], concat(g, h, skips[r]), tp);
        if (spec_.stages[r].downsample) h = upsample2(g, h);
    }
    return conv2d(g, params_, head_, act(g, h));
}

Tensor Network::forward(const Tensor& x, std::span<const double> times)
{
    cache_ = std::make_unique<Cache>(&params_);
    cache_->output = build(cache_->graph, cache_->graph.input(x), times);
    return cache_->output->value;
}

void Network::backward(const Tensor& upstream)
{
    if (!cache_) throw std::logic_error("Network::backward called without a preceding forward");
    cache_->graph.backward(cache_->output, upstream);
    cache_.reset();
}

Tensor Network::infer(const Tensor& x, std::span<const double> times) const
{
    Graph g;
    Var out = build(g, g.input(x), times);
    return std::move(out->value);
}

}  // namespace def::nn
