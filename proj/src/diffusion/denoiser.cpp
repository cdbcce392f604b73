#include "def/diffusion/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "def/nn/batch.hpp"
#include "def/nn/checkpoint.hpp"
#include "def/nn/optimizer.hpp"
#include "def/util/seed.hpp"

namespace def::diffusion {

nn::NetSpec default_denoiser_spec(int vars)
{
    nn::NetSpec spec;
    spec.in_channels = 2 * vars + 1;
    spec.out_channels = vars;
    spec.stages = {{16, false}, {32, true}, {32, true}};
    spec.time_embed_width = 32;
    spec.time_scale_shift = true;
    spec.attention = true;
    return spec;
}

DenoiserModel::DenoiserModel(nn::Network net, NoiseSchedule schedule, bool prior_skip)
    : net_(std::move(net)), schedule_(std::move(schedule)), prior_skip_(prior_skip)
{
    const auto& spec = net_.spec();
    if (spec.in_channels != 2 * spec.out_channels + 1)
        throw ShapeError("DenoiserModel: network must take 2v+1 channels (noisy, condition, indicator)");
    if (spec.time_embed_width <= 0) throw std::invalid_argument("DenoiserModel: time embedding required");
}

nn::Tensor DenoiserModel::assemble(const nn::Tensor& z, const nn::Tensor& cond, std::span<const char> use_cond) const
{
    const int v = vars();
    if (z.channels != v || !z.same_shape(cond))
        throw ShapeError("DenoiserModel: noisy slab " + z.shape_str() + " and condition " + cond.shape_str() +
                         " must both have " + std::to_string(v) + " channels");
    if (use_cond.size() != static_cast<std::size_t>(z.batch)) throw ShapeError("DenoiserModel: flag count");
    nn::Tensor in(2 * v + 1, z.batch, z.height, z.width);
    std::copy(z.data.begin(), z.data.end(), in.data.begin());
    const std::size_t P = z.pixels();
    for (int c = 0; c < v; ++c)
        for (int n = 0; n < z.batch; ++n)
            if (use_cond[n]) std::copy_n(cond.plane(c, n), P, in.plane(v + c, n));
    for (int n = 0; n < z.batch; ++n) std::fill_n(in.plane(2 * v, n), P, use_cond[n] ? 1.0 : 0.0);
    return in;
}

void DenoiserModel::add_skip(nn::Tensor& out, const nn::Tensor& z, std::span<const double> t) const
{
    if (!prior_skip_) return;
    const std::size_t P = z.pixels();
    for (int n = 0; n < z.batch; ++n) {
        const double s = std::sqrt(1.0 - schedule_.alpha_bar_at(t[n]));
        for (int c = 0; c < z.channels; ++c) {
            const double* pz = z.plane(c, n);
            double* po = out.plane(c, n);
            for (std::size_t k = 0; k < P; ++k) po[k] += s * pz[k];
        }
    }
}

nn::Tensor DenoiserModel::predict(const nn::Tensor& z, const nn::Tensor* cond, std::span<const double> t) const
{
    std::vector<char> flags(z.batch, cond ? 1 : 0);
    nn::Tensor out;
    if (cond) {
        out = net_.infer(assemble(z, *cond, flags), t);
    } else {
        const nn::Tensor null_slab(z.channels, z.batch, z.height, z.width);
        out = net_.infer(assemble(z, null_slab, flags), t);
    }
    add_skip(out, z, t);
    return out;
}

void DenoiserModel::save(const std::string& path, std::int64_t step, const nlohmann::json& extra) const
{
    nlohmann::json meta = {{"kind", "denoiser"},
                           {"schedule", schedule_.to_json()},
                           {"null_condition", "zero slab, indicator channel 0"},
                           {"prior_skip", prior_skip_}};
    if (extra.is_object())
        for (const auto& [k, val] : extra.items()) meta[k] = val;
    nn::save_checkpoint(path, net_, step, meta);
}

DenoiserModel DenoiserModel::load(const std::string& path)
{
    auto loaded = nn::load_checkpoint(path);
    if (loaded.meta.value("kind", "") != "denoiser") throw std::runtime_error(path + " is not a denoiser checkpoint");
    return DenoiserModel(std::move(loaded.network), NoiseSchedule::from_json(loaded.meta.at("schedule")),
                         loaded.meta.value("prior_skip", false));
}

nn::Tensor GaussianScore::predict(const nn::Tensor& z, const nn::Tensor*, std::span<const double> t) const
{
    if (t.size() != static_cast<std::size_t>(z.batch)) throw ShapeError("GaussianScore: one t per sample");
    nn::Tensor eps = z;
    const std::size_t P = z.pixels();
    for (int n = 0; n < z.batch; ++n) {
        const double s = std::sqrt(1.0 - schedule_.alpha_bar_at(t[n]));
        for (int c = 0; c < z.channels; ++c) {
            double* p = eps.plane(c, n);
            for (std::size_t k = 0; k < P; ++k) p[k] *= s;
        }
    }
    return eps;
}

DiffusionTraining train_diffusion(std::span<const FieldState> dataset, const forecast::ForecasterModel* forecaster,
                                  const nn::NetSpec& spec, const NoiseSchedule& schedule,
                                  const DiffusionTrainConfig& cfg)
{
    if (dataset.empty()) throw std::invalid_argument("train_diffusion: empty dataset");
    if (!(cfg.cond_prob >= 0.0 && cfg.cond_prob <= 1.0))
        throw std::invalid_argument("train_diffusion: conditioning probability outside [0, 1]");
    if (!(cfg.advance_prob >= 0.0 && cfg.advance_prob <= 1.0))
        throw std::invalid_argument("train_diffusion: advance probability outside [0, 1]");
    if (cfg.epochs < 0 || cfg.batch < 1) throw std::invalid_argument("train_diffusion: bad epochs/batch");
    if (!(cfg.ema >= 0.0 && cfg.ema < 1.0)) throw std::invalid_argument("train_diffusion: ema decay outside [0, 1)");
    const GridShape shape = dataset.front().shape();
    for (const auto& x : dataset) require_same_shape(x.shape(), shape, "train_diffusion");
    if (spec.out_channels != shape.vars) throw ShapeError("train_diffusion: network v does not match data");
    if (cfg.advance_prob > 0.0) {
        if (!forecaster) throw std::invalid_argument("train_diffusion: a forecaster is required");
        if (forecaster->trained_steps() == 0) throw std::invalid_argument("train_diffusion: forecaster is untrained");
        require_same_shape(forecaster->shape(), shape, "train_diffusion forecaster");
    }

    DiffusionTraining out{
        DenoiserModel(nn::Network(spec, derive_seed(cfg.seed, 0), true), schedule, cfg.prior_skip), {}, {}};
    auto& model = out.model;
    auto& net = model.network();

    // G is fixed during this training, so its one-step images are computed once.
    std::vector<FieldState> advanced;
    if (cfg.advance_prob > 0.0) {
        advanced.reserve(dataset.size());
        constexpr std::size_t kChunk = 32;
        for (std::size_t s = 0; s < dataset.size(); s += kChunk) {
            const auto part = forecaster->step_batch(dataset.subspan(s, std::min(kChunk, dataset.size() - s)));
            advanced.insert(advanced.end(), part.begin(), part.end());
        }
    }

    nn::Adam opt(net.params().size(), nn::AdamConfig{.lr = cfg.lr});
    std::mt19937_64 rng(derive_seed(cfg.seed, 1));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::uniform_int_distribution<int> pick_t(1, schedule.steps());
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<double> ema(net.params().values().begin(), net.params().values().end());
    std::int64_t updates = 0;

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    const int v = shape.vars;
    const std::size_t P = shape.plane();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const int N = static_cast<int>(std::min(order.size(), start + cfg.batch) - start);
            nn::Tensor x0(v, N, shape.height, shape.width);
            nn::Tensor eps(v, N, shape.height, shape.width);
            nn::Tensor z(v, N, shape.height, shape.width);
            std::vector<double> times(N);
            std::vector<char> use_cond(N);
            for (int n = 0; n < N; ++n) {
                const std::size_t idx = order[start + n];
                const bool advance = cfg.advance_prob > 0.0 && uniform(rng) < cfg.advance_prob;
                const FieldState& src = advance ? advanced[idx] : dataset[idx];
                const int t = pick_t(rng);
                use_cond[n] = uniform(rng) < cfg.cond_prob;
                times[n] = t;
                if (advance) ++out.counters.advanced;
                if (use_cond[n])
                    ++out.counters.conditional;
                else
                    ++out.counters.unconditional;
                const double a = std::sqrt(schedule.alpha_bar(t));
                const double b = std::sqrt(1.0 - schedule.alpha_bar(t));
                for (int c = 0; c < v; ++c) {
                    const auto field = src.channel(c);
                    double* px = x0.plane(c, n);
                    double* pe = eps.plane(c, n);
                    double* pz = z.plane(c, n);
                    for (std::size_t k = 0; k < P; ++k) {
                        px[k] = field[k];
                        pe[k] = normal(rng);
                        pz[k] = a * px[k] + b * pe[k];
                    }
                }
            }

            net.params().zero_grad();
            nn::Tensor pred = net.forward(model.assemble(z, x0, use_cond), times);
            model.add_skip(pred, z, times);
            nn::Tensor grad = pred;
            double loss = 0.0;
            const double scale = 2.0 / static_cast<double>(pred.size());
            for (std::size_t k = 0; k < pred.size(); ++k) {
                const double d = pred.data[k] - eps.data[k];
                loss += d * d;
                grad.data[k] = scale * d;
            }
            loss /= static_cast<double>(pred.size());
            if (!std::isfinite(loss))
                throw NonFiniteError("train_diffusion: loss diverged in epoch " + std::to_string(epoch + 1));
            net.backward(grad);
            nn::clip_and_step(net.params(), opt, cfg.tau);
            ++updates;
            // Warm-up keeps early averages from remembering the initialisation.
            const double d = std::min(cfg.ema, (1.0 + updates) / (10.0 + updates));
            const auto w = net.params().values();
            for (std::size_t k = 0; k < ema.size(); ++k) ema[k] = d * ema[k] + (1.0 - d) * w[k];
            sum += loss;
            ++batches;
        }
        out.loss_curve.push_back(sum / static_cast<double>(batches));
    }
    if (cfg.ema > 0.0) std::copy(ema.begin(), ema.end(), net.params().values().begin());
    return out;
}

}  // namespace def::diffusion
