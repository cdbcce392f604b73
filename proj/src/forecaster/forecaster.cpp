#include "def/forecaster/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "def/nn/batch.hpp"
#include "def/nn/checkpoint.hpp"
#include "def/nn/optimizer.hpp"
#include "def/util/seed.hpp"

namespace def::forecast {

nn::NetSpec default_forecaster_spec(int vars, int forcings)
{
    nn::NetSpec spec;
    spec.in_channels = vars + forcings;
    spec.out_channels = vars;
    spec.stages = {{16, false}, {32, true}, {32, true}};
    spec.attention = true;
    return spec;
}

ForecasterModel::ForecasterModel(nn::Network net, NormStats stats, dynamics::DynamicsConfig clock, bool residual)
    : net_(std::move(net)), stats_(std::move(stats)), clock_(clock), residual_(residual)
{
    clock_.validate();
    stats_.validate();
    const auto& spec = net_.spec();
    if (spec.in_channels != clock_.vars + clock_.forcings || spec.out_channels != clock_.vars)
        throw ShapeError("ForecasterModel: network maps " + std::to_string(spec.in_channels) + " -> " +
                         std::to_string(spec.out_channels) + " channels, grid has v=" +
                         std::to_string(clock_.vars) + ", f=" + std::to_string(clock_.forcings));
    if (spec.time_embed_width != 0) throw std::invalid_argument("ForecasterModel: forecaster takes no timestep");
    if (stats_.vars() != clock_.vars) throw ShapeError("ForecasterModel: norm stats do not match v");
}

void ForecasterModel::check(const FieldState& x) const
{
    require_same_shape(x.shape(), shape(), "ForecasterModel::step");
}

FieldState ForecasterModel::step(const FieldState& x) const
{
    return step_batch(std::span(&x, 1)).front();
}

std::vector<FieldState> ForecasterModel::step_batch(std::span<const FieldState> xs) const
{
    if (xs.empty()) return {};
    for (const auto& x : xs) check(x);
    const int v = clock_.vars;
    const nn::Tensor out = net_.infer(nn::pack(xs, 0, v + clock_.forcings));

    std::vector<FieldState> next;
    next.reserve(xs.size());
    for (std::size_t n = 0; n < xs.size(); ++n) {
        FieldState y(shape(), xs[n].time_index() + 1);
        nn::unpack(out, static_cast<int>(n), y.physical());
        if (residual_) {
            auto p = y.physical();
            auto q = xs[n].physical();
            for (std::size_t k = 0; k < p.size(); ++k) p[k] += q[k];
        }
        dynamics::fill_forcings(y, clock_);
        next.push_back(std::move(y));
    }
    return next;
}

std::vector<FieldState> ForecasterModel::rollout(const FieldState& x0, int n) const
{
    if (n < 1) throw std::invalid_argument("rollout: N must be >= 1");
    std::vector<FieldState> traj;
    traj.reserve(n);
    const FieldState* cur = &x0;
    for (int k = 0; k < n; ++k) {
        traj.push_back(step(*cur));
        if (!traj.back().all_finite())
            throw NonFiniteError("rollout: non-finite state at step " + std::to_string(k + 1));
        cur = &traj.back();
    }
    return traj;
}

void ForecasterModel::save(const std::string& path) const
{
    nn::save_checkpoint(path, net_, trained_steps_,
                        {{"kind", "forecaster"},
                         {"stats", stats_.to_json()},
                         {"clock", clock_.to_json()},
                         {"residual", residual_}});
}

ForecasterModel ForecasterModel::load(const std::string& path)
{
    auto loaded = nn::load_checkpoint(path);
    if (loaded.meta.value("kind", "") != "forecaster")
        throw std::runtime_error(path + " is not a forecaster checkpoint");
    ForecasterModel model(std::move(loaded.network), NormStats::from_json(loaded.meta.at("stats")),
                          dynamics::DynamicsConfig::from_json(loaded.meta.at("clock")),
                          loaded.meta.value("residual", false));
    model.set_trained_steps(loaded.step);
    return model;
}

ForecasterTraining train_forecaster(std::span<const Window> pairs, const nn::NetSpec& spec,
                                    const NormStats& stats, const dynamics::DynamicsConfig& clock,
                                    const ForecasterTrainConfig& cfg, bool residual)
{
    if (pairs.empty()) throw std::invalid_argument("train_forecaster: no training pairs");
    if (cfg.epochs < 0 || cfg.batch < 1) throw std::invalid_argument("train_forecaster: bad epochs/batch");
    ForecasterModel model(nn::Network(spec, derive_seed(cfg.seed, 0)), stats, clock, residual);
    const GridShape target_shape{clock.vars, 0, clock.height, clock.width};
    for (const auto& w : pairs) {
        require_same_shape(w.input.shape(), model.shape(), "train_forecaster input");
        require_same_shape(w.target.shape(), target_shape, "train_forecaster target");
    }

    auto& net = model.network();
    nn::Adam opt(net.params().size(), nn::AdamConfig{.lr = cfg.lr});
    std::mt19937_64 rng(derive_seed(cfg.seed, 1));
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);

    const int v = clock.vars;
    const int cin = v + clock.forcings;
    std::vector<double> curve;
    std::vector<const FieldState*> inputs;
    std::vector<const FieldState*> targets;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            inputs.clear();
            targets.clear();
            for (std::size_t k = start; k < end; ++k) {
                inputs.push_back(&pairs[order[k]].input);
                targets.push_back(&pairs[order[k]].target);
            }
            const nn::Tensor x = nn::pack(inputs, 0, cin);
            nn::Tensor target = nn::pack(targets, 0, v);
            if (residual)
                for (std::size_t k = 0; k < target.size(); ++k) target.data[k] -= x.data[k];

            net.params().zero_grad();
            const nn::Tensor pred = net.forward(x);
            nn::Tensor grad = pred;
            double loss = 0.0;
            const double scale = 2.0 / static_cast<double>(pred.size());
            for (std::size_t k = 0; k < pred.size(); ++k) {
                const double d = pred.data[k] - target.data[k];
                loss += d * d;
                grad.data[k] = scale * d;
            }
            loss /= static_cast<double>(pred.size());
            if (!std::isfinite(loss))
                throw NonFiniteError("train_forecaster: loss diverged in epoch " + std::to_string(epoch + 1));
            net.backward(grad);
            nn::clip_and_step(net.params(), opt, cfg.tau);
            model.set_trained_steps(model.trained_steps() + 1);
            sum += loss;
            ++batches;
        }
        curve.push_back(sum / static_cast<double>(batches));
    }
    return {std::move(model), std::move(curve)};
}

}  // namespace def::forecast
