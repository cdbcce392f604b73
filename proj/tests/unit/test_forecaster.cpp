#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "def/forecaster/forecaster.hpp"

using namespace def;
using namespace def::forecast;

namespace {

dynamics::DynamicsConfig toy_clock()
{
    dynamics::DynamicsConfig cfg;
    cfg.height = 16;
    cfg.width = 8;
    cfg.vars = 2;
    cfg.forcings = 2;
    cfg.seed = 7;
    return cfg;
}

nn::NetSpec toy_spec()
{
    nn::NetSpec s;
    s.in_channels = 4;
    s.out_channels = 2;
    s.stages = {{16, false}, {32, true}};
    s.attention = true;
    return s;
}

double rmse_physical(const FieldState& a, const FieldState& b)
{
    const auto x = a.physical();
    const auto y = b.physical();
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
    return std::sqrt(s / static_cast<double>(x.size()));
}

std::vector<double> ranks(const std::vector<double>& v)
{
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
    return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b)
{
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double mean = (n - 1.0) / 2.0;
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        num += (ra[k] - mean) * (rb[k] - mean);
        da += (ra[k] - mean) * (ra[k] - mean);
        db += (rb[k] - mean) * (rb[k] - mean);
    }
    return num / std::sqrt(da * db);
}

struct ToySplit {
    NormStats stats;
    std::vector<FieldState> train;
    std::vector<FieldState> test;
};

const ToySplit& toy_split()
{
    static const ToySplit split = [] {
        const auto traj = dynamics::generate_trajectory(toy_clock(), 700);
        const std::vector<FieldState> train(traj.begin(), traj.begin() + 500);
        const std::vector<FieldState> test(traj.begin() + 500, traj.end());
        const NormStats st = compute_stats(train);
        return ToySplit{st, normalize_all(train, st), normalize_all(test, st)};
    }();
    return split;
}

// One trained toy forecaster shared by the skill tests.
const ForecasterModel& toy_model()
{
    static const ForecasterModel model = [] {
        const auto& s = toy_split();
        ForecasterTrainConfig cfg;
        cfg.epochs = 8;
        return train_forecaster(make_windows(s.train), toy_spec(), s.stats, toy_clock(), cfg).model;
    }();
    return model;
}

}  // namespace

TEST_CASE("zero epochs return the initialised model with an empty curve")
{
    const auto& s = toy_split();
    const auto pairs = make_windows(std::span(s.train).first(10));
    ForecasterTrainConfig cfg;
    cfg.epochs = 0;
    const auto r = train_forecaster(pairs, toy_spec(), s.stats, toy_clock(), cfg);
    CHECK(r.loss_curve.empty());
    CHECK(r.model.trained_steps() == 0);
    const nn::Network fresh(toy_spec(), 0);
    CHECK(r.model.network().params().size() == fresh.params().size());
}

TEST_CASE("training is reproducible under a fixed seed")
{
    const auto& s = toy_split();
    const auto pairs = make_windows(std::span(s.train).first(40));
    ForecasterTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 8;
    cfg.seed = 4;
    const auto a = train_forecaster(pairs, toy_spec(), s.stats, toy_clock(), cfg);
    const auto b = train_forecaster(pairs, toy_spec(), s.stats, toy_clock(), cfg);
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(std::equal(a.model.network().params().values().begin(), a.model.network().params().values().end(),
                     b.model.network().params().values().begin()));
    CHECK(a.model.trained_steps() == 2 * 5);
    cfg.seed = 5;
    const auto c = train_forecaster(pairs, toy_spec(), s.stats, toy_clock(), cfg);
    CHECK(c.loss_curve != a.loss_curve);
}

TEST_CASE("identity dynamics is learnable on the desk grid")
{
    dynamics::DynamicsConfig clock;  // 32 x 16, v = 4, f = 4
    const auto traj = dynamics::generate_trajectory(clock, 65);
    const NormStats st = compute_stats(traj);
    const auto norm = normalize_all(traj, st);
    std::vector<Window> pairs;
    for (const auto& x : norm) pairs.push_back({x, x.physical_only()});
    ForecasterTrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch = 2;
    cfg.lr = 1e-3;
    const auto r = train_forecaster(pairs, default_forecaster_spec(4, 4), st, clock, cfg);
    REQUIRE(r.loss_curve.size() == 30);
    MESSAGE("identity loss " << r.loss_curve.front() << " -> " << r.loss_curve.back());
    CHECK(r.loss_curve.back() < 1e-3);
}

TEST_CASE("training input errors")
{
    const auto& s = toy_split();
    ForecasterTrainConfig cfg;
    CHECK_THROWS_AS(train_forecaster({}, toy_spec(), s.stats, toy_clock(), cfg), std::invalid_argument);
    const auto pairs = make_windows(std::span(s.train).first(4));
    nn::NetSpec bad = toy_spec();
    bad.in_channels = 3;
    CHECK_THROWS(train_forecaster(pairs, bad, s.stats, toy_clock(), cfg));
    cfg.lr = 1e6;
    cfg.tau = 1e12;
    cfg.epochs = 50;
    CHECK_THROWS_AS(train_forecaster(pairs, toy_spec(), s.stats, toy_clock(), cfg), NonFiniteError);
}

TEST_CASE("step refreshes forcings and advances the time index")
{
    const auto& s = toy_split();
    const ForecasterModel model(nn::Network(toy_spec(), 3), s.stats, toy_clock());
    const FieldState& x = s.test[10];
    const FieldState y = model.step(x);
    CHECK(y.shape() == x.shape());
    CHECK(y.time_index() == x.time_index() + 1);
    const auto f = dynamics::forcing_channels(x.time_index() + 1, toy_clock());
    CHECK(std::equal(f.begin(), f.end(), y.forcing().begin()));
    CHECK_THROWS(model.step(FieldState(GridShape{2, 2, 8, 8})));
}

TEST_CASE("step_batch matches step one state at a time")
{
    const auto& s = toy_split();
    const ForecasterModel model(nn::Network(toy_spec(), 3), s.stats, toy_clock());
    const std::span<const FieldState> xs(s.test.data(), 5);
    const auto batch = model.step_batch(xs);
    for (int n = 0; n < 5; ++n) CHECK(batch[n] == model.step(xs[n]));
}

TEST_CASE("rollout of one step is step; rollouts compose")
{
    const auto& s = toy_split();
    const ForecasterModel model(nn::Network(toy_spec(), 3), s.stats, toy_clock());
    const FieldState& x0 = s.test[0];
    const auto one = model.rollout(x0, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == model.step(x0));
    const auto whole = model.rollout(x0, 7);
    const auto first = model.rollout(x0, 3);
    const auto rest = model.rollout(first.back(), 4);
    for (int k = 0; k < 3; ++k) CHECK(whole[k] == first[k]);
    for (int k = 0; k < 4; ++k) CHECK(whole[3 + k] == rest[k]);
    CHECK_THROWS(model.rollout(x0, 0));
}

TEST_CASE("residual flag adds the input")
{
    const auto& s = toy_split();
    nn::Network net(toy_spec(), 3, true);  // zero head: network output is 0
    const ForecasterModel plain(net, s.stats, toy_clock(), false);
    const ForecasterModel residual(net, s.stats, toy_clock(), true);
    const FieldState& x = s.test[3];
    const FieldState y0 = plain.step(x);
    for (double v : y0.physical()) CHECK(v == 0.0);
    const FieldState y = residual.step(x);
    CHECK(std::equal(y.physical().begin(), y.physical().end(), x.physical().begin()));
}

TEST_CASE("forecaster checkpoint round trip")
{
    const auto& s = toy_split();
    ForecasterModel model(nn::Network(toy_spec(), 3), s.stats, toy_clock(), true);
    model.set_trained_steps(17);
    const std::string path = "unit_forecaster.defn";
    model.save(path);
    const ForecasterModel back = ForecasterModel::load(path);
    std::remove(path.c_str());
    CHECK(back.trained_steps() == 17);
    CHECK(back.residual());
    CHECK(back.stats().mu == s.stats.mu);
    CHECK(back.shape() == model.shape());
    CHECK(back.network().spec() == model.network().spec());
}

TEST_CASE("trained toy forecaster beats persistence and errors grow with lead")
{
    const auto& s = toy_split();
    const ForecasterModel& model = toy_model();
    double model_err = 0.0, persist_err = 0.0;
    for (std::size_t k = 0; k + 1 < s.test.size(); ++k) {
        model_err += rmse_physical(model.step(s.test[k]), s.test[k + 1]);
        persist_err += rmse_physical(s.test[k], s.test[k + 1]);
    }
    MESSAGE("one-step rmse " << model_err / (s.test.size() - 1) << " vs persistence " << persist_err / (s.test.size() - 1));
    CHECK(model_err < persist_err);

    const int N = 20;
    std::vector<double> err(N, 0.0), lead(N);
    int starts = 0;
    for (std::size_t k = 0; k + N < s.test.size(); k += 15, ++starts) {
        const auto traj = model.rollout(s.test[k], N);
        for (int n = 0; n < N; ++n) err[n] += rmse_physical(traj[n], s.test[k + n + 1]);
    }
    for (int n = 0; n < N; ++n) lead[n] = n + 1;
    CHECK(starts > 5);
    CHECK(spearman(err, lead) > 0.0);
}
