#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "def/grid/field_state.hpp"
#include "def/grid/grid_file.hpp"
#include "def/grid/normalization.hpp"

using namespace def;

namespace {

FieldState random_state(GridShape shape, std::mt19937_64& rng, int t = 0, double scale = 5.0, double offset = 0.0)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> data(shape.size());
    for (double& x : data) x = offset + scale * normal(rng);
    return FieldState(shape, std::move(data), t);
}

}  // namespace

TEST_CASE("FieldState enforces its data length")
{
    const GridShape shape{2, 1, 3, 4};
    CHECK(FieldState(shape).data().size() == 36);
    CHECK_THROWS_AS(FieldState(shape, std::vector<double>(35)), ShapeError);
    FieldState s(shape, std::vector<double>(36, 1.5), 7);
    CHECK(s.time_index() == 7);
    CHECK(s.physical().size() == 24);
    CHECK(s.forcing().size() == 12);
    CHECK(s.physical_only().shape() == GridShape{2, 0, 3, 4});
}

TEST_CASE("FieldState finiteness check names the offender")
{
    FieldState s(GridShape{1, 0, 2, 2});
    CHECK(s.all_finite());
    s.at(0, 1, 1) = std::nan("");
    CHECK_FALSE(s.all_finite());
    CHECK_THROWS_AS(s.require_finite("x"), NonFiniteError);
}

TEST_CASE("compute_stats on a single row")
{
    FieldState s(GridShape{1, 0, 1, 3}, {1.0, 2.0, 3.0});
    const std::vector<FieldState> ds{s};
    const NormStats st = compute_stats(ds);
    CHECK(st.mu[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(st.sigma[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-14));
}

TEST_CASE("compute_stats pools over states")
{
    const std::vector<FieldState> ds{FieldState(GridShape{1, 0, 1, 2}, {0.0, 0.0}),
                                     FieldState(GridShape{1, 0, 1, 2}, {2.0, 2.0})};
    const NormStats st = compute_stats(ds);
    CHECK(st.mu[0] == doctest::Approx(1.0));
    CHECK(st.sigma[0] == doctest::Approx(1.0));
}

TEST_CASE("compute_stats of a constant field has zero sigma")
{
    const std::vector<FieldState> ds{FieldState(GridShape{1, 0, 2, 2}, std::vector<double>(4, 3.25))};
    const NormStats st = compute_stats(ds);
    CHECK(st.mu[0] == 3.25);
    CHECK(st.sigma[0] == 0.0);
    const FieldState n = normalize(ds[0], st);
    for (double x : n.physical()) CHECK(x == 0.0);
}

TEST_CASE("compute_stats rejects empty and mixed datasets")
{
    CHECK_THROWS(compute_stats(std::vector<FieldState>{}));
    const std::vector<FieldState> mixed{FieldState(GridShape{1, 0, 2, 2}), FieldState(GridShape{1, 0, 2, 3})};
    CHECK_THROWS_AS(compute_stats(mixed), ShapeError);
}

TEST_CASE("normalize and denormalize examples")
{
    FieldState s(GridShape{1, 0, 1, 3}, {1.0, 2.0, 3.0});
    NormStats st{{2.0}, {std::sqrt(2.0 / 3.0)}, 0.0};
    const FieldState n = normalize(s, st);
    CHECK(n.physical()[0] == doctest::Approx(-1.2247448714).epsilon(1e-9));
    CHECK(n.physical()[1] == doctest::Approx(0.0));
    CHECK(n.physical()[2] == doctest::Approx(1.2247448714).epsilon(1e-9));

    NormStats id{{0.0}, {1.0}, 0.0};
    CHECK(normalize(s, id) == s);

    FieldState y(GridShape{1, 0, 1, 2}, {-1.0, 1.0});
    NormStats st2{{10.0}, {5.0}, 0.0};
    const FieldState d = denormalize(y, st2);
    CHECK(d.physical()[0] == doctest::Approx(5.0));
    CHECK(d.physical()[1] == doctest::Approx(15.0));

    FieldState zeros(GridShape{1, 0, 1, 3});
    NormStats st3{{2.0}, {0.8165}, 1e-6};
    const FieldState dz = denormalize(zeros, st3);
    for (double x : dz.physical()) CHECK(x == doctest::Approx(2.0));
}

TEST_CASE("normalize rejects non-finite input and mismatched stats")
{
    FieldState s(GridShape{1, 0, 1, 2}, {1.0, std::numeric_limits<double>::infinity()});
    NormStats st{{0.0}, {1.0}, 1e-6};
    CHECK_THROWS_AS(normalize(s, st), NonFiniteError);
    NormStats two{{0.0, 0.0}, {1.0, 1.0}, 1e-6};
    CHECK_THROWS_AS(normalize(FieldState(GridShape{1, 0, 1, 2}), two), ShapeError);
    CHECK_THROWS_AS(denormalize(FieldState(GridShape{1, 0, 1, 2}), two), ShapeError);
}

TEST_CASE("NormStats validation")
{
    CHECK_THROWS(NormStats{{0.0}, {-1.0}, 1e-6}.validate());
    CHECK_THROWS(NormStats{{0.0}, {1.0}, 0.0}.validate());
    CHECK_NOTHROW(NormStats{{0.0}, {0.0}, 1e-6}.validate());
}

TEST_CASE("property: normalization round trip over random fields")
{
    std::mt19937_64 rng(11);
    const GridShape shape{3, 2, 4, 5};
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<FieldState> ds;
        for (int k = 0; k < 4; ++k) ds.push_back(random_state(shape, rng, k, 1.0 + trial, 100.0 * trial));
        const NormStats st = compute_stats(ds);
        for (const auto& x : ds) {
            const FieldState back = denormalize(normalize(x, st), st);
            for (std::size_t k = 0; k < x.data().size(); ++k)
                CHECK(std::abs(back.data()[k] - x.data()[k]) <= 1e-6 * std::max(1.0, std::abs(x.data()[k])));
        }
    }
}

TEST_CASE("property: forcing channels pass through normalization bit for bit")
{
    std::mt19937_64 rng(3);
    const GridShape shape{2, 3, 3, 3};
    for (int trial = 0; trial < 20; ++trial) {
        const FieldState x = random_state(shape, rng);
        const std::vector<FieldState> ds{x};
        const NormStats st = compute_stats(ds);
        const FieldState n = normalize(x, st);
        CHECK(std::equal(n.forcing().begin(), n.forcing().end(), x.forcing().begin()));
        const FieldState d = denormalize(n, st);
        CHECK(std::equal(d.forcing().begin(), d.forcing().end(), x.forcing().begin()));
    }
}

TEST_CASE("property: compute_stats is permutation invariant")
{
    std::mt19937_64 rng(5);
    const GridShape shape{2, 0, 3, 3};
    std::vector<FieldState> ds;
    for (int k = 0; k < 9; ++k) ds.push_back(random_state(shape, rng, k, 2.0, 7.0));
    const NormStats a = compute_stats(ds);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(ds.begin(), ds.end(), rng);
        const NormStats b = compute_stats(ds);
        for (int v = 0; v < 2; ++v) {
            CHECK(b.mu[v] == doctest::Approx(a.mu[v]).epsilon(1e-12));
            CHECK(b.sigma[v] == doctest::Approx(a.sigma[v]).epsilon(1e-12));
        }
    }
}

TEST_CASE("NormStats JSON round trip")
{
    NormStats st{{1.5, -2.0}, {0.5, 3.0}, 1e-5};
    const NormStats back = NormStats::from_json(st.to_json());
    CHECK(back.mu == st.mu);
    CHECK(back.sigma == st.sigma);
    CHECK(back.epsilon == st.epsilon);
    CHECK(st.to_json().contains("mu"));
    CHECK(st.to_json().contains("sigma"));
    CHECK(st.to_json().contains("epsilon"));
}

TEST_CASE("make_windows counts and shapes")
{
    const GridShape shape{2, 1, 2, 2};
    auto seq = [&](int n) {
        std::vector<FieldState> ds;
        for (int t = 0; t < n; ++t) ds.emplace_back(shape, t + 10);
        return ds;
    };
    CHECK(make_windows(seq(3)).size() == 2);
    const auto two = make_windows(seq(2));
    REQUIRE(two.size() == 1);
    CHECK(two[0].input.time_index() == 10);
    CHECK(two[0].target.time_index() == 11);
    const auto ten = make_windows(seq(10));
    CHECK(ten.size() == 9);
    for (const auto& w : ten) {
        CHECK(w.target.shape().forcings == 0);
        CHECK(w.target.time_index() == w.input.time_index() + 1);
    }
    CHECK_THROWS(make_windows(seq(1)));
    auto gap = seq(3);
    gap[2].set_time_index(20);
    CHECK_THROWS(make_windows(gap));
}

TEST_CASE("grid file round trip through float32")
{
    std::mt19937_64 rng(9);
    const GridShape shape{2, 2, 3, 4};
    std::vector<FieldState> states;
    for (int t = 0; t < 3; ++t) states.push_back(random_state(shape, rng, t));
    std::stringstream buf;
    write_grid_stream(buf, states);
    const std::string bytes = buf.str();
    CHECK(bytes.substr(0, 4) == "DEF1");
    CHECK(bytes.size() == 4 + 5 * 4 + 3 * shape.size() * 4);
    const auto back = read_grid_stream(buf, 0);
    REQUIRE(back.size() == 3);
    for (int t = 0; t < 3; ++t) {
        CHECK(back[t].shape() == shape);
        CHECK(back[t].time_index() == t);
        for (std::size_t k = 0; k < shape.size(); ++k)
            CHECK(back[t].data()[k] == static_cast<double>(static_cast<float>(states[t].data()[k])));
    }
}

TEST_CASE("grid file rejects bad magic")
{
    std::stringstream buf("NOPE0000000000000000000000");
    CHECK_THROWS(read_grid_stream(buf, 0));
}
