#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "def/metrics/metrics.hpp"

using namespace def;
using namespace def::metrics;

namespace {

using Field = std::vector<double>;

std::vector<std::span<const double>> views(const std::vector<Field>& fs)
{
    return {fs.begin(), fs.end()};
}

double l2(const Field& a, const Field& b)
{
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

// Literal double sums over all ordered pairs, b' = b included.
double oracle_energy(const std::vector<Field>& m, const Field& y)
{
    const double B = static_cast<double>(m.size());
    double first = 0.0, second = 0.0;
    for (const auto& x : m) first += l2(x, y);
    for (const auto& x : m)
        for (const auto& z : m) second += l2(x, z);
    return first / B - second / (2.0 * B * B);
}

double oracle_crps(const std::vector<Field>& m, const Field& y)
{
    const double B = static_cast<double>(m.size());
    double total = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        double first = 0.0, second = 0.0;
        for (const auto& x : m) first += std::abs(x[k] - y[k]);
        for (const auto& x : m)
            for (const auto& z : m) second += std::abs(x[k] - z[k]);
        total += first / B - second / (2.0 * B * B);
    }
    return total / static_cast<double>(y.size());
}

FieldState state(GridShape shape, std::vector<double> d, int t = 0)
{
    return FieldState(shape, std::move(d), t);
}

}  // namespace

TEST_CASE("crps examples")
{
    CHECK(crps_scalar(std::vector<double>{0.0, 2.0}, 1.0) == doctest::Approx(0.5));
    CHECK(crps_scalar(std::vector<double>{1.0, 1.0}, 0.0) == doctest::Approx(1.0));
    CHECK(crps_scalar(std::vector<double>{4.0, 4.0, 4.0}, 4.0) == 0.0);
    CHECK_THROWS(crps_scalar(std::vector<double>{}, 0.0));
    const std::vector<Field> m{{0.0, 4.0}, {2.0, 4.0}};
    CHECK(crps(views(m), std::vector<double>{1.0, 4.0}) == doctest::Approx(0.25));
}

TEST_CASE("energy score examples")
{
    const std::vector<Field> one{{3.0, 4.0}};
    CHECK(energy_score(views(one), std::vector<double>{0.0, 0.0}) == doctest::Approx(5.0));
    const std::vector<Field> pair{{0.0}, {2.0}};
    CHECK(energy_score(views(pair), std::vector<double>{1.0}) == doctest::Approx(0.5));
    const std::vector<Field> same{{1.0, 2.0}, {1.0, 2.0}};
    CHECK(energy_score(views(same), std::vector<double>{1.0, 2.0}) == 0.0);
    const std::vector<Field> bad{{1.0}, {1.0, 2.0}};
    CHECK_THROWS_AS(energy_score(views(bad), std::vector<double>{1.0, 2.0}), ShapeError);
    CHECK_THROWS(energy_score({}, std::vector<double>{1.0}));
}

TEST_CASE("rmse examples")
{
    CHECK(rmse(std::vector<double>{0.0, 0.0}, std::vector<double>{3.0, 4.0}) == doctest::Approx(3.5355339059));
    CHECK(rmse(std::vector<double>{1.5, 2.5}, std::vector<double>{1.5, 2.5}) == 0.0);
    CHECK_THROWS_AS(rmse(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("spread correlation examples")
{
    const std::vector<Field> m{{1.0}, {3.0}};
    CHECK(spread_correlation(views(m), std::vector<double>{0.0}) == doctest::Approx(1.0));
    CHECK(spread_correlation(views(m), std::vector<double>{0.0}, std::vector<double>{2.0}) == doctest::Approx(1.0));
    // |error| = spread at every pixel.
    const std::vector<Field> m2{{1.0, -1.0}, {3.0, 1.0}};
    CHECK(spread_correlation(views(m2), std::vector<double>{1.0, 1.0}) == doctest::Approx(0.0).epsilon(1e-15));
    const std::vector<Field> same{{2.0, 5.0}, {2.0, 5.0}};
    CHECK(spread_correlation(views(same), std::vector<double>{2.0, 5.0}) == 0.0);
    // Negative and positive errors of the same size score alike.
    CHECK(spread_correlation(views(m), std::vector<double>{4.0}) == doctest::Approx(1.0));
}

TEST_CASE("domain average")
{
    CHECK(domain_average(std::vector<double>(9, 2.5)) == 2.5);
    CHECK(domain_average(std::vector<double>{1.0, 2.0, 6.0}) == doctest::Approx(3.0));
    CHECK_THROWS(domain_average(std::vector<double>{}));
}

TEST_CASE("crps and energy score match the brute-force oracle")
{
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> members(1, 8), side(1, 4);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int B = members(rng);
        const int P = side(rng) * side(rng);
        std::vector<Field> m(B, Field(P));
        Field y(P);
        const double scale = std::exp(normal(rng));
        for (auto& f : m)
            for (double& x : f) x = scale * normal(rng);
        for (double& x : y) x = scale * normal(rng);
        CHECK(std::abs(crps(views(m), y) - oracle_crps(m, y)) <= 1e-10);
        CHECK(std::abs(energy_score(views(m), y) - oracle_energy(m, y)) <= 1e-10);
    }
}

TEST_CASE("property: metric invariants on random ensembles")
{
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int B = 1 + trial % 7;
        std::vector<Field> m(B, Field(5));
        Field y(5);
        for (auto& f : m)
            for (double& x : f) x = normal(rng);
        for (double& x : y) x = normal(rng);

        // crps never exceeds the mean absolute error term.
        for (std::size_t k = 0; k < y.size(); ++k) {
            Field col;
            double mae = 0.0;
            for (const auto& f : m) {
                col.push_back(f[k]);
                mae += std::abs(f[k] - y[k]);
            }
            CHECK(crps_scalar(col, y[k]) <= mae / B + 1e-15);
            // One pixel: energy score and crps coincide.
            std::vector<Field> single;
            for (double c : col) single.push_back({c});
            CHECK(energy_score(views(single), Field{y[k]}) == doctest::Approx(crps_scalar(col, y[k])).epsilon(1e-12));
        }

        const double c0 = crps(views(m), y), e0 = energy_score(views(m), y), s0 = spread_correlation(views(m), y);
        std::shuffle(m.begin(), m.end(), rng);
        CHECK(crps(views(m), y) == doctest::Approx(c0).epsilon(1e-12));
        CHECK(energy_score(views(m), y) == doctest::Approx(e0).epsilon(1e-12));
        CHECK(spread_correlation(views(m), y) == doctest::Approx(s0).epsilon(1e-12));
        CHECK(c0 >= 0.0);
        CHECK(e0 >= 0.0);
        CHECK(s0 >= 0.0);
        CHECK(rmse(m[0], y) == rmse(y, m[0]));
    }
}

TEST_CASE("scorecard layout and values")
{
    const GridShape shape{2, 1, 1, 2};
    // Two members, three leads, truth all zeros.
    std::vector<std::vector<FieldState>> members(2);
    std::vector<FieldState> truth, det;
    for (int n = 0; n < 3; ++n) {
        members[0].push_back(state(shape, {1.0, 1.0, 2.0, 2.0, 9.0, 9.0}, n + 1));
        members[1].push_back(state(shape, {3.0, 3.0, 2.0, 2.0, 9.0, 9.0}, n + 1));
        truth.push_back(state(GridShape{2, 0, 1, 2}, {0.0, 0.0, 2.0, 2.0}, n + 1));
        det.push_back(state(shape, {1.0, 1.0, 3.0, 3.0, 9.0, 9.0}, n + 1));
    }
    const std::vector<int> leads{1, 3};
    const ScoreCard card = scorecard(members, truth, det, leads, "Diffusion[0.5, 1]");
    REQUIRE(card.rows.size() == leads.size() * 2);
    const ScoreRow& r = card.rows[0];
    CHECK(r.variable == 0);
    CHECK(r.lead == 1);
    CHECK(r.crps == doctest::Approx(1.5));
    CHECK(r.rmse == doctest::Approx(2.0));
    CHECK(r.det_rmse == doctest::Approx(1.0));
    CHECK(r.spread == doctest::Approx(1.0));
    CHECK(r.spread_corr == doctest::Approx(std::sqrt(2.0)));
    CHECK(r.energy == doctest::Approx((std::sqrt(2.0) + 3.0 * std::sqrt(2.0)) / 2.0 - 2.0 * std::sqrt(8.0) / 8.0));
    const ScoreRow& v1 = card.rows[1];
    CHECK(v1.variable == 1);
    CHECK(v1.crps == 0.0);
    CHECK(v1.spread == 0.0);
    CHECK(card.rows[2].lead == 3);

    std::ostringstream csv;
    card.write_csv(csv);
    const std::string text = csv.str();
    CHECK(text.rfind("variable,lead,energy,crps,rmse,spread_corr,det_rmse\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 5);

    const std::vector<int> bad{4};
    CHECK_THROWS_AS(scorecard(members, truth, det, bad, "x"), std::out_of_range);
    const std::vector<int> zero{0};
    CHECK_THROWS_AS(scorecard(members, truth, det, zero, "x"), std::out_of_range);
}

TEST_CASE("scorecard refuses to report overflowing scores")
{
    const GridShape shape{1, 0, 1, 2};
    std::vector<std::vector<FieldState>> members{{state(shape, {1e200, -1e200})}, {state(shape, {-1e200, 1e200})}};
    const std::vector<FieldState> truth{state(shape, {0.0, 0.0})};
    const std::vector<int> leads{1};
    CHECK_THROWS_AS(scorecard(members, truth, {}, leads, "x"), NonFiniteError);
}

TEST_CASE("scorecard without a deterministic baseline leaves that column empty")
{
    const GridShape shape{1, 0, 1, 1};
    std::vector<std::vector<FieldState>> members{{state(shape, {1.0})}, {}};
    const std::vector<FieldState> truth{state(shape, {0.0})};
    const std::vector<int> leads{1};
    const ScoreCard card = scorecard(members, truth, {}, leads, "x");
    CHECK(std::isnan(card.rows[0].det_rmse));
    std::ostringstream csv;
    card.write_csv(csv);
    CHECK(csv.str().find("nan") == std::string::npos);
    CHECK(csv.str().find(",1,1,1,1,1,\n") != std::string::npos);
}

TEST_CASE("domain average table")
{
    const GridShape shape{1, 0, 1, 2};
    std::vector<std::vector<FieldState>> members{{state(shape, {1.0, 3.0})}, {state(shape, {5.0, 7.0})}};
    const std::vector<FieldState> truth{state(shape, {0.0, 2.0})};
    const auto rows = domain_average_table(members, truth, {});
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].series == "truth");
    CHECK(rows[0].value == 1.0);
    CHECK(rows[1].series == "member_0");
    CHECK(rows[1].value == 2.0);
    CHECK(rows[3].series == "mean");
    CHECK(rows[3].value == 4.0);
    std::ostringstream out;
    write_domain_averages_csv(out, rows);
    CHECK(out.str().rfind("lead,variable,series,value\n1,0,truth,1\n", 0) == 0);
}
