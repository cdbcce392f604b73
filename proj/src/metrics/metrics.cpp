#include "def/metrics/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace def::metrics {

namespace {

std::size_t check_members(Members members, std::size_t n, const char* what)
{
    if (members.empty()) throw std::invalid_argument(std::string(what) + ": empty ensemble");
    for (const auto& m : members)
        if (m.size() != n) throw ShapeError(std::string(what) + ": member and observation sizes differ");
    return members.size();
}

double distance(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

double crps_scalar(std::span<const double> members, double obs)
{
    if (members.empty()) throw std::invalid_argument("crps: empty ensemble");
    const double B = static_cast<double>(members.size());
    double skill = 0.0;
    double pair = 0.0;
    for (std::size_t b = 0; b < members.size(); ++b) {
        skill += std::abs(members[b] - obs);
        for (std::size_t c = b + 1; c < members.size(); ++c) pair += std::abs(members[b] - members[c]);
    }
    // The double sum counts each unordered pair twice.
    return skill / B - (2.0 * pair) / (2.0 * B * B);
}

double crps(Members members, std::span<const double> obs)
{
    const std::size_t B = check_members(members, obs.size(), "crps");
    if (obs.empty()) throw ShapeError("crps: empty field");
    std::vector<double> column(B);
    double total = 0.0;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        for (std::size_t b = 0; b < B; ++b) column[b] = members[b][k];
        total += crps_scalar(column, obs[k]);
    }
    return total / static_cast<double>(obs.size());
}

double energy_score(Members members, std::span<const double> obs)
{
    const std::size_t B = check_members(members, obs.size(), "energy_score");
    double skill = 0.0;
    double pair = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        skill += distance(members[b], obs);
        for (std::size_t c = b + 1; c < B; ++c) pair += distance(members[b], members[c]);
    }
    const double n = static_cast<double>(B);
    return skill / n - (2.0 * pair) / (2.0 * n * n);
}

double rmse(std::span<const double> pred, std::span<const double> truth)
{
    if (pred.size() != truth.size()) throw ShapeError("rmse: size mismatch");
    if (pred.empty()) throw ShapeError("rmse: empty field");
    const double d = distance(pred, truth);
    return std::sqrt(d * d / static_cast<double>(pred.size()));
}

double spread_correlation(Members members, std::span<const double> obs, std::span<const double> pred)
{
    const std::size_t B = check_members(members, obs.size(), "spread_correlation");
    if (!pred.empty() && pred.size() != obs.size()) throw ShapeError("spread_correlation: prediction size");
    double total = 0.0;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        double mean = 0.0;
        for (std::size_t b = 0; b < B; ++b) mean += members[b][k];
        mean /= static_cast<double>(B);
        double var = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double d = members[b][k] - mean;
            var += d * d;
        }
        const double spread = std::sqrt(var / static_cast<double>(B));
        const double p = pred.empty() ? mean : pred[k];
        const double diff = std::abs(p - obs[k]) - spread;
        total += diff * diff;
    }
    return std::sqrt(total);
}

double domain_average(std::span<const double> field)
{
    if (field.empty()) throw ShapeError("domain_average: empty field");
    double s = 0.0;
    for (double x : field) s += x;
    return s / static_cast<double>(field.size());
}

void ScoreCard::write_csv(std::ostream& out) const
{
    out << "variable,lead,energy,crps,rmse,spread_corr,det_rmse\n";
    out << std::setprecision(10);
    for (const auto& r : rows) {
        out << r.variable << ',' << r.lead << ',' << r.energy << ',' << r.crps << ',' << r.rmse << ','
            << r.spread_corr << ',';
        if (!std::isnan(r.det_rmse)) out << r.det_rmse;
        out << '\n';
    }
}

void ScoreCard::save_csv(const std::string& path) const
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_csv(out);
}

ScoreCard scorecard(const std::vector<std::vector<FieldState>>& members, std::span<const FieldState> truth,
                    std::span<const FieldState> det, std::span<const int> leads, std::string label)
{
    std::vector<const std::vector<FieldState>*> alive;
    for (const auto& traj : members)
        if (!traj.empty()) alive.push_back(&traj);
    if (alive.empty()) throw std::invalid_argument("scorecard: no surviving members");

    ScoreCard card;
    card.label = std::move(label);
    for (int lead : leads) {
        const std::size_t n = static_cast<std::size_t>(lead) - 1;
        if (lead < 1 || n >= truth.size() || (!det.empty() && n >= det.size()))
            throw std::out_of_range("scorecard: lead " + std::to_string(lead) + " out of range");
        for (const auto* traj : alive)
            if (n >= traj->size()) throw std::out_of_range("scorecard: lead beyond member trajectory");
        const FieldState& obs = truth[n];
        const int vars = obs.shape().vars;
        for (int v = 0; v < vars; ++v) {
            std::vector<std::span<const double>> fields;
            for (const auto* traj : alive) {
                const GridShape& ms = (*traj)[n].shape();
                if (ms.vars != vars || ms.plane() != obs.shape().plane())
                    throw ShapeError("scorecard: member grid " + ms.str() + " vs truth " + obs.shape().str());
                fields.push_back((*traj)[n].channel(v));
            }
            const auto y = obs.channel(v);
            std::vector<double> mean(y.size(), 0.0);
            for (const auto& f : fields)
                for (std::size_t k = 0; k < y.size(); ++k) mean[k] += f[k];
            for (double& m : mean) m /= static_cast<double>(fields.size());
            double spread = 0.0;
            for (std::size_t k = 0; k < y.size(); ++k) {
                double var = 0.0;
                for (const auto& f : fields) var += (f[k] - mean[k]) * (f[k] - mean[k]);
                spread += std::sqrt(var / static_cast<double>(fields.size()));
            }

            ScoreRow row;
            row.variable = v;
            row.lead = lead;
            row.energy = energy_score(fields, y);
            row.crps = crps(fields, y);
            row.rmse = rmse(mean, y);
            row.spread_corr = spread_correlation(fields, y, mean);
            row.det_rmse = det.empty() ? std::numeric_limits<double>::quiet_NaN() : rmse(det[n].channel(v), y);
            row.spread = spread / static_cast<double>(y.size());
            for (double x : {row.energy, row.crps, row.rmse, row.spread_corr, row.spread})
                if (!std::isfinite(x))
                    throw NonFiniteError("scorecard: non-finite score for variable " + std::to_string(v) +
                                         " at lead " + std::to_string(lead));
            card.rows.push_back(row);
        }
    }
    return card;
}

std::vector<DomainAverageRow> domain_average_table(const std::vector<std::vector<FieldState>>& members,
                                                   std::span<const FieldState> truth,
                                                   std::span<const FieldState> det)
{
    std::vector<DomainAverageRow> rows;
    for (std::size_t n = 0; n < truth.size(); ++n) {
        const int vars = truth[n].shape().vars;
        const int lead = static_cast<int>(n) + 1;
        for (int v = 0; v < vars; ++v) {
            rows.push_back({lead, v, "truth", domain_average(truth[n].channel(v))});
            if (n < det.size()) rows.push_back({lead, v, "det", domain_average(det[n].channel(v))});
            double sum = 0.0;
            int count = 0;
            for (std::size_t b = 0; b < members.size(); ++b) {
                if (n >= members[b].size()) continue;
                const double a = domain_average(members[b][n].channel(v));
                rows.push_back({lead, v, "member_" + std::to_string(b), a});
                sum += a;
                ++count;
            }
            if (count > 0) rows.push_back({lead, v, "mean", sum / count});
        }
    }
    return rows;
}

void write_domain_averages_csv(std::ostream& out, std::span<const DomainAverageRow> rows)
{
    out << "lead,variable,series,value\n" << std::setprecision(10);
    for (const auto& r : rows) out << r.lead << ',' << r.variable << ',' << r.series << ',' << r.value << '\n';
}

}  // namespace def::metrics
