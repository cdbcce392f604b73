#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "def/grid/field_state.hpp"

namespace def::metrics {

/// Ensemble of equally sized fields.
using Members = std::span<const std::span<const double>>;

/// (1/B) sum_b |x_b - y| - (1/2B^2) sum_b sum_b' |x_b - x_b'|.
double crps_scalar(std::span<const double> members, double obs);
/// Mean over grid points of the pointwise CRPS.
double crps(Members members, std::span<const double> obs);

/// (1/B) sum_b ||x_b - y|| - (1/2B^2) sum_b sum_b' ||x_b - x_b'|| over the
/// flattened field.
double energy_score(Members members, std::span<const double> obs);

double rmse(std::span<const double> pred, std::span<const double> truth);

/// || |pred - obs| - spread ||_2 with the pointwise population spread of the
/// members. An empty `pred` means the ensemble mean.
double spread_correlation(Members members, std::span<const double> obs, std::span<const double> pred = {});

double domain_average(std::span<const double> field);

struct ScoreRow {
    int variable = 0;
    int lead = 0;
    double energy = 0.0;
    double crps = 0.0;
    double rmse = 0.0;
    double spread_corr = 0.0;
    /// Deterministic-baseline RMSE; NaN (an empty CSV field) without a baseline.
    double det_rmse = 0.0;
    /// Domain-mean ensemble spread.
    double spread = 0.0;
};

struct ScoreCard {
    std::string label;
    std::vector<ScoreRow> rows;

    /// Header: variable,lead,energy,crps,rmse,spread_corr,det_rmse
    void write_csv(std::ostream& out) const;
    void save_csv(const std::string& path) const;
};

/// Scores member trajectories against the truth at the requested leads
/// (1-based). members[b][n], truth[n] and det[n] all refer to lead n + 1;
/// empty member trajectories are skipped. Inputs should be in physical units.
ScoreCard scorecard(const std::vector<std::vector<FieldState>>& members, std::span<const FieldState> truth,
                    std::span<const FieldState> det, std::span<const int> leads, std::string label = {});

struct DomainAverageRow {
    int lead = 0;
    int variable = 0;
    /// "truth", "mean", "det" or "member_<b>".
    std::string series;
    double value = 0.0;
};

/// Domain averages of every member, the ensemble mean, the truth and the
/// deterministic baseline at every lead.
std::vector<DomainAverageRow> domain_average_table(const std::vector<std::vector<FieldState>>& members,
                                                   std::span<const FieldState> truth,
                                                   std::span<const FieldState> det);
void write_domain_averages_csv(std::ostream& out, std::span<const DomainAverageRow> rows);

}  // namespace def::metrics
