#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "def/grid/field_state.hpp"

namespace def {

/// Per-variable mean and population standard deviation, pooled over every grid
/// point of every state in the training set. Forcing channels carry no stats.
struct NormStats {
    std::vector<double> mu;
    std::vector<double> sigma;
    double epsilon = 1e-6;

    int vars() const { return static_cast<int>(mu.size()); }
    void validate() const;

    nlohmann::json to_json() const;
    static NormStats from_json(const nlohmann::json& j);

    void save(const std::string& path) const;
    static NormStats load(const std::string& path);
};

NormStats compute_stats(std::span<const FieldState> dataset, double epsilon = 1e-6);

/// (x - mu) / (sigma + eps) on physical channels; forcings copied bit-for-bit.
FieldState normalize(const FieldState& x, const NormStats& stats);

/// y * sigma + mu on physical channels; forcings copied bit-for-bit.
FieldState denormalize(const FieldState& y, const NormStats& stats);

std::vector<FieldState> normalize_all(std::span<const FieldState> xs, const NormStats& stats);
std::vector<FieldState> denormalize_all(std::span<const FieldState> ys, const NormStats& stats);

/// Training pair: full input state and physical-only target `horizon` steps ahead.
struct Window {
    FieldState input;
    FieldState target;
};

std::vector<Window> make_windows(std::span<const FieldState> dataset, int horizon = 1);

}  // namespace def
