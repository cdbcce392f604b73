#include "def/grid/field_state.hpp"

#include <algorithm>
#include <cmath>

namespace def {

std::string GridShape::str() const
{
    return "(v=" + std::to_string(vars) + ", f=" + std::to_string(forcings) +
           ", h=" + std::to_string(height) + ", w=" + std::to_string(width) + ")";
}

FieldState::FieldState(GridShape shape, int time_index)
    : shape_(shape), data_(shape.size(), 0.0), time_index_(time_index)
{
    if (shape.vars < 0 || shape.forcings < 0 || shape.height <= 0 || shape.width <= 0)
        throw ShapeError("invalid grid shape " + shape.str());
}

FieldState::FieldState(GridShape shape, std::vector<double> data, int time_index)
    : shape_(shape), data_(std::move(data)), time_index_(time_index)
{
    if (shape.vars < 0 || shape.forcings < 0 || shape.height <= 0 || shape.width <= 0)
        throw ShapeError("invalid grid shape " + shape.str());
    if (data_.size() != shape.size())
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape.str());
}

std::span<const double> FieldState::channel(int c) const
{
    return std::span<const double>(data_).subspan(c * shape_.plane(), shape_.plane());
}

std::span<double> FieldState::channel(int c)
{
    return std::span<double>(data_).subspan(c * shape_.plane(), shape_.plane());
}

std::span<const double> FieldState::physical() const
{
    return std::span<const double>(data_).first(shape_.vars * shape_.plane());
}

std::span<double> FieldState::physical()
{
    return std::span<double>(data_).first(shape_.vars * shape_.plane());
}

std::span<const double> FieldState::forcing() const
{
    return std::span<const double>(data_).subspan(shape_.vars * shape_.plane());
}

std::span<double> FieldState::forcing()
{
    return std::span<double>(data_).subspan(shape_.vars * shape_.plane());
}

bool FieldState::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void FieldState::require_finite(const std::string& what) const
{
    if (!all_finite())
        throw NonFiniteError(what + ": state at time index " + std::to_string(time_index_) +
                             " contains non-finite values");
}

FieldState FieldState::physical_only() const
{
    GridShape s = shape_;
    s.forcings = 0;
    auto phys = physical();
    return FieldState(s, std::vector<double>(phys.begin(), phys.end()), time_index_);
}

void require_same_shape(const GridShape& a, const GridShape& b, const std::string& what)
{
    if (a != b)
        throw ShapeError(what + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace def
