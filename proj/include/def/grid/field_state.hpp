#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace def {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Channel and grid extents of one snapshot. Physical channels come first,
/// forcing channels after them.
struct GridShape {
    int vars = 0;
    int forcings = 0;
    int height = 0;
    int width = 0;

    int channels() const { return vars + forcings; }
    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return plane() * channels(); }

    bool operator==(const GridShape&) const = default;

    std::string str() const;
};

/// One atmospheric-analog snapshot laid out channel-major, row-major within
/// each channel.
class FieldState {
public:
    FieldState() = default;
    explicit FieldState(GridShape shape, int time_index = 0);
    FieldState(GridShape shape, std::vector<double> data, int time_index = 0);

    const GridShape& shape() const { return shape_; }
    int time_index() const { return time_index_; }
    void set_time_index(int t) { time_index_ = t; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    std::span<const double> channel(int c) const;
    std::span<double> channel(int c);

    /// First vars·h·w scalars.
    std::span<const double> physical() const;
    std::span<double> physical();
    std::span<const double> forcing() const;
    std::span<double> forcing();

    double at(int c, int i, int j) const { return data_[index(c, i, j)]; }
    double& at(int c, int i, int j) { return data_[index(c, i, j)]; }

    bool all_finite() const;
    /// Throws NonFiniteError naming `what` if any scalar is NaN or Inf.
    void require_finite(const std::string& what) const;

    /// Copy of the physical channels only (forcings = 0).
    FieldState physical_only() const;

    bool operator==(const FieldState&) const = default;

private:
    std::size_t index(int c, int i, int j) const
    {
        return (static_cast<std::size_t>(c) * shape_.height + i) * shape_.width + j;
    }

    GridShape shape_{};
    std::vector<double> data_;
    int time_index_ = 0;
};

void require_same_shape(const GridShape& a, const GridShape& b, const std::string& what);

}  // namespace def
