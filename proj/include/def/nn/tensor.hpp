#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace def::nn {

/// Activation tensor laid out (channels, batch, height, width) with the
/// channel index outermost, so each channel is one contiguous row of
/// batch*height*width columns. Convolutions become a single row-major
/// product over all samples of a batch.
struct Tensor {
    int channels = 0;
    int batch = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c, int n, int h, int w, double fill = 0.0);

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    std::size_t columns() const { return pixels() * batch; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    double* row(int c) { return data.data() + c * columns(); }
    const double* row(int c) const { return data.data() + c * columns(); }

    /// Pointer to the h*w plane of channel c for sample n.
    double* plane(int c, int n) { return row(c) + n * pixels(); }
    const double* plane(int c, int n) const { return row(c) + n * pixels(); }

    bool same_shape(const Tensor& o) const
    {
        return channels == o.channels && batch == o.batch && height == o.height && width == o.width;
    }
    std::string shape_str() const;
};

}  // namespace def::nn
