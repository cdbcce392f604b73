#include "def/nn/batch.hpp"

#include <algorithm>
#include <stdexcept>

namespace def::nn {

Tensor pack(std::span<const FieldState* const> states, int first, int count)
{
    if (states.empty()) throw std::invalid_argument("pack: empty batch");
    const GridShape shape = states.front()->shape();
    if (first < 0 || count <= 0 || first + count > shape.channels())
        throw std::invalid_argument("pack: channel range out of bounds for " + shape.str());
    const int N = static_cast<int>(states.size());
    Tensor t(count, N, shape.height, shape.width);
    for (int n = 0; n < N; ++n) {
        require_same_shape(shape, states[n]->shape(), "pack");
        for (int c = 0; c < count; ++c) {
            const auto src = states[n]->channel(first + c);
            std::copy(src.begin(), src.end(), t.plane(c, n));
        }
    }
    return t;
}

Tensor pack(std::span<const FieldState> states, int first, int count)
{
    std::vector<const FieldState*> ptrs;
    ptrs.reserve(states.size());
    for (const auto& s : states) ptrs.push_back(&s);
    return pack(std::span<const FieldState* const>(ptrs), first, count);
}

void unpack(const Tensor& t, int n, std::span<double> dst)
{
    const std::size_t hw = t.pixels();
    if (dst.size() != hw * t.channels) throw std::invalid_argument("unpack: destination size mismatch");
    for (int c = 0; c < t.channels; ++c) {
        const double* src = t.plane(c, n);
        std::copy(src, src + hw, dst.begin() + c * hw);
    }
}

}  // namespace def::nn
