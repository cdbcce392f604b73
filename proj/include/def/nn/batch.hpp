#pragma once

#include <span>
#include <vector>

#include "def/grid/field_state.hpp"
#include "def/nn/tensor.hpp"

namespace def::nn {

/// Stacks channels [first, first+count) of each state into one batch tensor.
Tensor pack(std::span<const FieldState> states, int first, int count);
Tensor pack(std::span<const FieldState* const> states, int first, int count);

/// Writes sample n of `t` (all channels) into `dst`, which holds
/// t.channels * h * w scalars in FieldState channel order.
void unpack(const Tensor& t, int n, std::span<double> dst);

}  // namespace def::nn
