#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "def/grid/field_state.hpp"

namespace def {

// DEF1 grid file:
//   "DEF1" | u32 v | u32 f | u32 h | u32 w | u32 n_states | n_states*(v+f)*h*w f32
// All integers and floats little-endian. States are read back with
// time_index = first_time_index + position.

void write_grid_file(const std::string& path, std::span<const FieldState> states);
std::vector<FieldState> read_grid_file(const std::string& path, int first_time_index = 0);

void write_grid_stream(std::ostream& out, std::span<const FieldState> states);
std::vector<FieldState> read_grid_stream(std::istream& in, int first_time_index = 0);

namespace le {

void put_u32(std::ostream& out, std::uint32_t v);
void put_f32(std::ostream& out, float v);
std::uint32_t get_u32(std::istream& in);
float get_f32(std::istream& in);

}  // namespace le

}  // namespace def
