#include "def/grid/grid_file.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace def {

namespace le {

void put_u32(std::ostream& out, std::uint32_t v)
{
    const std::array<char, 4> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                    static_cast<char>((v >> 16) & 0xff),
                                    static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes.data(), 4);
}

void put_f32(std::ostream& out, float v)
{
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32(std::istream& in)
{
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4))
        throw std::runtime_error("unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& in)
{
    return std::bit_cast<float>(get_u32(in));
}

}  // namespace le

namespace {
constexpr char kMagic[4] = {'D', 'E', 'F', '1'};
}

void write_grid_stream(std::ostream& out, std::span<const FieldState> states)
{
    GridShape shape{};
    if (!states.empty()) shape = states.front().shape();
    for (const auto& s : states) require_same_shape(shape, s.shape(), "write_grid_file");

    out.write(kMagic, 4);
    le::put_u32(out, static_cast<std::uint32_t>(shape.vars));
    le::put_u32(out, static_cast<std::uint32_t>(shape.forcings));
    le::put_u32(out, static_cast<std::uint32_t>(shape.height));
    le::put_u32(out, static_cast<std::uint32_t>(shape.width));
    le::put_u32(out, static_cast<std::uint32_t>(states.size()));
    for (const auto& s : states)
        for (double x : s.data()) le::put_f32(out, static_cast<float>(x));
    if (!out) throw std::runtime_error("write_grid_file: write failed");
}

std::vector<FieldState> read_grid_stream(std::istream& in, int first_time_index)
{
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("read_grid_file: bad magic (expected DEF1)");
    GridShape shape;
    shape.vars = static_cast<int>(le::get_u32(in));
    shape.forcings = static_cast<int>(le::get_u32(in));
    shape.height = static_cast<int>(le::get_u32(in));
    shape.width = static_cast<int>(le::get_u32(in));
    const std::uint32_t n = le::get_u32(in);

    std::vector<FieldState> states;
    states.reserve(n);
    for (std::uint32_t k = 0; k < n; ++k) {
        std::vector<double> data(shape.size());
        for (double& x : data) x = le::get_f32(in);
        states.emplace_back(shape, std::move(data), first_time_index + static_cast<int>(k));
    }
    return states;
}

void write_grid_file(const std::string& path, std::span<const FieldState> states)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_grid_stream(out, states);
}

std::vector<FieldState> read_grid_file(const std::string& path, int first_time_index)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_grid_stream(in, first_time_index);
}

}  // namespace def
