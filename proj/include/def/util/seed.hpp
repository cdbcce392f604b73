#pragma once

#include <cstdint>

namespace def {

/// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed `index` of `parent`. Children of one parent are independent of
/// how many siblings are drawn.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index)
{
    return mix64(mix64(parent) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace def
