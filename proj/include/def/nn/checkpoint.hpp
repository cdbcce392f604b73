#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "def/nn/network.hpp"

namespace def::nn {

// Checkpoint layout:
//   "DEFN" | u32 header_bytes | header JSON (UTF-8) | param_count f32
// The header holds {"spec", "step", "param_count", "meta"}; integers and
// floats are little-endian. Parameters are stored rounded to float32.

struct LoadedNetwork {
    Network network;
    std::int64_t step = 0;
    nlohmann::json meta;
};

void save_checkpoint(const std::string& path, const Network& net, std::int64_t step,
                     const nlohmann::json& meta = nlohmann::json::object());
LoadedNetwork load_checkpoint(const std::string& path);

/// Rounds every parameter to float32, matching what a save/load cycle yields.
void round_to_float(Network& net);

}  // namespace def::nn
