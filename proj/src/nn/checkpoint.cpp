#include "def/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "def/grid/grid_file.hpp"

namespace def::nn {

namespace {
constexpr char kMagic[4] = {'D', 'E', 'F', 'N'};
}

void save_checkpoint(const std::string& path, const Network& net, std::int64_t step,
                     const nlohmann::json& meta)
{
    const nlohmann::json header = {{"spec", net.spec().to_json()},
                                   {"step", step},
                                   {"param_count", net.params().size()},
                                   {"meta", meta}};
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(kMagic, 4);
    le::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (double w : net.params().values()) le::put_f32(out, static_cast<float>(w));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

LoadedNetwork load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: " + path + " is not a network checkpoint");
    const std::uint32_t len = le::get_u32(in);
    std::string text(len, '\0');
    if (!in.read(text.data(), len)) throw std::runtime_error("load_checkpoint: truncated header");
    const auto header = nlohmann::json::parse(text);

    LoadedNetwork loaded{Network(NetSpec::from_json(header.at("spec")), 0), header.value("step", 0),
                         header.value("meta", nlohmann::json::object())};
    auto values = loaded.network.params().values();
    if (header.at("param_count").get<std::size_t>() != values.size())
        throw std::runtime_error("load_checkpoint: parameter count does not match the network spec");
    for (double& w : values) w = le::get_f32(in);
    return loaded;
}

void round_to_float(Network& net)
{
    for (double& w : net.params().values()) w = static_cast<float>(w);
}

}  // namespace def::nn
