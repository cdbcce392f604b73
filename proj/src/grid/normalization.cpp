#include "def/grid/normalization.hpp"

#include <cmath>
#include <fstream>

namespace def {

void NormStats::validate() const
{
    if (mu.size() != sigma.size())
        throw std::invalid_argument("NormStats: mu and sigma lengths differ");
    if (!(epsilon > 0.0))
        throw std::invalid_argument("NormStats: epsilon must be positive");
    for (double s : sigma)
        if (!(s >= 0.0) || !std::isfinite(s))
            throw std::invalid_argument("NormStats: sigma must be finite and non-negative");
    for (double m : mu)
        if (!std::isfinite(m)) throw std::invalid_argument("NormStats: mu must be finite");
}

nlohmann::json NormStats::to_json() const
{
    return {{"mu", mu}, {"sigma", sigma}, {"epsilon", epsilon}};
}

NormStats NormStats::from_json(const nlohmann::json& j)
{
    NormStats s;
    s.mu = j.at("mu").get<std::vector<double>>();
    s.sigma = j.at("sigma").get<std::vector<double>>();
    s.epsilon = j.at("epsilon").get<double>();
    s.validate();
    return s;
}

void NormStats::save(const std::string& path) const
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << to_json().dump(2) << '\n';
}

NormStats NormStats::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return from_json(nlohmann::json::parse(in));
}

NormStats compute_stats(std::span<const FieldState> dataset, double epsilon)
{
    if (dataset.empty()) throw std::invalid_argument("compute_stats: empty dataset");
    const GridShape shape = dataset.front().shape();
    for (const auto& x : dataset) require_same_shape(shape, x.shape(), "compute_stats");

    NormStats stats;
    stats.epsilon = epsilon;
    const double count = static_cast<double>(dataset.size() * shape.plane());
    for (int v = 0; v < shape.vars; ++v) {
        // Two passes over the pooled sample keep the variance well conditioned
        // for channels with a large offset.
        double sum = 0.0;
        for (const auto& x : dataset)
            for (double value : x.channel(v)) sum += value;
        const double mean = sum / count;
        double sq = 0.0;
        for (const auto& x : dataset)
            for (double value : x.channel(v)) sq += (value - mean) * (value - mean);
        stats.mu.push_back(mean);
        stats.sigma.push_back(std::sqrt(sq / count));
    }
    stats.validate();
    return stats;
}

namespace {

void require_stats_match(const FieldState& x, const NormStats& stats, const char* what)
{
    if (x.shape().vars != stats.vars())
        throw ShapeError(std::string(what) + ": state has " + std::to_string(x.shape().vars) +
                         " variables, stats have " + std::to_string(stats.vars()));
}

}  // namespace

FieldState normalize(const FieldState& x, const NormStats& stats)
{
    require_stats_match(x, stats, "normalize");
    x.require_finite("normalize");
    FieldState out = x;
    for (int v = 0; v < stats.vars(); ++v) {
        const double mu = stats.mu[v];
        const double denom = stats.sigma[v] + stats.epsilon;
        for (double& value : out.channel(v)) value = (value - mu) / denom;
    }
    return out;
}

FieldState denormalize(const FieldState& y, const NormStats& stats)
{
    require_stats_match(y, stats, "denormalize");
    FieldState out = y;
    for (int v = 0; v < stats.vars(); ++v) {
        const double mu = stats.mu[v];
        const double scale = stats.sigma[v] + stats.epsilon;
        for (double& value : out.channel(v)) value = value * scale + mu;
    }
    return out;
}

std::vector<FieldState> normalize_all(std::span<const FieldState> xs, const NormStats& stats)
{
    std::vector<FieldState> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(normalize(x, stats));
    return out;
}

std::vector<FieldState> denormalize_all(std::span<const FieldState> ys, const NormStats& stats)
{
    std::vector<FieldState> out;
    out.reserve(ys.size());
    for (const auto& y : ys) out.push_back(denormalize(y, stats));
    return out;
}

std::vector<Window> make_windows(std::span<const FieldState> dataset, int horizon)
{
    if (horizon < 1) throw std::invalid_argument("make_windows: horizon must be >= 1");
    if (dataset.size() < static_cast<std::size_t>(horizon) + 1)
        throw std::invalid_argument("make_windows: dataset needs at least horizon + 1 states");
    for (std::size_t i = 1; i < dataset.size(); ++i) {
        require_same_shape(dataset[0].shape(), dataset[i].shape(), "make_windows");
        if (dataset[i].time_index() != dataset[i - 1].time_index() + 1)
            throw std::invalid_argument("make_windows: dataset is not ordered with unit stride");
    }
    std::vector<Window> pairs;
    pairs.reserve(dataset.size() - horizon);
    for (std::size_t i = 0; i + horizon < dataset.size(); ++i)
        pairs.push_back({dataset[i], dataset[i + horizon].physical_only()});
    return pairs;
}

}  // namespace def
