// def: command-line front end for the synthetic-data, training, ensemble and
// verification pipeline.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "def/diffusion/denoiser.hpp"
#include "def/diffusion/sampler.hpp"
#include "def/dynamics/advection.hpp"
#include "def/ensemble/ensemble.hpp"
#include "def/forecaster/forecaster.hpp"
#include "def/grid/grid_file.hpp"
#include "def/grid/normalization.hpp"
#include "def/metrics/metrics.hpp"
#include "def/nn/checkpoint.hpp"
#include "def/util/seed.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace def;

namespace {

// Bad flags, bad values or a bad config: exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return json::parse(in);
}

void write_json(const std::string& path, const json& j)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

void ensure_parent(const std::string& path)
{
    const fs::path p = fs::path(path).parent_path();
    if (!p.empty()) fs::create_directories(p);
}

std::vector<double> parse_doubles(const std::string& s, const std::string& what)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw UsageError(what + ": '" + item + "' is not a number");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError(what + ": empty list");
    return out;
}

std::vector<int> parse_ints(const std::string& s, const std::string& what)
{
    std::vector<int> out;
    for (double v : parse_doubles(s, what)) {
        if (v != std::floor(v)) throw UsageError(what + ": " + std::to_string(v) + " is not an integer");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

// "32x16" -> height 32, width 16.
std::pair<int, int> parse_grid(const std::string& s)
{
    const auto x = s.find('x');
    if (x == std::string::npos) throw UsageError("--grid: expected HxW, got '" + s + "'");
    const auto h = parse_ints(s.substr(0, x), "--grid");
    const auto w = parse_ints(s.substr(x + 1), "--grid");
    if (h.size() != 1 || w.size() != 1) throw UsageError("--grid: expected HxW, got '" + s + "'");
    return {h[0], w[0]};
}

std::string format_number(double v)
{
    std::ostringstream os;
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Config handling

// Every option of the subcommand with its effective value, as JSON.
json effective_config(const CLI::App& sub)
{
    json cfg = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
        const std::string name = opt->get_single_name();
        if (name == "help" || name == "config" || name.empty()) continue;
        if (opt->get_expected_max() == 0) {
            cfg[name] = opt->count() > 0;
            continue;
        }
        std::string value = opt->count() > 0 ? opt->results().back() : opt->get_default_str();
        json parsed = json::parse(value, nullptr, false);
        if (!parsed.is_discarded() && (parsed.is_number() || parsed.is_boolean()))
            cfg[name] = parsed;
        else
            cfg[name] = value;
    }
    return cfg;
}

// Fills options not given on the command line from a JSON file: either a flat
// object of option values or a config echo written by an earlier run.
void apply_config_file(CLI::App& sub, const std::string& path)
{
    json j = read_json(path);
    if (j.contains("config") && j["config"].is_object()) j = j["config"];
    if (!j.is_object()) throw UsageError(path + ": config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        CLI::Option* opt = sub.get_option_no_throw("--" + key);
        if (opt == nullptr) throw UsageError(path + ": unknown option '" + key + "' for " + sub.get_name());
        if (opt->count() > 0) continue;  // the command line wins
        if (opt->get_expected_max() == 0) {
            if (!value.is_boolean()) throw UsageError(path + ": '" + key + "' must be true or false");
            if (value.get<bool>()) {
                opt->add_result("true");
                opt->run_callback();
            }
            continue;
        }
        if (value.is_string() && value.get<std::string>().empty()) continue;
        std::string text;
        if (value.is_string())
            text = value.get<std::string>();
        else if (value.is_number_integer())
            text = std::to_string(value.get<long long>());
        else if (value.is_number())
            text = format_number(value.get<double>());
        else
            throw UsageError(path + ": '" + key + "' must be a string or number");
        opt->add_result(text);
        try {
            opt->run_callback();
        } catch (const CLI::ParseError& e) {
            throw UsageError(path + ": '" + key + "': " + e.what());
        }
    }
}

void check_required(const CLI::App& sub)
{
    for (const CLI::Option* opt : sub.get_options())
        if (opt->get_group() == "Required" && opt->count() == 0)
            throw UsageError(sub.get_name() + ": " + opt->get_name() + " is required");
}

json echo(const CLI::App& sub, json extra = json::object())
{
    const json cfg = effective_config(sub);
    json out = {{"command", sub.get_name()}, {"config", cfg}, {"config_hash", hex64(fnv1a(cfg.dump()))}};
    for (const auto& [k, v] : extra.items()) out[k] = v;
    return out;
}

// ---------------------------------------------------------------------------
// Data files

struct Dataset {
    std::vector<FieldState> states;  // physical units
    dynamics::DynamicsConfig dynamics;
    int first_time_index = 0;
    int train_states = 0;
};

Dataset load_dataset(const std::string& path)
{
    const std::string side = path + ".json";
    if (!fs::exists(side)) throw std::runtime_error("missing sidecar " + side + " (written by generate-data)");
    const json meta = read_json(side);
    Dataset d;
    d.dynamics = dynamics::DynamicsConfig::from_json(meta.at("dynamics"));
    d.first_time_index = meta.at("first_time_index").get<int>();
    d.train_states = meta.at("train_states").get<int>();
    d.states = read_grid_file(path, d.first_time_index);
    if (d.states.empty()) throw std::runtime_error(path + " holds no states");
    if (d.states.front().shape() != d.dynamics.shape())
        throw std::runtime_error(path + ": grid " + d.states.front().shape().str() + " disagrees with its sidecar");
    return d;
}

std::span<const FieldState> train_split(const Dataset& d)
{
    if (d.train_states < 2) throw std::runtime_error("training split needs at least two states");
    return std::span(d.states).first(d.train_states);
}

void write_loss_csv(const std::string& path, const std::vector<double>& curve, const std::string& column)
{
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "epoch," << column << "\n" << std::setprecision(10);
    for (std::size_t e = 0; e < curve.size(); ++e) out << e + 1 << "," << curve[e] << "\n";
}

std::string replace_extension(const std::string& path, const std::string& ext)
{
    return fs::path(path).replace_extension(ext).string();
}

int default_start(const Dataset& d, int start)
{
    return start >= 0 ? start : d.train_states;
}

const FieldState& initial_state(const Dataset& d, int start, int leads)
{
    if (start < 0 || start >= static_cast<int>(d.states.size()))
        throw UsageError("--start " + std::to_string(start) + " outside the " + std::to_string(d.states.size()) +
                         " states of the data file");
    if (leads < 1) throw UsageError("--lead must be >= 1");
    return d.states[start];
}

struct Models {
    forecast::ForecasterModel forecaster;
    std::optional<diffusion::DenoiserModel> denoiser;
};

Models load_models(const std::string& ckpt_f, const std::string& ckpt_d)
{
    Models m{forecast::ForecasterModel::load(ckpt_f), std::nullopt};
    if (!ckpt_d.empty()) {
        m.denoiser = diffusion::DenoiserModel::load(ckpt_d);
        if (m.denoiser->vars() != m.forecaster.shape().vars)
            throw std::runtime_error("forecaster and denoiser disagree on the variable count");
    }
    return m;
}

std::vector<FieldState> to_physical(std::span<const FieldState> xs, const NormStats& st)
{
    return denormalize_all(xs, st);
}

struct RunFiles {
    json meta;
    std::vector<std::vector<FieldState>> members;  // physical units, survivors only
    std::vector<FieldState> det;
};

// Writes run.def1 (surviving members concatenated, lead 1..N each), the
// deterministic baseline and the sidecar.
json save_run(const std::string& out, const ensemble::EnsembleRun& run, const std::vector<FieldState>& det,
              const NormStats& st, json meta)
{
    ensure_parent(out);
    std::vector<FieldState> flat;
    std::vector<int> survivors;
    for (int b = 0; b < run.members(); ++b) {
        if (!run.alive(b)) continue;
        survivors.push_back(b);
        for (const auto& x : run.trajectories[b]) flat.push_back(denormalize(x, st));
    }
    write_grid_file(out, flat);
    const std::string det_path = replace_extension(out, ".det.def1");
    write_grid_file(det_path, to_physical(det, st));

    std::vector<std::string> seeds;
    for (auto s : run.seeds) seeds.push_back(std::to_string(s));
    meta["ensemble"] = run.config.to_json();
    meta["label"] = run.config.guidance.label();
    meta["member_seeds"] = seeds;
    meta["members"] = survivors;
    meta["casualties"] = run.casualties;
    meta["leads"] = run.leads();
    meta["deterministic"] = fs::path(det_path).filename().string();
    write_json(out + ".json", meta);
    return meta;
}

RunFiles load_run(const std::string& path)
{
    RunFiles r;
    r.meta = read_json(path + ".json");
    const int N = r.meta.at("leads").get<int>();
    const int first = r.meta.at("start_time_index").get<int>() + 1;
    const auto flat = read_grid_file(path);
    const auto members = r.meta.at("members").get<std::vector<int>>();
    if (flat.size() != members.size() * static_cast<std::size_t>(N))
        throw std::runtime_error(path + ": state count disagrees with its sidecar");
    for (std::size_t b = 0; b < members.size(); ++b) {
        std::vector<FieldState> traj(flat.begin() + b * N, flat.begin() + (b + 1) * N);
        for (int n = 0; n < N; ++n) traj[n].set_time_index(first + n);
        r.members.push_back(std::move(traj));
    }
    const std::string det = (fs::path(path).parent_path() / r.meta.at("deterministic").get<std::string>()).string();
    if (fs::exists(det)) r.det = read_grid_file(det, first);
    return r;
}

// Truth states at lead 1..N after the run's start.
std::vector<FieldState> truth_for(const Dataset& truth, int start_time_index, int N)
{
    std::vector<FieldState> out;
    for (int n = 1; n <= N; ++n) {
        const int idx = start_time_index + n - truth.first_time_index;
        if (idx < 0 || idx >= static_cast<int>(truth.states.size()))
            throw std::runtime_error("truth file does not cover time index " + std::to_string(start_time_index + n));
        out.push_back(truth.states[idx]);
    }
    return out;
}

void check_leads(const std::vector<int>& leads, int N)
{
    for (int l : leads)
        if (l < 1 || l > N)
            throw UsageError("--leads: lead " + std::to_string(l) + " outside 1.." + std::to_string(N));
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenerateArgs {
    std::string out;
    int steps = 1250;
    std::uint64_t seed = 1;
    std::string grid = "32x16";
    int vars = 4;
    int forcings = 4;
    int spinup = 0;
    double train_fraction = 0.8;
};

void run_generate(const CLI::App& sub, const GenerateArgs& a)
{
    dynamics::DynamicsConfig cfg;
    std::tie(cfg.height, cfg.width) = parse_grid(a.grid);
    cfg.vars = a.vars;
    cfg.forcings = a.forcings;
    cfg.seed = a.seed;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (a.steps < 1) throw UsageError("--steps must be >= 1");
    if (a.spinup < 0) throw UsageError("--spinup must be >= 0");
    if (!(a.train_fraction > 0.0 && a.train_fraction <= 1.0)) throw UsageError("--train-fraction must lie in (0, 1]");

    const auto traj = dynamics::generate_trajectory(cfg, a.spinup + a.steps);
    const std::span<const FieldState> kept = std::span(traj).subspan(a.spinup);
    ensure_parent(a.out);
    write_grid_file(a.out, kept);
    const int train = static_cast<int>(std::floor(a.train_fraction * a.steps));
    write_json(a.out + ".json", echo(sub, {{"dynamics", cfg.to_json()},
                                           {"first_time_index", a.spinup},
                                           {"states", a.steps},
                                           {"train_states", train}}));
    std::cout << "wrote " << a.steps << " states (" << train << " for training) to " << a.out << "\n";
}

struct TrainForecasterArgs {
    std::string data;
    std::string ckpt;
    std::string loss_csv;
    int epochs = 30;
    int batch = 32;
    double lr = 1e-3;
    double tau = 1.0;
    std::uint64_t seed = 0;
    bool residual = false;
};

void run_train_forecaster(const CLI::App& sub, const TrainForecasterArgs& a)
{
    forecast::ForecasterTrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.batch = a.batch;
    cfg.lr = a.lr;
    cfg.tau = a.tau;
    cfg.seed = a.seed;
    if (cfg.epochs < 0 || cfg.batch < 1 || !(cfg.lr > 0.0) || !(cfg.tau > 0.0))
        throw UsageError("need epochs >= 0, batch >= 1, lr > 0 and tau > 0");

    const Dataset d = load_dataset(a.data);
    const auto train = train_split(d);
    const NormStats st = compute_stats(train);
    const auto pairs = make_windows(normalize_all(train, st));
    const GridShape shape = d.dynamics.shape();
    const auto result = forecast::train_forecaster(pairs, forecast::default_forecaster_spec(shape.vars, shape.forcings),
                                                   st, d.dynamics, cfg, a.residual);
    ensure_parent(a.ckpt);
    result.model.save(a.ckpt);
    st.save(replace_extension(a.ckpt, ".stats.json"));
    const std::string loss = a.loss_csv.empty() ? replace_extension(a.ckpt, ".loss.csv") : a.loss_csv;
    write_loss_csv(loss, result.loss_curve, "mse");
    write_json(a.ckpt + ".json", echo(sub, {{"trained_steps", result.model.trained_steps()}, {"loss_csv", loss}}));
    if (!result.loss_curve.empty())
        std::cout << "forecaster mse " << result.loss_curve.front() << " -> " << result.loss_curve.back() << "\n";
}

struct TrainDiffusionArgs {
    std::string data;
    std::string ckpt_f;
    std::string ckpt;
    std::string loss_csv;
    int epochs = 60;
    int batch = 32;
    double lr = 2e-4;
    double tau = 1.0;
    double cond_prob = 0.9;
    double advance_prob = 0.5;
    double ema = 0.999;
    bool prior_skip = true;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    std::uint64_t seed = 0;
};

void run_train_diffusion(const CLI::App& sub, const TrainDiffusionArgs& a)
{
    diffusion::DiffusionTrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.batch = a.batch;
    cfg.lr = a.lr;
    cfg.tau = a.tau;
    cfg.cond_prob = a.cond_prob;
    cfg.advance_prob = a.advance_prob;
    cfg.ema = a.ema;
    cfg.prior_skip = a.prior_skip;
    cfg.seed = a.seed;
    if (cfg.epochs < 0 || cfg.batch < 1 || !(cfg.lr > 0.0) || !(cfg.tau > 0.0))
        throw UsageError("need epochs >= 0, batch >= 1, lr > 0 and tau > 0");
    if (!(cfg.cond_prob >= 0.0 && cfg.cond_prob <= 1.0)) throw UsageError("--lambda must lie in [0, 1]");
    if (!(cfg.ema >= 0.0 && cfg.ema < 1.0)) throw UsageError("--ema must lie in [0, 1)");
    if (!(cfg.advance_prob >= 0.0 && cfg.advance_prob <= 1.0))
        throw UsageError("--advance-prob must lie in [0, 1]");
    std::optional<diffusion::NoiseSchedule> schedule;
    try {
        schedule = diffusion::NoiseSchedule::linear(a.T, a.beta_start, a.beta_end);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const Dataset d = load_dataset(a.data);
    const auto fc = forecast::ForecasterModel::load(a.ckpt_f);
    if (fc.shape() != d.dynamics.shape()) throw std::runtime_error("forecaster grid disagrees with the data");
    const auto train = normalize_all(train_split(d), fc.stats());
    const auto result =
        diffusion::train_diffusion(train, &fc, diffusion::default_denoiser_spec(fc.shape().vars), *schedule, cfg);
    ensure_parent(a.ckpt);
    result.model.save(a.ckpt, static_cast<std::int64_t>(result.loss_curve.size()), {{"stats", fc.stats().to_json()}});
    const std::string loss = a.loss_csv.empty() ? replace_extension(a.ckpt, ".loss.csv") : a.loss_csv;
    write_loss_csv(loss, result.loss_curve, "loss");
    write_json(a.ckpt + ".json", echo(sub, {{"loss_csv", loss},
                                            {"conditional_samples", result.counters.conditional},
                                            {"unconditional_samples", result.counters.unconditional},
                                            {"advanced_samples", result.counters.advanced}}));
    if (!result.loss_curve.empty())
        std::cout << "denoiser loss " << result.loss_curve.front() << " -> " << result.loss_curve.back() << "\n";
}

struct GuidanceArgs {
    double omega = 0.5;
    int walks = 1;
    std::string solver = "dpm2m";
    int steps = 20;

    diffusion::GuidanceConfig config(int T) const
    {
        diffusion::GuidanceConfig g;
        g.omega = omega;
        g.walks = walks;
        try {
            g.solver = diffusion::solver_from_string(solver);
            g.steps = steps;
            g.validate(T);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return g;
    }
};

void add_guidance_options(CLI::App* sub, GuidanceArgs& g, bool lists)
{
    if (!lists) {
        sub->add_option("--omega", g.omega, "Guidance scale")->capture_default_str();
        sub->add_option("--walks", g.walks, "Perturbation passes per state")->capture_default_str();
    }
    sub->add_option("--solver", g.solver, "ancestral or dpm2m")->capture_default_str();
    sub->add_option("--steps", g.steps, "DPM-Solver++ steps")->capture_default_str();
}

struct RolloutArgs {
    std::string ckpt_f;
    std::string ckpt_d;
    std::string data;
    std::string out;
    int start = -1;
    int members = 32;
    int lead = 40;
    std::uint64_t seed = 0;
    bool perturb_first_only = false;
    double divergence_bound = 1e3;
    GuidanceArgs guidance;
};

ensemble::EnsembleConfig ensemble_config(const RolloutArgs& a, const diffusion::GuidanceConfig& g)
{
    ensemble::EnsembleConfig cfg;
    cfg.members = a.members;
    cfg.leads = a.lead;
    cfg.guidance = g;
    cfg.perturb_first_only = a.perturb_first_only;
    cfg.master_seed = a.seed;
    cfg.divergence_bound = a.divergence_bound;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

void run_rollout(const CLI::App& sub, const RolloutArgs& a)
{
    const Dataset d = load_dataset(a.data);
    const Models m = load_models(a.ckpt_f, a.ckpt_d);
    const int T = m.denoiser ? m.denoiser->schedule().steps() : 1000;
    const auto cfg = ensemble_config(a, a.guidance.config(T));
    const int start = default_start(d, a.start);
    const FieldState x0 = normalize(initial_state(d, start, a.lead), m.forecaster.stats());

    const auto run = ensemble::run_ensemble(x0, m.forecaster, m.denoiser ? &*m.denoiser : nullptr, cfg);
    const auto det = m.forecaster.rollout(x0, a.lead);
    const json meta = save_run(a.out, run, det, m.forecaster.stats(),
                               echo(sub, {{"start_index", start}, {"start_time_index", x0.time_index()}}));
    std::cout << "wrote " << meta["members"].size() << " members x " << a.lead << " leads to " << a.out;
    if (!run.casualties.empty()) std::cout << " (" << run.casualties.size() << " diverged)";
    std::cout << "\n";
}

struct EvaluateArgs {
    std::string run;
    std::string truth;
    std::string leads = "10,20,30,40";
    std::string out;
    std::string domain_out;
};

void run_evaluate(const CLI::App& sub, const EvaluateArgs& a)
{
    const RunFiles r = load_run(a.run);
    const Dataset truth = load_dataset(a.truth);
    const int N = r.meta.at("leads").get<int>();
    const auto leads = parse_ints(a.leads, "--leads");
    check_leads(leads, N);
    const auto y = truth_for(truth, r.meta.at("start_time_index").get<int>(), N);
    if (r.members.empty()) throw std::runtime_error(a.run + ": every member diverged");
    const auto card = metrics::scorecard(r.members, y, r.det, leads, r.meta.value("label", ""));
    ensure_parent(a.out);
    card.save_csv(a.out);
    const std::string domain = a.domain_out.empty() ? replace_extension(a.out, ".domain.csv") : a.domain_out;
    {
        std::ofstream out(domain);
        if (!out) throw std::runtime_error("cannot write " + domain);
        metrics::write_domain_averages_csv(out, metrics::domain_average_table(r.members, y, r.det));
    }
    write_json(a.out + ".json", echo(sub, {{"label", card.label}, {"domain_csv", domain}}));
    std::cout << "wrote " << card.rows.size() << " rows to " << a.out << "\n";
}

struct SweepArgs {
    RolloutArgs rollout;
    std::string omegas = "0.3,0.5,0.7,1.0";
    std::string walks = "1,3,7";
    std::string leads = "10,20,30,40";
    std::string out_dir = "sweep";
};

void write_comparison_header(std::ostream& out)
{
    out << "label,omega,walks,variable,lead,energy,crps,rmse,spread_corr,det_rmse,spread\n";
}

void run_sweep(const CLI::App& sub, const SweepArgs& a)
{
    const auto omegas = parse_doubles(a.omegas, "--omega");
    const auto walks = parse_ints(a.walks, "--walks");
    const auto leads = parse_ints(a.leads, "--leads");
    check_leads(leads, a.rollout.lead);

    const Dataset d = load_dataset(a.rollout.data);
    const Models m = load_models(a.rollout.ckpt_f, a.rollout.ckpt_d);
    if (!m.denoiser) throw UsageError("sweep needs --ckpt-d");
    const int T = m.denoiser->schedule().steps();
    // Validate every cell before any work starts.
    std::vector<ensemble::EnsembleConfig> cells;
    for (double w : omegas)
        for (int k : walks) {
            GuidanceArgs g = a.rollout.guidance;
            g.omega = w;
            g.walks = k;
            cells.push_back(ensemble_config(a.rollout, g.config(T)));
        }

    const int start = default_start(d, a.rollout.start);
    const FieldState x0 = normalize(initial_state(d, start, a.rollout.lead), m.forecaster.stats());
    const auto y = truth_for(d, x0.time_index(), a.rollout.lead);
    const auto det = to_physical(m.forecaster.rollout(x0, a.rollout.lead), m.forecaster.stats());

    fs::create_directories(a.out_dir);
    const std::string merged_path = (fs::path(a.out_dir) / "comparison.csv").string();
    std::ofstream merged(merged_path);
    if (!merged) throw std::runtime_error("cannot write " + merged_path);
    write_comparison_header(merged);
    merged << std::setprecision(10);
    json files = json::array();
    for (const auto& cfg : cells) {
        const auto run = ensemble::run_ensemble(x0, m.forecaster, &*m.denoiser, cfg);
        std::vector<std::vector<FieldState>> members;
        for (int b = 0; b < run.members(); ++b)
            if (run.alive(b)) members.push_back(to_physical(run.trajectories[b], m.forecaster.stats()));
        if (members.empty()) throw std::runtime_error(cfg.guidance.label() + ": every member diverged");
        const auto card = metrics::scorecard(members, y, det, leads, cfg.guidance.label());
        const std::string name = "scorecard_w" + format_number(cfg.guidance.omega) + "_k" +
                                 std::to_string(cfg.guidance.walks) + ".csv";
        card.save_csv((fs::path(a.out_dir) / name).string());
        for (const auto& row : card.rows) {
            merged << '"' << card.label << "\"," << cfg.guidance.omega << "," << cfg.guidance.walks << ","
                   << row.variable << "," << row.lead << "," << row.energy << "," << row.crps << "," << row.rmse
                   << "," << row.spread_corr << "," << row.det_rmse << "," << row.spread << "\n";
        }
        files.push_back({{"label", card.label}, {"scorecard", name}, {"casualties", run.casualties}});
        std::cout << card.label << " -> " << name << "\n";
    }
    write_json((fs::path(a.out_dir) / "sweep.json").string(),
               echo(sub, {{"start_index", start}, {"start_time_index", x0.time_index()}, {"cells", files}}));
}

struct PerturbArgs {
    std::string ckpt;
    std::string data;
    std::string out;
    int index = -1;
    int samples = 1;
    std::uint64_t seed = 0;
    GuidanceArgs guidance;
};

void run_perturb(const CLI::App& sub, const PerturbArgs& a)
{
    const auto loaded = nn::load_checkpoint(a.ckpt);
    if (!loaded.meta.contains("stats")) throw std::runtime_error(a.ckpt + " carries no normalization stats");
    const NormStats st = NormStats::from_json(loaded.meta.at("stats"));
    const auto den = diffusion::DenoiserModel::load(a.ckpt);
    const auto g = a.guidance.config(den.schedule().steps());
    if (a.samples < 1) throw UsageError("--samples must be >= 1");

    const Dataset d = load_dataset(a.data);
    const int index = default_start(d, a.index);
    const FieldState x = normalize(initial_state(d, index, 1), st);
    const std::vector<FieldState> xs(a.samples, x);
    std::vector<std::uint64_t> seeds(a.samples);
    for (int s = 0; s < a.samples; ++s) seeds[s] = derive_seed(a.seed, static_cast<std::uint64_t>(s));
    const auto out = diffusion::perturb_batch(den, xs, g, seeds);
    ensure_parent(a.out);
    write_grid_file(a.out, to_physical(out, st));
    write_json(a.out + ".json", echo(sub, {{"index", index}, {"time_index", x.time_index()}, {"label", g.label()}}));
    std::cout << "wrote " << a.samples << " perturbed states to " << a.out << "\n";
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Diffusion-perturbed ensemble forecasting on a synthetic system", "def"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::string config_path;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON file of option values (or a config echo)")
            ->check(CLI::ExistingFile);
    };

    GenerateArgs gen;
    auto* s_gen = app.add_subcommand("generate-data", "Integrate the synthetic system and write a DEF1 file");
    s_gen->add_option("--out", gen.out, "Output DEF1 file")->group("Required");
    s_gen->add_option("--steps", gen.steps, "States to write")->capture_default_str();
    s_gen->add_option("--seed", gen.seed, "Initial condition and injection seed")->capture_default_str();
    s_gen->add_option("--grid", gen.grid, "Grid HxW")->capture_default_str();
    s_gen->add_option("--vars", gen.vars, "Physical channels")->capture_default_str();
    s_gen->add_option("--forcings", gen.forcings, "Forcing channels (0, 2 or 4)")->capture_default_str();
    s_gen->add_option("--spinup", gen.spinup, "Leading states to discard")->capture_default_str();
    s_gen->add_option("--train-fraction", gen.train_fraction, "Leading share of states used for training")
        ->capture_default_str();
    add_config(s_gen);

    TrainForecasterArgs tf;
    auto* s_tf = app.add_subcommand("train-forecaster", "Fit the deterministic next-state model");
    s_tf->add_option("--data", tf.data, "DEF1 data file")->group("Required");
    s_tf->add_option("--ckpt", tf.ckpt, "Output checkpoint")->group("Required");
    s_tf->add_option("--loss-csv", tf.loss_csv, "Loss curve CSV (default: <ckpt>.loss.csv)");
    s_tf->add_option("--epochs", tf.epochs)->capture_default_str();
    s_tf->add_option("--batch", tf.batch)->capture_default_str();
    s_tf->add_option("--lr", tf.lr)->capture_default_str();
    s_tf->add_option("--tau", tf.tau, "Gradient-norm clipping threshold")->capture_default_str();
    s_tf->add_option("--seed", tf.seed)->capture_default_str();
    s_tf->add_flag("--residual", tf.residual, "Predict the increment over the input state");
    add_config(s_tf);

    TrainDiffusionArgs td;
    auto* s_td = app.add_subcommand("train-diffusion", "Fit the conditional denoiser");
    s_td->add_option("--data", td.data, "DEF1 data file")->group("Required");
    s_td->add_option("--ckpt-f", td.ckpt_f, "Trained forecaster checkpoint")->group("Required");
    s_td->add_option("--ckpt", td.ckpt, "Output checkpoint")->group("Required");
    s_td->add_option("--loss-csv", td.loss_csv, "Loss curve CSV (default: <ckpt>.loss.csv)");
    s_td->add_option("--epochs", td.epochs)->capture_default_str();
    s_td->add_option("--batch", td.batch)->capture_default_str();
    s_td->add_option("--lr", td.lr)->capture_default_str();
    s_td->add_option("--tau", td.tau, "Gradient-norm clipping threshold")->capture_default_str();
    s_td->add_option("--lambda", td.cond_prob, "Probability of a real condition")->capture_default_str();
    s_td->add_option("--advance-prob", td.advance_prob, "Probability of advancing a sample one step")
        ->capture_default_str();
    s_td->add_option("--ema", td.ema, "Decay of the weight moving average (0 disables)")->capture_default_str();
    s_td->add_option("--prior-skip", td.prior_skip, "Predict noise as a correction to the unit-Gaussian answer")
        ->capture_default_str();
    s_td->add_option("--T", td.T, "Diffusion steps")->capture_default_str();
    s_td->add_option("--beta-start", td.beta_start)->capture_default_str();
    s_td->add_option("--beta-end", td.beta_end)->capture_default_str();
    s_td->add_option("--seed", td.seed)->capture_default_str();
    add_config(s_td);

    RolloutArgs ro;
    auto* s_ro = app.add_subcommand("rollout", "Run a perturbed ensemble and the deterministic baseline");
    auto add_rollout_options = [&](CLI::App* sub, RolloutArgs& r, bool lists) {
        sub->add_option("--ckpt-f", r.ckpt_f, "Forecaster checkpoint")->group("Required");
        sub->add_option("--data", r.data, "DEF1 file holding the initial state")->group("Required");
        sub->add_option("--start", r.start, "Index of the initial state (default: first held-out state)");
        sub->add_option("--members", r.members, "Ensemble members")->capture_default_str();
        sub->add_option("--lead", r.lead, "Lead steps")->capture_default_str();
        sub->add_option("--seed", r.seed, "Master seed")->capture_default_str();
        sub->add_flag("--perturb-first-only", r.perturb_first_only, "Perturb before the first step only");
        sub->add_option("--divergence-bound", r.divergence_bound,
                        "Drop members whose normalized values exceed this magnitude")
            ->capture_default_str();
        add_guidance_options(sub, r.guidance, lists);
    };
    add_rollout_options(s_ro, ro, false);
    s_ro->add_option("--ckpt-d", ro.ckpt_d, "Denoiser checkpoint (omit for an unperturbed ensemble)");
    s_ro->add_option("--out", ro.out, "Output DEF1 run file")->group("Required");
    add_config(s_ro);

    EvaluateArgs ev;
    auto* s_ev = app.add_subcommand("evaluate", "Score a run against the truth");
    s_ev->add_option("--run", ev.run, "Run file written by rollout")->group("Required");
    s_ev->add_option("--truth", ev.truth, "DEF1 truth file")->group("Required");
    s_ev->add_option("--leads", ev.leads, "Comma-separated leads")->capture_default_str();
    s_ev->add_option("--out", ev.out, "Scorecard CSV")->group("Required");
    s_ev->add_option("--domain-out", ev.domain_out, "Domain-average CSV (default: <out>.domain.csv)");
    add_config(s_ev);

    SweepArgs sw;
    auto* s_sw = app.add_subcommand("sweep", "Score a grid of guidance scales and walk counts");
    add_rollout_options(s_sw, sw.rollout, true);
    s_sw->add_option("--ckpt-d", sw.rollout.ckpt_d, "Denoiser checkpoint")->group("Required");
    s_sw->add_option("--omega", sw.omegas, "Comma-separated guidance scales")->capture_default_str();
    s_sw->add_option("--walks", sw.walks, "Comma-separated walk counts")->capture_default_str();
    s_sw->add_option("--leads", sw.leads, "Comma-separated leads to score")->capture_default_str();
    s_sw->add_option("--out-dir", sw.out_dir, "Output directory")->capture_default_str();
    add_config(s_sw);

    PerturbArgs pe;
    auto* s_pe = app.add_subcommand("perturb", "Perturb one state with the denoiser");
    s_pe->add_option("--ckpt", pe.ckpt, "Denoiser checkpoint")->group("Required");
    s_pe->add_option("--data", pe.data, "DEF1 data file")->group("Required");
    s_pe->add_option("--index", pe.index, "State index (default: first held-out state)");
    s_pe->add_option("--samples", pe.samples, "Independent perturbations")->capture_default_str();
    s_pe->add_option("--seed", pe.seed)->capture_default_str();
    s_pe->add_option("--out", pe.out, "Output DEF1 file")->group("Required");
    add_guidance_options(s_pe, pe.guidance, false);
    add_config(s_pe);

    if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
        std::cerr << "error: unknown subcommand '" << argv[1] << "'\n" << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        if (!config_path.empty()) apply_config_file(*sub, config_path);
        check_required(*sub);
        const auto t0 = std::chrono::steady_clock::now();
        if (sub == s_gen) run_generate(*sub, gen);
        else if (sub == s_tf) run_train_forecaster(*sub, tf);
        else if (sub == s_td) run_train_diffusion(*sub, td);
        else if (sub == s_ro) run_rollout(*sub, ro);
        else if (sub == s_ev) run_evaluate(*sub, ev);
        else if (sub == s_sw) run_sweep(*sub, sw);
        else if (sub == s_pe) run_perturb(*sub, pe);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << sub->get_name() << " finished in " << std::fixed << std::setprecision(1) << secs << " s\n";
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
