#ifndef SDLTO_CLI_IO_HPP_
#define SDLTO_CLI_IO_HPP_

// Configuration parsing and run artifacts.
//
// Settings share one key set between command-line flags (`--key value`) and
// the JSON config file (flat object, or a manifest whose "config" member is
// such an object). Precedence: built-in default < config file < flag.
//
// Artifacts in the output directory:
//   density.pgm    P5, one pixel per element, 255 * (1 - x) rounded, top row first
//   history.csv    iter,mode,objective,volume,change,fem_solves,wall_ms
//   manifest.json  effective config, FEM accounting, learning-step report
//   surrogate.txt  last trained network (SDL-TO only)

#include "errors.hpp"
#include "orchestrator.hpp"
#include "presets.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sdlto {

using Json = nlohmann::json;

// Fully resolved settings; every field has a value.
struct CliSettings
{
    PresetName preset = PresetName::bridge;
    RunMode mode = RunMode::seq;
    int nelx = 120;
    int nely = 40;
    double volfrac = 0.2;
    int iters = 200;
    double sigma = 0.05;
    int samples = 64;
    int window = 5;
    double lambda_star = 0.03;
    int workers = 1;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    int audit_every = 0;
    double sink_frac = 0.1;
    Edge sink_edge = Edge::left;
    double rmin = 1.5;
    double move = 0.2;
    SolverKind solver = SolverKind::cholesky;
    int epochs = 500;
    int relearn_every = 25;
    OnlineUpdate online_update = OnlineUpdate::mma;
    bool timing = false;

    bool operator== (CliSettings const&) const = default;
};

namespace detail {

enum class KeyType { integer, unsigned_integer, real, text, boolean };

struct KeyInfo
{
    char const* name;
    KeyType type;
    char const* help;
};

inline std::vector<KeyInfo> const& setting_keys ()
{
    static std::vector<KeyInfo> const keys{
        {"preset", KeyType::text, "bridge | cantilever | heat"},
        {"mode", KeyType::text, "seq | sdl"},
        {"nelx", KeyType::integer, "elements along x (preset default)"},
        {"nely", KeyType::integer, "elements along y (preset default)"},
        {"volfrac", KeyType::real, "volume fraction in (0,1) (preset default)"},
        {"iters", KeyType::integer, "optimization iterations (200)"},
        {"sigma", KeyType::real, "sampling standard deviation (0.05)"},
        {"samples", KeyType::integer, "samples per learning step (64)"},
        {"window", KeyType::integer, "lookback window (5)"},
        {"lambda-star", KeyType::real, "relearn threshold on cosine distance, in (0,2) (0.03)"},
        {"workers", KeyType::integer, "parallel FEM workers (1)"},
        {"seed", KeyType::unsigned_integer, "random seed (0)"},
        {"out-dir", KeyType::text, "output directory (out)"},
        {"audit-every", KeyType::integer, "evaluate every k-th online step, 0 = never (0)"},
        {"sink-frac", KeyType::real, "heat sink fraction of the edge, in (0,1] (0.1)"},
        {"sink-edge", KeyType::text, "heat sink edge: left | right | top | bottom (left)"},
        {"rmin", KeyType::real, "density filter radius >= 1 (1.5)"},
        {"move", KeyType::real, "move limit in (0,1] (0.2)"},
        {"solver", KeyType::text, "cholesky | cg | dense (cholesky)"},
        {"epochs", KeyType::integer, "training epochs per learning step (500)"},
        {"relearn-every", KeyType::integer, "forced relearn after this many online steps (25)"},
        {"online-update", KeyType::text, "mma | mma-tracked | projected (mma)"},
        {"timing", KeyType::boolean, "record wall times (off; outputs stay reproducible)"},
    };
    return keys;
}

inline KeyInfo const* find_key (std::string const& name)
{
    for (auto const& k : setting_keys()) {
        if (name == k.name) return &k;
    }
    return nullptr;
}

// flag text -> typed JSON value
inline Json typed_value (KeyInfo const& key, std::string const& text)
{
    auto bad = [&] { return ParseError(key.name, "cannot read '" + text + "'"); };
    switch (key.type) {
        case KeyType::integer: {
            long long v = 0;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || p != text.data() + text.size()) throw bad();
            return v;
        }
        case KeyType::unsigned_integer: {
            std::uint64_t v = 0;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || p != text.data() + text.size()) throw bad();
            return v;
        }
        case KeyType::real: {
            char* end = nullptr;
            double const v = std::strtod(text.c_str(), &end);
            if (text.empty() || end != text.c_str() + text.size()) throw bad();
            return v;
        }
        case KeyType::boolean:
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            throw bad();
        case KeyType::text:
            return text;
    }
    throw bad();
}

inline long long get_int (Json const& j, char const* key)
{
    if (!j.is_number_integer()) throw ParseError(key, "expected an integer");
    return j.get<long long>();
}

inline double get_real (Json const& j, char const* key)
{
    if (!j.is_number()) throw ParseError(key, "expected a number");
    double const v = j.get<double>();
    if (!std::isfinite(v)) throw ParseError(key, "expected a finite number");
    return v;
}

inline std::string get_text (Json const& j, char const* key)
{
    if (!j.is_string()) throw ParseError(key, "expected a string");
    return j.get<std::string>();
}

inline int get_int_in (Json const& j, char const* key, long long lo, long long hi)
{
    auto const v = get_int(j, key);
    if (v < lo || v > hi) {
        throw ParseError(key, "value " + std::to_string(v) + " out of range [" + std::to_string(lo)
                              + ", " + std::to_string(hi) + "]");
    }
    return int(v);
}

inline std::string format_real (double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail


// Applies a flat JSON object on top of `base`. Unknown keys and invalid
// values raise ParseError naming the key. Preset-dependent defaults
// (nelx, nely, volfrac) follow a preset change unless given explicitly.
[[nodiscard]] inline CliSettings apply_settings (CliSettings base, Json const& obj)
{
    using namespace detail;
    if (!obj.is_object()) throw ParseError("config", "expected a JSON object");
    for (auto const& [key, value] : obj.items()) {
        if (!find_key(key)) throw ParseError(key, "unknown setting");
    }
    CliSettings s = base;
    if (obj.contains("preset")) {
        auto const name = get_text(obj["preset"], "preset");
        auto const p = parse_preset(name);
        if (!p) throw ParseError("preset", "unknown preset '" + name + "'");
        if (*p != s.preset) {
            s.preset = *p;
            std::tie(s.nelx, s.nely) = default_resolution(*p);
            s.volfrac = default_volume_fraction(*p);
        }
    }
    auto has = [&](char const* k) { return obj.contains(k); };
    auto real_open = [&](char const* k, double lo, double hi, bool hi_closed) {
        double const v = get_real(obj[k], k);
        if (!(v > lo && (hi_closed ? v <= hi : v < hi))) {
            throw ParseError(k, "value " + format_real(v) + " out of range (" + format_real(lo) + ", "
                                + format_real(hi) + (hi_closed ? "]" : ")"));
        }
        return v;
    };
    constexpr long long big = 1'000'000'000;

    if (has("mode")) {
        auto const m = get_text(obj["mode"], "mode");
        if (m == "seq") s.mode = RunMode::seq;
        else if (m == "sdl") s.mode = RunMode::sdl;
        else throw ParseError("mode", "expected seq or sdl, got '" + m + "'");
    }
    if (has("nelx")) s.nelx = get_int_in(obj["nelx"], "nelx", 1, 100000);
    if (has("nely")) s.nely = get_int_in(obj["nely"], "nely", 1, 100000);
    if (has("volfrac")) s.volfrac = real_open("volfrac", 0.0, 1.0, false);
    if (has("iters")) s.iters = get_int_in(obj["iters"], "iters", 1, big);
    if (has("sigma")) s.sigma = real_open("sigma", 0.0, HUGE_VAL, false);
    if (has("samples")) s.samples = get_int_in(obj["samples"], "samples", 1, big);
    if (has("window")) s.window = get_int_in(obj["window"], "window", 0, big);
    if (has("lambda-star")) s.lambda_star = real_open("lambda-star", 0.0, 2.0, false);
    if (has("workers")) s.workers = get_int_in(obj["workers"], "workers", 1, 4096);
    if (has("seed")) {
        auto const& j = obj["seed"];
        if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) {
            throw ParseError("seed", "expected a nonnegative integer");
        }
        s.seed = j.get<std::uint64_t>();
    }
    if (has("out-dir")) {
        s.out_dir = get_text(obj["out-dir"], "out-dir");
        if (s.out_dir.empty()) throw ParseError("out-dir", "must not be empty");
    }
    if (has("audit-every")) s.audit_every = get_int_in(obj["audit-every"], "audit-every", 0, big);
    if (has("sink-frac")) s.sink_frac = real_open("sink-frac", 0.0, 1.0, true);
    if (has("sink-edge")) {
        auto const e = get_text(obj["sink-edge"], "sink-edge");
        auto const edge = parse_edge(e);
        if (!edge) throw ParseError("sink-edge", "unknown edge '" + e + "'");
        s.sink_edge = *edge;
    }
    if (has("rmin")) {
        s.rmin = get_real(obj["rmin"], "rmin");
        if (!(s.rmin >= 1.0 && s.rmin <= 1000.0)) throw ParseError("rmin", "must lie in [1, 1000]");
    }
    if (has("move")) s.move = real_open("move", 0.0, 1.0, true);
    if (has("solver")) {
        auto const v = get_text(obj["solver"], "solver");
        if (v == "cholesky") s.solver = SolverKind::cholesky;
        else if (v == "cg") s.solver = SolverKind::cg;
        else if (v == "dense") s.solver = SolverKind::dense;
        else throw ParseError("solver", "expected cholesky, cg or dense, got '" + v + "'");
    }
    if (has("epochs")) s.epochs = get_int_in(obj["epochs"], "epochs", 1, big);
    if (has("relearn-every")) s.relearn_every = get_int_in(obj["relearn-every"], "relearn-every", 1, big);
    if (has("online-update")) {
        auto const v = get_text(obj["online-update"], "online-update");
        if (v == "mma") s.online_update = OnlineUpdate::mma;
        else if (v == "mma-tracked") s.online_update = OnlineUpdate::mma_tracked;
        else if (v == "projected") s.online_update = OnlineUpdate::projected;
        else throw ParseError("online-update", "expected mma, mma-tracked or projected, got '" + v + "'");
    }
    if (has("timing")) {
        if (!obj["timing"].is_boolean()) throw ParseError("timing", "expected true or false");
        s.timing = obj["timing"].get<bool>();
    }
    return s;
}

// Effective configuration as a flat object with every key.
[[nodiscard]] inline Json to_json (CliSettings const& s)
{
    return Json{
        {"preset", to_string(s.preset)},
        {"mode", to_string(s.mode)},
        {"nelx", s.nelx},
        {"nely", s.nely},
        {"volfrac", s.volfrac},
        {"iters", s.iters},
        {"sigma", s.sigma},
        {"samples", s.samples},
        {"window", s.window},
        {"lambda-star", s.lambda_star},
        {"workers", s.workers},
        {"seed", s.seed},
        {"out-dir", s.out_dir},
        {"audit-every", s.audit_every},
        {"sink-frac", s.sink_frac},
        {"sink-edge", to_string(s.sink_edge)},
        {"rmin", s.rmin},
        {"move", s.move},
        {"solver", to_string(s.solver)},
        {"epochs", s.epochs},
        {"relearn-every", s.relearn_every},
        {"online-update", to_string(s.online_update)},
        {"timing", s.timing},
    };
}

[[nodiscard]] inline Json read_json_file (std::string const& path)
{
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open config file");
    try {
        return Json::parse(in);
    }
    catch (Json::exception const& e) {
        throw IoError(path, std::string("malformed JSON (") + e.what() + ")");
    }
}

// Reads a config file: a flat settings object, or a manifest carrying one
// under "config".
[[nodiscard]] inline Json config_object_from_file (std::string const& path)
{
    Json j = read_json_file(path);
    if (j.is_object() && j.contains("config") && j["config"].is_object()) return j["config"];
    return j;
}


//-----------------------------------------------------------------------------
struct CommandLine
{
    std::optional<CliSettings> settings;  // empty: nothing to run
    int exit_code = 0;
    std::string message;                  // usage or CLI error text
};

// Parses argv (program name first). Returns usage with exit code 2 when no
// arguments are given, help with exit code 0 on --help. Setting errors throw
// ParseError; unreadable config files throw IoError.
[[nodiscard]] inline CommandLine parse_command_line (std::vector<std::string> const& argv)
{
    using namespace detail;
    CLI::App app{"Topology optimization with learned-gradient acceleration", "sdlto"};
    app.option_defaults()->always_capture_default(false);
    std::map<std::string, std::string> given;
    std::string config_path;
    bool timing_flag = false;
    app.add_option("--config", config_path, "JSON settings file (flags override it)");
    for (auto const& k : setting_keys()) {
        if (k.type == KeyType::boolean) {
            app.add_flag(std::string("--") + k.name, timing_flag, k.help);
        }
        else {
            app.add_option(std::string("--") + k.name, given[k.name], k.help);
        }
    }

    CommandLine out;
    if (argv.size() <= 1) {
        out.exit_code = 2;
        out.message = app.help();
        return out;
    }
    std::vector<char const*> raw;
    for (auto const& a : argv) raw.push_back(a.c_str());
    try {
        app.parse(int(raw.size()), raw.data());
    }
    catch (CLI::CallForHelp const&) {
        out.exit_code = 0;
        out.message = app.help();
        return out;
    }
    catch (CLI::ParseError const& e) {
        out.exit_code = 2;
        out.message = std::string("error: ") + e.what() + "\n\n" + app.help();
        return out;
    }

    Json file = Json::object();
    if (!config_path.empty()) file = config_object_from_file(config_path);
    if (!file.is_object()) throw ParseError("config", "config file must hold a JSON object");

    Json flags = Json::object();
    for (auto const& k : setting_keys()) {
        auto* opt = app.get_option(std::string("--") + k.name);
        if (opt->count() == 0) continue;
        flags[k.name] = k.type == KeyType::boolean ? Json(timing_flag) : typed_value(k, given[k.name]);
    }
    // flag wins over file; the preset goes first so size defaults follow it
    Json merged = file;
    for (auto const& [key, value] : flags.items()) merged[key] = value;
    CliSettings base;
    if (merged.contains("preset")) {
        Json only{{"preset", merged["preset"]}};
        base = apply_settings(base, only);
    }
    out.settings = apply_settings(base, merged);
    return out;
}

[[nodiscard]] inline ProblemSpec make_problem (CliSettings const& s)
{
    PresetOptions opt;
    opt.sink_fraction = s.sink_frac;
    opt.sink_edge = s.sink_edge;
    opt.rmin = s.rmin;
    opt.solver.kind = s.solver;
    return build_preset(s.preset, s.nelx, s.nely, s.volfrac, opt);
}

[[nodiscard]] inline RunConfig make_run_config (CliSettings const& s)
{
    RunConfig c;
    c.max_iterations = s.iters;
    c.mode = s.mode;
    c.sampler.sigma = s.sigma;
    c.sampler.n_samples = s.samples;
    c.sampler.seed = s.seed;
    c.lambda_star = s.lambda_star;
    c.window = s.window;
    c.move_limit = s.move;
    c.workers = s.workers;
    c.seed = s.seed;
    c.training.epochs = s.epochs;
    c.relearn_every = s.relearn_every;
    c.audit_every = s.audit_every;
    c.online_update = s.online_update;
    c.timing = s.timing;
    return c;
}


//-----------------------------------------------------------------------------
struct OutputBundle
{
    std::filesystem::path density;
    std::filesystem::path history;
    std::filesystem::path manifest;
    std::optional<std::filesystem::path> surrogate;
};

// Creates the directory and checks every artifact path can be written.
[[nodiscard]] inline OutputBundle prepare_outputs (std::filesystem::path const& dir, bool with_surrogate)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create output directory (" + ec.message() + ")");
    OutputBundle b{dir / "density.pgm", dir / "history.csv", dir / "manifest.json", std::nullopt};
    if (with_surrogate) b.surrogate = dir / "surrogate.txt";
    auto probe = [](std::filesystem::path const& p) {
        std::ofstream f(p, std::ios::app);
        if (!f) throw IoError(p.string(), "output file is not writable");
    };
    probe(b.density);
    probe(b.history);
    probe(b.manifest);
    if (b.surrogate) probe(*b.surrogate);
    return b;
}

inline void write_density_pgm (Vector const& x, StructuredGrid const& grid, std::filesystem::path const& path)
{
    if (x.size() != grid.num_elements()) {
        throw std::invalid_argument("density length does not match the grid");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << "P5\n" << grid.nelx() << ' ' << grid.nely() << "\n255\n";
    std::string row(std::size_t(grid.nelx()), '\0');
    for (int ey = 0; ey < grid.nely(); ++ey) {
        for (int ex = 0; ex < grid.nelx(); ++ex) {
            double const v = std::clamp(x[grid.element(ex, ey)], 0.0, 1.0);
            row[std::size_t(ex)] = char(static_cast<unsigned char>(std::lround(255.0 * (1.0 - v))));
        }
        out.write(row.data(), std::streamsize(row.size()));
    }
    if (!out) throw IoError(path.string(), "write failed");
}

struct Pgm
{
    int width = 0;
    int height = 0;
    std::vector<unsigned char> pixels;  // row-major, top row first
};

[[nodiscard]] inline Pgm read_pgm (std::filesystem::path const& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    std::string magic;
    int maxval = 0;
    Pgm p;
    in >> magic >> p.width >> p.height >> maxval;
    if (magic != "P5" || maxval != 255 || p.width < 1 || p.height < 1) {
        throw IoError(path.string(), "not an 8-bit binary PGM");
    }
    in.get();
    p.pixels.resize(std::size_t(p.width) * std::size_t(p.height));
    in.read(reinterpret_cast<char*>(p.pixels.data()), std::streamsize(p.pixels.size()));
    if (!in) throw IoError(path.string(), "truncated PGM");
    return p;
}

inline void write_history_csv (std::vector<IterationRecord> const& history, std::filesystem::path const& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << "iter,mode,objective,volume,change,fem_solves,wall_ms\n";
    char buf[256];
    for (auto const& r : history) {
        std::string obj;
        if (r.objective) {
            char o[40];
            std::snprintf(o, sizeof o, "%.12g", *r.objective);
            obj = o;
        }
        std::snprintf(buf, sizeof buf, "%d,%s,%s,%.12g,%.12g,%ld,%.3f\n", r.index, to_string(r.kind),
                      obj.c_str(), r.volume, r.change, r.fem_solves, r.wall_ms);
        out << buf;
    }
    if (!out) throw IoError(path.string(), "write failed");
}

[[nodiscard]] inline Json manifest_json (CliSettings const& s, ProblemSpec const& problem,
                                         RunResult const& result, OutputBundle const& outputs)
{
    auto const& m = result.manifest;
    DofMap const dm{problem.grid, problem.physics};
    Json learning = Json::array();
    for (auto const& l : m.learning) {
        learning.push_back({{"iteration", l.iteration},
                            {"samples", l.samples},
                            {"failed_samples", l.failed_samples},
                            {"attempts", l.attempts},
                            {"holdout_cosine", l.fidelity},
                            {"accepted", l.accepted},
                            {"epochs", l.epochs}});
    }
    Json res{{"mode", to_string(m.mode)},
             {"iterations", m.iterations},
             {"fem_solves", m.fem_solves},
             {"learning_step_count", m.learning_steps},
             {"online_step_count", m.online_steps},
             {"simulated_step_count", m.simulated_steps},
             {"sample_solves", m.sample_solves},
             {"audit_solves", m.audit_solves},
             {"certification_solves", m.certification_solves},
             {"critical_path_fem", m.critical_path_fem},
             {"workers", m.workers},
             {"initial_objective", m.initial_objective},
             {"final_objective", m.final_objective},
             {"final_volume", result.design.mean()}};
    if (s.timing) res["wall_ms"] = m.wall_ms;
    Json outs{{"density", outputs.density.filename().string()},
              {"history", outputs.history.filename().string()},
              {"manifest", outputs.manifest.filename().string()}};
    if (outputs.surrogate) outs["surrogate"] = outputs.surrogate->filename().string();
    return Json{
        {"format", "sdlto-manifest 1"},
        {"config", to_json(s)},
        {"problem", {{"physics", to_string(problem.physics)},
                     {"elements", problem.grid.num_elements()},
                     {"dofs", dm.total_dofs()},
                     {"fixed_dofs", problem.boundary.fixed_dofs.size()},
                     {"e0", problem.material.e0},
                     {"emin", problem.material.emin},
                     {"penal", problem.material.penal}}},
        {"result", res},
        {"accounting", {{"identity", m.mode == RunMode::seq
                                         ? "fem_solves = iterations"
                                         : "fem_solves = sample_solves + learning_step_count"
                                           " + simulated_step_count + audit_solves + certification_solves"},
                        {"holds", m.accounting_holds()}}},
        {"learning_steps", learning},
        {"outputs", outs},
    };
}

inline void write_manifest (Json const& manifest, std::filesystem::path const& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError(path.string(), "write failed");
}

// Runs the configured optimization and writes every artifact.
inline RunResult run_and_write (CliSettings const& s)
{
    auto const problem = make_problem(s);
    auto const cfg = make_run_config(s);
    auto outputs = prepare_outputs(s.out_dir, s.mode == RunMode::sdl);
    RunResult result = run(problem, cfg);
    write_density_pgm(result.design, problem.grid, outputs.density);
    write_history_csv(result.history, outputs.history);
    if (outputs.surrogate) {
        if (result.surrogate) {
            save_net(*result.surrogate, outputs.surrogate->string());
        }
        else {
            std::filesystem::remove(*outputs.surrogate);
            outputs.surrogate.reset();
        }
    }
    write_manifest(manifest_json(s, problem, result, outputs), outputs.manifest);
    return result;
}

}  // namespace sdlto

#endif
