#include <sdlto/cli_io.hpp>
#include <sdlto/presets.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

using namespace sdlto;

TEST(Presets, BridgeLoadsEveryTopNode)
{
    auto const p = build_preset(PresetName::bridge, 120, 40, 0.2);
    int loaded = 0;
    for (int i = 0; i < p.boundary.load.size(); ++i) {
        if (p.boundary.load[i] != 0.0) {
            ++loaded;
            EXPECT_EQ(i % 2, 1);
            EXPECT_EQ(p.boundary.load[i], -1.0);
        }
    }
    EXPECT_EQ(loaded, 121);
    EXPECT_EQ(p.material.e0, 1.0);
    EXPECT_EQ(p.material.emin, 0.001);
    EXPECT_EQ(p.boundary.fixed_dofs.size(), 4u);
}

TEST(Presets, HeatSinkCount)
{
    auto const p = build_preset(PresetName::heat, 64, 64, 0.4);
    EXPECT_EQ(p.physics, Physics::heat);
    EXPECT_EQ(p.boundary.fixed_dofs.size(), 7u);  // ceil(0.1 * 65)
    EXPECT_EQ(p.boundary.fixed_dofs.front(), p.grid.node(0, 29));
    EXPECT_EQ(p.boundary.fixed_dofs.back(), p.grid.node(0, 35));
    EXPECT_NEAR(p.boundary.load.sum(), 64.0 * 64.0, 1e-9);

    auto const q = build_preset(PresetName::heat, 40, 49, 0.4);
    EXPECT_EQ(q.boundary.fixed_dofs.size(), 5u);  // 0.1 * 50 is exactly 5
}

TEST(Presets, CantileverFixesLeftEdge)
{
    auto const p = build_preset(PresetName::cantilever, 2, 1, 0.5);
    std::vector<int> expect{0, 1, 2, 3};
    auto fixed = p.boundary.fixed_dofs;
    std::sort(fixed.begin(), fixed.end());
    EXPECT_EQ(fixed, expect);
}

// --- configuration ---------------------------------------------------------

namespace {

CliSettings parse_ok (std::vector<std::string> args)
{
    args.insert(args.begin(), "sdlto");
    auto const cmd = parse_command_line(args);
    EXPECT_TRUE(cmd.settings.has_value()) << cmd.message;
    return cmd.settings.value_or(CliSettings{});
}

std::string parse_error_key (std::vector<std::string> args)
{
    args.insert(args.begin(), "sdlto");
    try {
        (void)parse_command_line(args);
    }
    catch (ParseError const& e) {
        return e.key();
    }
    return "<no error>";
}

std::filesystem::path scratch (std::string const& name)
{
    auto const dir = std::filesystem::temp_directory_path() / ("sdlto_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp (std::filesystem::path const& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace


TEST(Config, BridgeFlagsGiveBridgeProblem)
{
    auto const s = parse_ok({"--preset", "bridge", "--nelx", "120", "--nely", "40", "--volfrac", "0.2", "--mode", "sdl"});
    EXPECT_EQ(s.mode, RunMode::sdl);
    auto const p = make_problem(s);
    EXPECT_EQ(p.physics, Physics::elasticity);
    EXPECT_EQ(p.grid.nelx(), 120);
    EXPECT_EQ(p.grid.nely(), 40);
    EXPECT_EQ(p.material.e0, 1.0);
    EXPECT_EQ(p.material.emin, 0.001);
    EXPECT_EQ(p.volume_fraction, 0.2);
}

TEST(Config, HeatPresetUsesItsDefaults)
{
    auto const s = parse_ok({"--preset", "heat", "--volfrac", "0.4"});
    auto const p = make_problem(s);
    EXPECT_EQ(p.physics, Physics::heat);
    EXPECT_EQ(p.material.e0, 1.0);
    EXPECT_EQ(p.material.emin, 0.001);
    EXPECT_EQ(s.nelx, 64);
    EXPECT_EQ(s.nely, 64);
    auto const r = make_run_config(s);
    EXPECT_EQ(r.sampler.sigma, s.sigma);
    EXPECT_EQ(r.lambda_star, s.lambda_star);
    EXPECT_EQ(r.window, s.window);
}

TEST(Config, NoArgumentsPrintsUsage)
{
    auto const cmd = parse_command_line({"sdlto"});
    EXPECT_FALSE(cmd.settings.has_value());
    EXPECT_NE(cmd.exit_code, 0);
    EXPECT_NE(cmd.message.find("--preset"), std::string::npos);
    auto const help = parse_command_line({"sdlto", "--help"});
    EXPECT_EQ(help.exit_code, 0);
    auto const junk = parse_command_line({"sdlto", "--no-such-flag", "1"});
    EXPECT_NE(junk.exit_code, 0);
}

TEST(Config, OutOfRangeValuesNameTheKey)
{
    EXPECT_EQ(parse_error_key({"--sigma", "0"}), "sigma");
    EXPECT_EQ(parse_error_key({"--sigma", "-0.1"}), "sigma");
    EXPECT_EQ(parse_error_key({"--volfrac", "1"}), "volfrac");
    EXPECT_EQ(parse_error_key({"--volfrac", "0"}), "volfrac");
    EXPECT_EQ(parse_error_key({"--lambda-star", "0"}), "lambda-star");
    EXPECT_EQ(parse_error_key({"--lambda-star", "2"}), "lambda-star");
    EXPECT_EQ(parse_error_key({"--preset", "tower"}), "preset");
    EXPECT_EQ(parse_error_key({"--workers", "0"}), "workers");
    EXPECT_EQ(parse_error_key({"--nelx", "ten"}), "nelx");
    EXPECT_EQ(parse_error_key({"--sink-edge", "middle"}), "sink-edge");
}

TEST(Config, FileValuesAndFlagPrecedence)
{
    auto const dir = scratch("config");
    auto const path = (dir / "c.json").string();
    std::ofstream(path) << R"({"preset": "cantilever", "iters": 7, "sigma": 0.02, "seed": 9})";
    auto const s = parse_ok({"--config", path, "--sigma", "0.03"});
    EXPECT_EQ(s.preset, PresetName::cantilever);
    EXPECT_EQ(s.nelx, 60);
    EXPECT_EQ(s.iters, 7);
    EXPECT_EQ(s.sigma, 0.03);
    EXPECT_EQ(s.seed, 9u);

    std::ofstream(path) << R"({"preset": "heat", "colour": "red"})";
    EXPECT_EQ(parse_error_key({"--config", path}), "colour");
    std::ofstream(path) << R"({"iters": 2.5})";
    EXPECT_EQ(parse_error_key({"--config", path}), "iters");
    std::ofstream(path) << R"({"volfrac": 1.5})";
    EXPECT_EQ(parse_error_key({"--config", path}), "volfrac");
}

TEST(Config, CliDefaultsMatchLibraryDefaults)
{
    RunConfig const lib;
    auto const c = make_run_config(CliSettings{});
    EXPECT_EQ(c.max_iterations, lib.max_iterations);
    EXPECT_EQ(c.sampler.sigma, lib.sampler.sigma);
    EXPECT_EQ(c.sampler.n_samples, lib.sampler.n_samples);
    EXPECT_EQ(c.lambda_star, lib.lambda_star);
    EXPECT_EQ(c.window, lib.window);
    EXPECT_EQ(c.move_limit, lib.move_limit);
    EXPECT_EQ(c.workers, lib.workers);
    EXPECT_EQ(c.training.epochs, lib.training.epochs);
    EXPECT_EQ(c.relearn_every, lib.relearn_every);
    EXPECT_EQ(c.audit_every, lib.audit_every);
    EXPECT_EQ(c.online_update, lib.online_update);
}

TEST(Config, EchoRoundTrips)
{
    auto const s = parse_ok({"--preset", "heat", "--mode", "sdl", "--sigma", "0.0123456789",
                             "--seed", "18446744073709551615", "--sink-edge", "top", "--timing",
                             "--online-update", "projected", "--solver", "cg"});
    EXPECT_TRUE(s.timing);
    auto const echoed = apply_settings(CliSettings{}, Json::parse(to_json(s).dump()));
    EXPECT_EQ(echoed, s);
}


// --- artifacts -------------------------------------------------------------

TEST(Pgm, SolidIsBlackVoidIsWhite)
{
    auto const dir = scratch("pgm");
    StructuredGrid const g(5, 3);
    write_density_pgm(Vector::Ones(15), g, dir / "a.pgm");
    auto const a = read_pgm(dir / "a.pgm");
    EXPECT_EQ(a.width, 5);
    EXPECT_EQ(a.height, 3);
    for (auto px : a.pixels) EXPECT_EQ(px, 0);
    write_density_pgm(Vector::Zero(15), g, dir / "b.pgm");
    for (auto px : read_pgm(dir / "b.pgm").pixels) EXPECT_EQ(px, 255);
}

TEST(Pgm, RoundTripReproducesQuantizedDensities)
{
    auto const dir = scratch("pgm_rt");
    StructuredGrid const g(7, 4);
    Vector x(g.num_elements());
    for (int e = 0; e < x.size(); ++e) x[e] = double((e * 37) % 101) / 100.0;
    write_density_pgm(x, g, dir / "x.pgm");
    auto const p = read_pgm(dir / "x.pgm");
    for (int ey = 0; ey < g.nely(); ++ey) {
        for (int ex = 0; ex < g.nelx(); ++ex) {
            double const v = x[g.element(ex, ey)];
            EXPECT_EQ(p.pixels[std::size_t(ey * g.nelx() + ex)], std::lround(255.0 * (1.0 - v)));
        }
    }
    // top row of the image is the top row of elements
    Vector top = Vector::Zero(g.num_elements());
    for (int ex = 0; ex < g.nelx(); ++ex) top[g.element(ex, 0)] = 1.0;
    write_density_pgm(top, g, dir / "t.pgm");
    auto const t = read_pgm(dir / "t.pgm");
    EXPECT_EQ(t.pixels[0], 0);
    EXPECT_EQ(t.pixels.back(), 255);
    EXPECT_THROW(write_density_pgm(x, g, dir / "missing" / "x.pgm"), IoError);
}

TEST(Artifacts, SingleIterationSeqRun)
{
    auto const dir = scratch("seq1");
    auto s = parse_ok({"--preset", "cantilever", "--nelx", "12", "--nely", "4", "--iters", "1",
                       "--out-dir", (dir / "run").string()});
    auto const r = run_and_write(s);
    auto const csv = slurp(dir / "run" / "history.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "iter,mode,objective,volume,change,fem_solves,wall_ms");
    auto const m = read_json_file((dir / "run" / "manifest.json").string());
    EXPECT_EQ(m["result"]["fem_solves"].get<long>(), r.history.back().fem_solves);
    EXPECT_TRUE(m["accounting"]["holds"].get<bool>());
    EXPECT_FALSE(std::filesystem::exists(dir / "run" / "surrogate.txt"));
}

TEST(Artifacts, SdlRunManifestAndReproducibility)
{
    auto const dir = scratch("sdl");
    std::vector<std::string> args{"--preset", "heat", "--nelx", "12", "--nely", "12", "--mode", "sdl",
                                  "--iters", "20", "--samples", "6", "--epochs", "30",
                                  "--lambda-star", "0.01", "--workers", "2", "--out-dir", (dir / "a").string()};
    auto const s = parse_ok(args);
    auto const r = run_and_write(s);
    auto const m = read_json_file((dir / "a" / "manifest.json").string());
    auto const& res = m["result"];
    EXPECT_EQ(res["learning_step_count"].get<int>() + res["online_step_count"].get<int>()
                  + res["simulated_step_count"].get<int>(),
              20);
    EXPECT_EQ(res["fem_solves"].get<long>(), r.manifest.fem_solves);
    EXPECT_TRUE(m["accounting"]["holds"].get<bool>());
    EXPECT_EQ(std::filesystem::exists(dir / "a" / "surrogate.txt"), r.surrogate.has_value());
    if (r.surrogate) {
        auto const net = load_net((dir / "a" / "surrogate.txt").string());
        Vector const q = Vector::Constant(144, 0.4);
        EXPECT_EQ(net.predict(q), r.surrogate->predict(q));
    }

    // the echoed config reproduces the run
    auto const again = parse_ok({"--config", (dir / "a" / "manifest.json").string()});
    EXPECT_EQ(again, s);
    auto const first_csv = slurp(dir / "a" / "history.csv");
    auto const first_pgm = slurp(dir / "a" / "density.pgm");
    auto const first_manifest = slurp(dir / "a" / "manifest.json");
    (void)run_and_write(again);
    EXPECT_EQ(slurp(dir / "a" / "history.csv"), first_csv);
    EXPECT_EQ(slurp(dir / "a" / "density.pgm"), first_pgm);
    EXPECT_EQ(slurp(dir / "a" / "manifest.json"), first_manifest);
}
