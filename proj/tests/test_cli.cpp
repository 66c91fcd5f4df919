#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fraclqr/cli.hpp"

using namespace fraclqr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("fraclqr_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& body) {
    const fs::path p = dir / "config.json";
    std::ofstream(p) << body;
    return p;
}

const char* small_reference = R"({
  "x0": 1.0, "b": 0.1, "c": 1.0, "sigma": 0.5, "gamma": 1.0,
  "alpha": 0.75, "delta": 0.5, "lambda": 3.0,
  "grid": {"n": 256, "horizon": 8.0},
  "run": {"n_paths": 8, "base_seed": 3, "verify": {"levels": 3, "perturbations": 0}}
})";

// Reads "name,value" rows of constants.csv.
double constant(const fs::path& file, const std::string& name) {
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line))
        if (line.rfind(name + ",", 0) == 0) return std::stod(line.substr(name.size() + 1));
    ADD_FAILURE() << name << " missing";
    return 0.0;
}

} // namespace

TEST(Config, RoundTrip) {
    RunConfig c;
    c.model.b = 0.1;
    c.model.alpha = 0.75;
    c.model.delta = 0.5;
    c.model.lambda = 1.0 / 3.0;
    c.mu = 0.123456789012345678;
    c.horizon = 7.25;
    c.allow_outside_contraction = true;
    c.drift_rule = DriftRule::left_point;
    c.base_seed = 18446744073709551615ull;
    c.sweep = {"lambda", {2.0, 3.0}};
    c.verify.epsilons = {-0.2, 0.2};
    EXPECT_EQ(config_from_json(to_json(c)), c);
    EXPECT_EQ(parse_config(to_json(c).dump(2)), c);
    EXPECT_EQ(config_from_json(to_json(RunConfig{})), RunConfig{});
}

TEST(Config, RejectsUnknownKeys) {
    try {
        parse_config(R"({"alpha": 0.75, "run": {"n_path": 3}})");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("run.n_path"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_config(R"({"lamda": 3})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"grid": {"cells": 3}})"), ConfigError);
}

TEST(Config, DiagnosticsCarryLineAndKey) {
    try {
        parse_config("{\n  \"alpha\": 0.75,\n  \"b\": ,\n}");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    try {
        parse_config(R"({"alpha": "high"})");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("'alpha'"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_config(R"({"run": {"control": "greedy"}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"run": {"drift_rule": "simpson"}})"), ConfigError);
}

TEST(Csv, SeventeenDigitsAndTrailer) {
    CsvWriter w({"a", "b"});
    w.row(std::vector<double>{0.1, 1.0 / 3.0});
    w.note("config={}");
    const std::string s = w.str();
    EXPECT_EQ(s, "a,b\n0.10000000000000001,0.33333333333333331\n# config={}\n");
    EXPECT_EQ(std::stod("0.33333333333333331"), 1.0 / 3.0);
}

TEST(ResolveGrid, DefaultHorizonPutsDelayOnGrid) {
    RunConfig c;
    c.model.b = 0.1;
    c.model.alpha = 0.75;
    c.model.delta = 0.3;
    c.model.lambda = 3.0;
    c.n = 500;
    const auto r = cli::resolve(c);
    EXPECT_NO_THROW(r.grid.delay_steps(0.3));
    EXPECT_GE(r.grid.horizon, default_horizon(c.model, r.constants.mu) - 1e-12);
    EXPECT_EQ(*r.config.horizon, r.grid.horizon);
    c.n = 4;
    EXPECT_THROW(cli::resolve(c), GridError);
}

TEST(Run, SynthesizeClassicalConfig) {
    const fs::path dir = scratch("synth");
    const int rc = cli::run({"synthesize", "--config", FRACLQR_CONFIGS "/classical.json", "--out", dir.string(),
                             "--grid-n", "256", "--no-timestamp"});
    ASSERT_EQ(rc, 0);
    EXPECT_NEAR(constant(dir / "constants.csv", "K_lambda"), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(constant(dir / "constants.csv", "rho_tilde_alpha"), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(constant(dir / "constants.csv", "gain"), 0.0);
    const std::string phi = slurp(dir / "law_phi.csv");
    EXPECT_EQ(phi.rfind("t,phi\n", 0), 0u);
    EXPECT_NE(phi.find("# config="), std::string::npos);
    EXPECT_NE(phi.find("# constants rho_alpha="), std::string::npos);
    EXPECT_EQ(phi.find("generated="), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "law_psi.csv"));
}

TEST(Run, NullControlCost) {
    const fs::path dir = scratch("cost");
    const int rc = cli::run({"cost", "--config", FRACLQR_CONFIGS "/null_control.json", "--out", dir.string(),
                             "--paths", "2000", "--grid-n", "512", "--control", "zero"});
    ASSERT_EQ(rc, 0);
    std::ifstream in(dir / "cost.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_EQ(header, "control,mean,std_error,truncation_bound,n_paths,seed");
    std::stringstream ss(row);
    std::string control, mean, se;
    std::getline(ss, control, ',');
    std::getline(ss, mean, ',');
    std::getline(ss, se, ',');
    EXPECT_EQ(control, "zero");
    EXPECT_NEAR(std::stod(mean), 0.625, 3.0 * std::stod(se) + 0.625 * 16.0 / 512.0);
}

TEST(Run, VerifyPassingConfigExitsZero) {
    const fs::path dir = scratch("verify");
    const fs::path cfg = write_config(dir, small_reference);
    EXPECT_EQ(cli::run({"verify", "--config", cfg.string(), "--out", (dir / "out").string()}), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "verify.csv"));
    EXPECT_TRUE(fs::exists(dir / "out" / "refinement.csv"));
}

TEST(Run, SimulateWritesEveryPath) {
    const fs::path dir = scratch("simulate");
    const fs::path cfg = write_config(dir, small_reference);
    ASSERT_EQ(cli::run({"simulate", "--config", cfg.string(), "--out", dir.string(), "--paths", "3",
                        "--grid-n", "64"}),
              0);
    std::ifstream in(dir / "paths.csv");
    std::string line;
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#') ++rows;
    EXPECT_EQ(rows, 1 + 3 * 65);
}

TEST(Run, SweepWritesOneRowPerValue) {
    const fs::path dir = scratch("sweep");
    const fs::path cfg = write_config(dir, R"({
      "b": 0.1, "sigma": 0.5, "alpha": 0.75, "delta": 0.5, "lambda": 3.0,
      "grid": {"n": 128, "horizon": 8.0},
      "run": {"n_paths": 20, "sweep": {"parameter": "lambda", "values": [1.0, 3.0, 4.0]}}
    })");
    ASSERT_EQ(cli::run({"sweep", "--config", cfg.string(), "--out", dir.string()}), 0);
    const std::string s = slurp(dir / "sweep.csv");
    EXPECT_NE(s.find("\n1,inadmissible,"), std::string::npos) << s;
    EXPECT_NE(s.find("\n3,ok,"), std::string::npos) << s;
    EXPECT_NE(s.find("\n4,ok,"), std::string::npos) << s;
}

TEST(Run, ExitCodes) {
    const fs::path dir = scratch("codes");
    EXPECT_EQ(cli::run({"explode"}), 2);
    EXPECT_EQ(cli::run({"synthesize"}), 2);
    EXPECT_EQ(cli::run({"synthesize", "--config", (dir / "missing.json").string()}), 2);
    const fs::path bad = write_config(dir, R"({"alpha": 0.75, "colour": 1})");
    EXPECT_EQ(cli::run({"synthesize", "--config", bad.string(), "--out", dir.string()}), 2);
    const fs::path inadmissible = write_config(dir, R"({"lambda": 1.0, "grid": {"n": 64}})");
    EXPECT_EQ(cli::run({"synthesize", "--config", inadmissible.string(), "--out", dir.string()}), 2);
    EXPECT_EQ(cli::run({"cost", "--config", inadmissible.string(), "--out", dir.string(), "--control", "zero",
                        "--paths", "4"}),
              0);
}

TEST(Run, ReproducibleBytesWithoutTimestamp) {
    const fs::path a = scratch("repro_a"), b = scratch("repro_b");
    const fs::path cfg = write_config(a, small_reference);
    for (const fs::path& d : {a, b})
        ASSERT_EQ(cli::run({"simulate", "--config", cfg.string(), "--out", d.string(), "--paths", "4",
                            "--grid-n", "64", "--no-timestamp"}),
                  0);
    EXPECT_EQ(slurp(a / "paths.csv"), slurp(b / "paths.csv"));
}

TEST(Tool, BinaryExitStatus) {
    const fs::path dir = scratch("tool");
    const std::string tool = FRACLQR_TOOL;
    const std::string ok = tool + " synthesize --config " FRACLQR_CONFIGS "/classical.json --grid-n 64 --out " +
                           dir.string() + " > /dev/null";
    EXPECT_EQ(WEXITSTATUS(std::system(ok.c_str())), 0);
    const std::string bad = tool + " synthesize --config " + (dir / "none.json").string() + " 2> /dev/null";
    EXPECT_EQ(WEXITSTATUS(std::system(bad.c_str())), 2);
}
