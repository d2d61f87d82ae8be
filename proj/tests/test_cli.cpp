#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qpr-cli-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args, const fs::path& dir, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(QPR_BINARY) + " " + args + " > " + (dir / "stdout.txt").string() +
                          " 2> " + (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("simulate with zero amplitude leaves the target empty") {
    const auto dir = scratch("zero");
    const auto cfg = write_config(dir, {{"field", {{"amplitude", 0.0}}}});
    REQUIRE(run("simulate --config " + cfg.string() + " --out " + (dir / "out").string(), dir) == 0);
    CHECK(read_json(dir / "out" / "simulate.json")["value"].get<double>() == 0.0);
    const json manifest = read_json(dir / "out" / "manifest.json");
    for (const char* key : {"command", "versions", "seed", "precision", "threads", "wall_time_seconds", "outputs"})
      CHECK(manifest.contains(key));
    CHECK(manifest["command"] == "simulate");
    // Every default is written out explicitly.
    const json resolved = read_json(dir / "out" / "resolved-config.json");
    for (const char* key : {"system", "objective", "field", "bounds", "grid", "uncertainty", "encoding", "tga",
                            "acromuse", "nsga2", "pmp", "seed", "precision"})
      CHECK(resolved.contains(key));
    CHECK(resolved["field"]["frequencies"].size() == 7);
  }

  TEST_CASE("moments with point-mass uncertainty report the nominal probability") {
    const auto dir = scratch("degenerate");
    json unc = json::array();
    for (auto [i, j] : {std::pair{0, 3}, {1, 3}, {3, 4}})
      unc.push_back({{"target", {{"kind", "dipole"}, {"i", i}, {"j", j}}},
                     {"distribution", {{"kind", "point_mass"}, {"value", 1.0}}}});
    const auto cfg = write_config(dir, {{"field", {{"amplitude", 0.05}}},
                                        {"uncertainty", unc},
                                        {"encoding", {{"max_total_order", 16}}},
                                        {"moments", {{"mc_samples", 20}}},
                                        {"grid", {{"dt", 0.05}}}});
    REQUIRE(run("moments --config " + cfg.string() + " --out " + (dir / "out").string(), dir) == 0);
    const json m = read_json(dir / "out" / "moments.json");
    const double nominal = m["nominal_probability"], expected = m["asymptotic"]["expected_probability"];
    CHECK(std::abs(expected - nominal) <= 1e-12);
    CHECK(m["monte_carlo"]["variance"].get<double>() <= 1e-28);
    CHECK(m["leading_order"]["first_order_variance"].get<double>() == 0.0);
    CHECK(fs::exists(dir / "out" / "interference_bins.csv"));
  }

  TEST_CASE("repro table3 emits both mappings against the published matrix") {
    const auto dir = scratch("table3");
    REQUIRE(run("repro table3 --out " + (dir / "out").string(), dir) == 0);
    const json t = read_json(dir / "out" / "table3.json");
    const std::vector<std::vector<double>> published{{0.8556, 0.6204, 0.8528, 0.4272},
                                                     {0.8118, 0.9319, 0.8570, 0.3289},
                                                     {0.6263, 0.4128, 0.8598, 0.1700},
                                                     {0.3380, 0.6006, 0.8332, 0.7671}};
    CHECK(t["reported"].get<std::vector<std::vector<double>>>() == published);
    REQUIRE(t["mappings"].size() == 2);
    for (const auto& m : t["mappings"]) {
      const auto matrix = m["matrix"].get<std::vector<std::vector<double>>>();
      REQUIRE(matrix.size() == 4);
      double worst = 0.0;
      for (std::size_t r = 0; r < 4; ++r) {
        REQUIRE(matrix[r].size() == 4);
        for (std::size_t c = 0; c < 4; ++c) {
          CHECK((matrix[r][c] >= 0.0 && matrix[r][c] <= 1.0));
          worst = std::max(worst, std::abs(matrix[r][c] - published[r][c]));
        }
      }
      CHECK(std::abs(worst - m["max_abs_error"].get<double>()) <= 1e-12);
      CHECK(fs::exists(dir / "out" / ("table3_" + m["name"].get<std::string>() + ".csv")));
    }
    if (!t["matched"].get<bool>()) CHECK(t.contains("discrepancy"));
  }

  TEST_CASE("landscape, pathways and pmp commands write their tables") {
    const auto dir = scratch("tables");
    const auto cfg = write_config(dir, {{"field", {{"amplitude", 0.05}}},
                                        {"grid", {{"dt", 0.05}}},
                                        {"encoding", {{"max_total_order", 24}}},
                                        {"landscape",
                                         {{"axis1", {{"gene", 0}, {"lower", 0.5}, {"upper", 1.5}, {"points", 3}}},
                                          {"axis2", {{"gene", 7}, {"lower", 0.0}, {"upper", 3.0}, {"points", 4}}}}}});
    REQUIRE(run("landscape --config " + cfg.string() + " --out " + (dir / "l").string(), dir) == 0);
    const std::string csv = slurp(dir / "l" / "landscape.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 4);

    REQUIRE(run("pathways --config " + cfg.string() + " --out " + (dir / "p").string(), dir) == 0);
    CHECK(fs::exists(dir / "p" / "pathways.csv"));
    CHECK(fs::exists(dir / "p" / "significance.csv"));

    REQUIRE(run("verify pmp --config " + cfg.string() + " --out " + (dir / "v").string(), dir) == 0);
    const json v = read_json(dir / "v" / "pmp.json");
    CHECK(v["bump_max_relative_error"].get<double>() <= 1e-3);
    CHECK(fs::exists(dir / "v" / "gradient.csv"));
  }

  TEST_CASE("optimizers chain through a saved front") {
    const auto dir = scratch("optimize");
    const json small = {{"population_size", 8}, {"generations", 3}};
    const auto cfg = write_config(dir, {{"grid", {{"dt", 0.1}}},
                                        {"tga", {{"ga", small}}},
                                        {"acromuse", {{"ga", small}}},
                                        {"nsga2", {{"ga", small}, {"pilot_samples", 16}, {"max_samples", 32}}}});
    REQUIRE(run("optimize tga --config " + cfg.string() + " --out " + (dir / "t").string(), dir) == 0);
    CHECK(fs::exists(dir / "t" / "trace.csv"));
    REQUIRE(run("optimize nsga2 --config " + cfg.string() + " --out " + (dir / "n").string(), dir) == 0);
    REQUIRE(fs::exists(dir / "n" / "front.json"));
    CHECK(read_json(dir / "n" / "front.json")["certified"].get<bool>());
    REQUIRE(run("optimize acromuse --config " + cfg.string() + " --seed-front " + (dir / "n" / "front.json").string() +
                    " --out " + (dir / "a").string(),
                dir) == 0);
    CHECK(fs::exists(dir / "a" / "instances.csv"));
    CHECK(read_json(dir / "a" / "resolved-config.json")["seed_front"] == (dir / "n" / "front.json").string());
  }

  TEST_CASE("errors exit with their category code") {
    const auto dir = scratch("errors");
    const auto bad = write_config(dir, {{"bogus", 1}});
    CHECK(run("simulate --config " + bad.string() + " --out " + (dir / "o").string(), dir) == 3);
    const json err = json::parse(slurp(dir / "stderr.txt"));
    CHECK(err["error"] == "validation");
    CHECK(run("simulate --config " + (dir / "missing.json").string() + " --out " + (dir / "o").string(), dir) == 6);
    CHECK(json::parse(slurp(dir / "stderr.txt"))["error"] == "io");
    const auto wrong_type = write_config(dir, {{"seed", "one"}});
    CHECK(run("simulate --config " + wrong_type.string() + " --out " + (dir / "o").string(), dir) == 3);
    CHECK(run("simulate --precision sloppy --out " + (dir / "o").string(), dir) == 3);
  }

  TEST_CASE("rerunning a resolved config reproduces outputs bit for bit") {
    const auto dir = scratch("rerun");
    const auto cfg = write_config(dir, {{"grid", {{"dt", 0.05}}},
                                        {"moments", {{"mc_samples", 40}}},
                                        {"encoding", {{"max_total_order", 48}}},
                                        {"tga", {{"ga", {{"population_size", 8}, {"generations", 3}}}}}});
    for (const std::string cmd : {"simulate", "optimize tga"}) {
      const std::string tag = cmd == "simulate" ? "s" : "t";
      REQUIRE(run(cmd + " --seed 42 --config " + cfg.string() + " --out " + (dir / (tag + "1")).string(), dir) == 0);
      REQUIRE(run(cmd + " --config " + (dir / (tag + "1") / "resolved-config.json").string() + " --out " +
                      (dir / (tag + "2")).string(),
                  dir) == 0);
      for (const auto& entry : fs::directory_iterator(dir / (tag + "1"))) {
        const auto name = entry.path().filename().string();
        if (name == "manifest.json") continue;
        CHECK_MESSAGE(slurp(entry.path()) == slurp(dir / (tag + "2") / name), name);
      }
    }
  }

  TEST_CASE("thread count falls back to the environment") {
    const auto dir = scratch("threads");
    const auto cfg = write_config(dir, {{"grid", {{"dt", 0.1}}}});
    REQUIRE(run("simulate --config " + cfg.string() + " --out " + (dir / "o").string(), dir, "QPR_THREADS=3") == 0);
    CHECK(read_json(dir / "o" / "manifest.json")["threads"] == 3);
    REQUIRE(run("simulate --threads 2 --config " + cfg.string() + " --out " + (dir / "o").string(), dir,
                "QPR_THREADS=3") == 0);
    CHECK(read_json(dir / "o" / "manifest.json")["threads"] == 2);
  }
}
