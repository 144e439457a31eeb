#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "doctest.h"
#include "wrsec/container.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "wrsec_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

int cli(const std::string& args) {
  const std::string cmd = std::string(WRSEC_CLI_PATH) + " " + args + " 2>>" + at("stderr.log") + " >>" +
                          at("stdout.log");
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json load_json(const std::string& path) { return json::parse(slurp(path)); }

void write_column(const std::string& path, int n, double value, bool header = false) {
  std::ofstream f(path);
  if (header) f << "x\n";
  for (int i = 0; i < n; ++i) f << value << '\n';
}

}  // namespace

TEST_CASE("gen is deterministic per seed") {
  REQUIRE(cli("gen --seed 5 --out " + at("a.wrs")) == 0);
  REQUIRE(cli("gen --seed 5 --out " + at("b.wrs")) == 0);
  REQUIRE(cli("gen --seed 6 --out " + at("c.wrs")) == 0);
  CHECK(slurp(at("a.wrs")) == slurp(at("b.wrs")));
  CHECK(slurp(at("a.wrs")) != slurp(at("c.wrs")));
  const auto m = load_json(at("a.wrs.manifest.json"));
  CHECK(m["subcommand"] == "gen");
  CHECK(m["parameters"]["hidden-dim"] == 256);
  CHECK(m["seeds"]["seed"] == 5);
  CHECK(m.contains("tool_version"));
}

TEST_CASE("release then attack recovers the model") {
  REQUIRE(cli("gen --seed 1 --out " + at("model.wrs")) == 0);
  REQUIRE(cli("release --model " + at("model.wrs") + " --out " + at("package.wrs")) == 0);
  REQUIRE(cli("attack --package " + at("package.wrs") + " --ground-truth " + at("model.wrs") + " --out " +
                at("report.json") + " --heatmap " + at("err.csv") + " --recovered " + at("recovered.wrs")) == 0);
  const auto r = load_json(at("report.json"));
  CHECK(r["recovered_ratio"].get<double>() >= 0.995);
  CHECK(r["cost"]["total"].get<double>() > 0);
  const auto m = load_json(at("report.json.manifest.json"));
  CHECK(m["notes"]["runtime_seconds"].get<double>() >= 0.0);
  const auto truth = wrsec::load_model(at("model.wrs"));
  const auto rec = wrsec::load_model(at("recovered.wrs"));
  CHECK((rec.W - truth.W).cwiseAbs().maxCoeff() < 1e-9);

  SUBCASE("thread count does not change the report") {
    REQUIRE(cli("attack --threads 4 --package " + at("package.wrs") + " --ground-truth " + at("model.wrs") +
                  " --out " + at("report4.json")) == 0);
    CHECK(slurp(at("report4.json")) == slurp(at("report.json")));
  }
  SUBCASE("f16 storage recovers less or equal") {
    REQUIRE(cli("release --precision f16 --model " + at("model.wrs") + " --out " + at("package16.wrs")) == 0);
    REQUIRE(cli("attack --package " + at("package16.wrs") + " --ground-truth " + at("model.wrs") + " --out " +
                  at("report16.json")) == 0);
    CHECK(load_json(at("report16.json"))["recovered_ratio"].get<double>() <=
          r["recovered_ratio"].get<double>());
  }
}

TEST_CASE("run and taylor-run agree near the expansion point") {
  REQUIRE(cli("gen --seed 2 --out " + at("m2.wrs")) == 0);
  REQUIRE(cli("release --order 8 --model " + at("m2.wrs") + " --out " + at("p2.wrs")) == 0);
  write_column(at("x.csv"), 64, 0.25, true);
  REQUIRE(cli("run --model " + at("m2.wrs") + " --input " + at("x.csv") + " --out " + at("y.csv")) == 0);
  REQUIRE(cli("taylor-run --package " + at("p2.wrs") + " --input " + at("x.csv") + " --out " + at("yt.csv")) == 0);
  std::ifstream a(at("y.csv")), b(at("yt.csv"));
  double ya, yb;
  int rows = 0;
  double num = 0, den = 0;
  while (a >> ya && b >> yb) {
    num += (ya - yb) * (ya - yb);
    den += ya * ya;
    ++rows;
  }
  CHECK(rows == 64);
  CHECK(std::sqrt(num) <= 1e-3 * std::sqrt(den));
  CHECK(fs::exists(at("y.csv.manifest.json")));
  CHECK(load_json(at("yt.csv.manifest.json"))["notes"]["cost"]["total"].get<double>() > 0);
}

TEST_CASE("game correctness on defaults wins every trial") {
  REQUIRE(cli("game --which correctness --out " + at("outcome.json")) == 0);
  const auto o = load_json(at("outcome.json"));
  CHECK(o["win_rate"].get<double>() == 1.0);
  CHECK(o["trials"] == 100);
  REQUIRE(cli("game --which wind --adversary random --trials 50 --threads 3 --out " + at("wind.json")) == 0);
  CHECK(load_json(at("wind.json"))["advantage"].get<double>() <= 0.5);
}

TEST_CASE("manifests replay to identical outputs") {
  REQUIRE(cli("gen --seed 9 --hidden-dim 32 --out " + at("r_model.wrs")) == 0);
  REQUIRE(cli("release --model " + at("r_model.wrs") + " --calib-seed 4 --out " + at("r_package.wrs")) == 0);
  REQUIRE(cli("attack --package " + at("r_package.wrs") + " --ground-truth " + at("r_model.wrs") + " --out " +
                at("r_report.json") + " --heatmap " + at("r_err.csv")) == 0);
  REQUIRE(cli("game --which wrec --trials 4 --hidden-dim 32 --out " + at("r_game.json")) == 0);
  REQUIRE(cli("stability --steps 41 --out-dir " + at("r_stab")) == 0);
  const auto replay = at("replayed");
  for (const std::string m : {"r_model.wrs", "r_package.wrs", "r_report.json", "r_game.json"}) {
    REQUIRE(cli("replay --manifest " + at(m + ".manifest.json") + " --out-dir " + replay) == 0);
  }
  REQUIRE(cli("replay --manifest " + at("r_stab/silu_stability.manifest.json") + " --out-dir " + replay) == 0);
  for (const std::string f : {"r_model.wrs", "r_package.wrs", "r_report.json", "r_err.csv", "r_game.json"}) {
    CHECK_MESSAGE(slurp(at(f)) == slurp((fs::path(replay) / f).string()), f);
  }
  CHECK(slurp(at("r_stab/silu_ratio_2_4.csv")) == slurp((fs::path(replay) / "r_stab" / "silu_ratio_2_4.csv").string()));
}

TEST_CASE("exit codes") {
  CHECK(cli("frobnicate") == 1);
  CHECK(cli("attack") == 1);
  CHECK(cli("gen --hidden-dim -3") == 1);
  CHECK(cli("attack --package " + at("missing.wrs")) == 2);
  CHECK(cli("gen --out /nonexistent-dir/m.wrs") == 2);
  REQUIRE(cli("gen --seed 1 --hidden-dim 8 --out " + at("e_model.wrs")) == 0);
  CHECK(cli("attack --package " + at("e_model.wrs")) == 2);  // not a package
  CHECK(cli("attack --package " + at("e_model.wrs") + " --heatmap " + at("h.csv")) == 1);
  CHECK(cli("release --model " + at("e_model.wrs") + " --order 99 --out " + at("e.wrs")) == 1);
  write_column(at("short.csv"), 3, 1.0);
  CHECK(cli("run --model " + at("e_model.wrs") + " --input " + at("short.csv")) == 1);
  // weights far outside half range overflow the stored coefficients
  REQUIRE(cli("gen --seed 1 --hidden-dim 8 --stddev 1e6 --out " + at("big.wrs")) == 0);
  CHECK(cli("release --precision f16 --model " + at("big.wrs") + " --out " + at("big_p.wrs")) == 3);
  CHECK(cli("--help") == 0);
}
