#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tiltsense/estimands.hpp"
#include "tiltsense/observed.hpp"

using namespace tiltsense;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string cli_bin() {
  const char* env = std::getenv("TILTSENSE_CLI_BIN");
  REQUIRE_MESSAGE(env != nullptr, "TILTSENSE_CLI_BIN must point at the CLI binary");
  return env;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd =
      cli_bin() + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("tiltsense_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("simulate -> fit -> sweep pipeline with the dataset deleted before the sweep") {
  const fs::path dir = fresh_dir("pipeline");
  const std::string data = (dir / "data.csv").string();
  const std::string fit = (dir / "fit.json").string();
  const std::string table = (dir / "table.csv").string();

  REQUIRE(run("simulate --dgp example1 --n 2000 --seed 5 --out " + data, dir).exit_code == 0);
  CHECK(fs::exists(data));
  CHECK(fs::exists(data + ".truth.json"));

  REQUIRE(run("fit --in " + data + " --model em:2 --boot 10 --seed 5 --out " + fit, dir)
              .exit_code == 0);

  // fit-once contract: the sweep must not need the dataset
  fs::remove(data);
  const RunResult sw = run("sweep --fit " + fit +
                               " --selection logistic --grid \"g0=-0.1:0.1:3;g1=-0.1:0.1:3\""
                               " --estimand ate --out " +
                               table,
                           dir);
  REQUIRE(sw.exit_code == 0);
  const std::string csv = slurp(table);
  CHECK(csv.rfind("g0,g1,estimand,q,estimate,lo,hi,significant,na_flag\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);  // header + 9 cells
}

TEST_CASE("1x1 sweep at the origin reproduces the fit's naive ATE") {
  const fs::path dir = fresh_dir("origin");
  const std::string data = (dir / "data.csv").string();
  const std::string fit_path = (dir / "fit.json").string();
  const std::string table = (dir / "table.csv").string();
  REQUIRE(run("simulate --dgp example1 --n 1500 --seed 9 --out " + data, dir).exit_code == 0);
  REQUIRE(run("fit --in " + data + " --model em:2 --seed 9 --out " + fit_path, dir).exit_code == 0);
  REQUIRE(run("sweep --fit " + fit_path +
                  " --selection logistic --grid \"g0=0:0:1;g1=0:0:1\" --estimand ate --out " +
                  table,
              dir)
              .exit_code == 0);

  const ObservedFit fit = ingest_external_fit(fit_path);
  const double naive = mean(fit.arms[1].units[0]) - mean(fit.arms[0].units[0]);
  const std::string csv = slurp(table);
  const auto line_start = csv.find('\n') + 1;
  std::stringstream row(csv.substr(line_start));
  std::string cell;
  std::getline(row, cell, ',');  // g0
  std::getline(row, cell, ',');  // g1
  std::getline(row, cell, ',');  // estimand
  CHECK(cell == "ate");
  std::getline(row, cell, ',');  // q (empty)
  std::getline(row, cell, ',');  // estimate
  CHECK(std::stod(cell) == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("malformed grid exits 2 with a machine-readable error") {
  const fs::path dir = fresh_dir("badgrid");
  const std::string data = (dir / "data.csv").string();
  const std::string fit = (dir / "fit.json").string();
  REQUIRE(run("simulate --dgp example1 --n 400 --seed 2 --out " + data, dir).exit_code == 0);
  REQUIRE(run("fit --in " + data + " --model em:1 --out " + fit, dir).exit_code == 0);
  const RunResult r = run("sweep --fit " + fit + " --grid \"nonsense\" --out " +
                              (dir / "t.csv").string(),
                          dir);
  CHECK(r.exit_code == 2);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j["error"]["code"] == "USAGE");
  CHECK(j["error"]["field"] == "grid");
}

TEST_CASE("sweep output is bit-identical across worker counts") {
  const fs::path dir = fresh_dir("workers");
  const std::string data = (dir / "data.csv").string();
  const std::string fit = (dir / "fit.json").string();
  REQUIRE(run("simulate --dgp latent-class --n 1200 --seed 3 --out " + data, dir).exit_code == 0);
  REQUIRE(run("fit --in " + data + " --model em:2 --boot 16 --seed 3 --out " + fit, dir)
              .exit_code == 0);
  const std::string t1 = (dir / "t1.csv").string();
  const std::string t4 = (dir / "t4.csv").string();
  const std::string grid = " --grid \"g0=-0.2:0.2:5;g1=-0.2:0.2:5\" --estimand qte --q 0.25,0.5,0.75 ";
  REQUIRE(run("sweep --fit " + fit + grid + "--workers 1 --out " + t1, dir).exit_code == 0);
  REQUIRE(run("sweep --fit " + fit + grid + "--workers 4 --out " + t4, dir).exit_code == 0);
  CHECK(slurp(t1) == slurp(t4));
}

TEST_CASE("latent-class fit, sweep and bounds") {
  const fs::path dir = fresh_dir("latent");
  const std::string data = (dir / "data.csv").string();
  const std::string fit = (dir / "fit.json").string();
  REQUIRE(run("simulate --dgp latent-class --n 1500 --seed 11 --out " + data, dir).exit_code == 0);
  REQUIRE(run("fit --in " + data + " --model latent-class --seed 11 --out " + fit, dir)
              .exit_code == 0);
  const std::string table = (dir / "table.csv").string();
  REQUIRE(run("sweep --fit " + fit +
                  " --selection latent-class --grid \"w0=-1:1:3;w1=-1:1:3\" --estimand ate --out " +
                  table,
              dir)
              .exit_code == 0);
  CHECK(slurp(table).rfind("w0,w1,", 0) == 0);

  const std::string bounds = (dir / "bounds.csv").string();
  REQUIRE(run("bounds --fit " + fit + " --estimand qte --q 0.25,0.5,0.75 --out " + bounds, dir)
              .exit_code == 0);
  const std::string csv = slurp(bounds);
  CHECK(csv.rfind("estimand,q,lower,upper", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("calibrate and check emit reports") {
  const fs::path dir = fresh_dir("calibrate");
  const std::string data = (dir / "data.csv").string();
  const std::string fit = (dir / "fit.json").string();
  REQUIRE(run("simulate --dgp latent-class --n 2000 --seed 13 --out " + data, dir).exit_code == 0);
  REQUIRE(run("fit --in " + data + " --model em:2 --seed 13 --out " + fit, dir).exit_code == 0);

  const std::string calib = (dir / "calib.json").string();
  const RunResult cal = run("calibrate --data " + data + " --fit " + fit +
                                " --covars x --rho-star 0.01,0.04 --out " + calib,
                            dir);
  REQUIRE(cal.exit_code == 0);
  const auto j = nlohmann::json::parse(slurp(calib));
  CHECK(j.contains("rho2_x"));
  CHECK(j["mapping"].size() == 2);
  CHECK(cal.out.find("covariate") != std::string::npos);

  const RunResult ck =
      run("check --fit " + fit + " --selection logistic --point \"g0=0.05,g1=0.05\"", dir);
  REQUIRE(ck.exit_code == 0);
  const auto report = nlohmann::json::parse(ck.out);
  CHECK(report["arm0"].contains("ess_ratio"));
  CHECK(report["arm0"]["integral_constraint_residual"].get<double>() <= 1e-8);
}

TEST_CASE("ingest validates and exits 3 on schema violations") {
  const fs::path dir = fresh_dir("ingest");
  const std::string bad = (dir / "bad.json").string();
  std::ofstream(bad) << R"({"arms": []})";
  const RunResult r = run("ingest --in " + bad + " --out " + (dir / "out.json").string(), dir);
  CHECK(r.exit_code == 3);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j["error"]["code"] == "SCHEMA_VIOLATION");

  // a valid two-part fit round-trips through ingest
  const std::string good = (dir / "good.json").string();
  std::ofstream(good) << R"({
    "prevalence": {"n0": 10, "n1": 10},
    "scale": "log",
    "arms": [
      {"t": 0, "units": [{"weights": [1.0], "means": [2.0], "sds": [0.5]}], "atom": 0.3},
      {"t": 1, "units": [{"weights": [1.0], "means": [2.2], "sds": [0.6]}], "atom": 0.2}
    ]
  })";
  const std::string out = (dir / "norm.json").string();
  REQUIRE(run("ingest --in " + good + " --out " + out, dir).exit_code == 0);
  const ObservedFit fit = ingest_external_fit(out);
  CHECK(fit.scale == OutcomeScale::Log);
  CHECK(fit.atom[0].value() == doctest::Approx(0.3));
}
