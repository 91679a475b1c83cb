#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "tmlecvx/io.hpp"
#include "tmlecvx/simulate.hpp"

using namespace tmle;
namespace fs = std::filesystem;

namespace {

fs::path make_tmpdir() {
  auto base = fs::temp_directory_path() / "tmlecvx_test";
  fs::create_directories(base);
  static int counter = 0;
  auto dir = base / ("case_" + std::to_string(::getpid()) + "_" +
                     std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TMLECVX_CLI_PATH) + " " + args +
                          " >/dev/null 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

io::json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return io::json::parse(in);
}

}  // namespace

TEST_CASE("missing-data CSV round trip") {
  auto dir = make_tmpdir();
  auto d = simulate::gen_missing(50, simulate::Mechanism::D2, 3);
  const auto path = (dir / "m.csv").string();
  io::write_missing_csv(path, d);
  auto r = io::read_missing_csv(path);
  REQUIRE(r.n() == d.n());
  CHECK((r.x - d.x).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK(r.m == d.m);
  for (int i = 0; i < d.n(); ++i)
    if (d.m[i] == 1) CHECK(r.y[i] == d.y[i]);
}

TEST_CASE("median CSV round trip") {
  auto dir = make_tmpdir();
  auto d = simulate::gen_median(40, simulate::MedianDesign::D2, 9);
  const auto path = (dir / "med.csv").string();
  io::write_median_csv(path, d);
  auto r = io::read_median_csv(path);
  REQUIRE(r.n() == d.n());
  CHECK((r.x - d.x).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((r.y - d.y).lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("shift CSV round trip") {
  auto dir = make_tmpdir();
  auto d = simulate::gen_shift(60, 5);
  const auto path = (dir / "s.csv").string();
  io::write_shift_csv(path, d);
  auto r = io::read_shift_csv(path, d.gamma, d.a_min, d.a_max);
  REQUIRE(r.n() == d.n());
  CHECK((r.w - d.w).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((r.a - d.a).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((r.y - d.y).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("malformed input raises UsageError with diagnostics") {
  auto dir = make_tmpdir();
  const auto path = (dir / "bad.csv").string();
  {
    std::ofstream out(path);
    out << "a,b,c\n1,2,3\n";
  }
  CHECK_THROWS_AS(io::read_missing_csv(path), UsageError);
  {
    std::ofstream out(path);
    out << "x1,x2,m,y\n0.1,0.2,1,notanumber\n";
  }
  try {
    io::read_missing_csv(path);
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }
  // y present on a missing row is a schema violation
  {
    std::ofstream out(path);
    out << "x1,x2,m,y\n0.1,0.2,0,1\n";
  }
  CHECK_THROWS_AS(io::read_missing_csv(path), UsageError);
}

TEST_CASE("report_to_json carries the estimate and trace") {
  EstimateReport rep;
  rep.psi_hat = Vec::Constant(1, 0.4);
  rep.variance_hat = Mat::Constant(1, 1, 0.01);
  rep.trace.converged = true;
  rep.trace.stop_reason = StopReason::epsilon_small;
  rep.trace.iterations.push_back(
      {Vec::Constant(1, 0.2), -1.5, Vec::Constant(1, 0.001)});
  finalize_wald_ci(rep);
  auto j = io::report_to_json(rep);
  CHECK(j["psi_hat"][0].get<double>() == doctest::Approx(0.4));
  CHECK(j["trace"]["converged"].get<bool>());
  CHECK(j["trace"]["stop_reason"].get<std::string>() == "epsilon_small");
  CHECK(j["trace"]["iterations"].size() == 1);
}

TEST_CASE("sha256_file is stable and content-sensitive") {
  auto dir = make_tmpdir();
  const auto p1 = (dir / "f1").string(), p2 = (dir / "f2").string();
  std::ofstream(p1) << "hello\n";
  std::ofstream(p2) << "hello\n";
  CHECK(io::sha256_file(p1) == io::sha256_file(p2));
  CHECK(io::sha256_file(p1).size() == 64);
  std::ofstream(p2, std::ios::app) << "x";
  CHECK(io::sha256_file(p1) != io::sha256_file(p2));
}

TEST_CASE("cli: version and usage errors") {
  CHECK(run_cli("--version") == 0);
  CHECK(run_cli("definitely-not-a-subcommand") == 2);
  CHECK(run_cli("estimate-missing --no-such-flag") == 2);
  // gen and study demand a seed
  auto dir = make_tmpdir();
  CHECK(run_cli("gen --problem missing --mechanism D1 --n 50 --out " +
                (dir / "a.csv").string()) == 2);
  CHECK(run_cli("study --problem missing --n 50 --replicates 2 --out " +
                dir.string()) == 2);
}

TEST_CASE("cli: gen determinism and estimate round trip") {
  auto dir = make_tmpdir();
  const auto c1 = (dir / "d1.csv").string(), c2 = (dir / "d2.csv").string();
  REQUIRE(run_cli("gen --problem missing --mechanism D3 --n 300 --seed 1 --out " + c1) == 0);
  REQUIRE(run_cli("gen --problem missing --mechanism D3 --n 300 --seed 1 --out " + c2) == 0);
  CHECK(io::sha256_file(c1) == io::sha256_file(c2));

  auto est = dir / "est";
  REQUIRE(run_cli("estimate-missing --data " + c1 + " --spec i --impl 1,2,3,4 --out " +
                  est.string()) == 0);
  auto j = read_json_file(est / "report.json");
  for (const char* k : {"impl1", "impl2", "impl3", "impl4"}) {
    REQUIRE(j["implementations"].contains(k));
    const double psi = j["implementations"][k]["psi_hat"][0].get<double>();
    CHECK(psi > 0.0);
    CHECK(psi < 1.0);
  }
  // manifest digests match the files on disk
  auto m = read_json_file(est / "manifest.json");
  REQUIRE(m["outputs"].size() >= 1);
  for (const auto& o : m["outputs"]) {
    const auto path = o["path"].get<std::string>();
    CHECK(io::sha256_file(path) == o["sha256"].get<std::string>());
  }
}

TEST_CASE("cli: malformed csv exits 2, estimate-median and estimate-shift run") {
  auto dir = make_tmpdir();
  const auto bad = (dir / "bad.csv").string();
  std::ofstream(bad) << "x1,x2,m,y\n0.1,oops,1,1\n";
  CHECK(run_cli("estimate-missing --data " + bad + " --out " + dir.string()) == 2);

  const auto med = (dir / "med.csv").string();
  REQUIRE(run_cli("gen --problem median --design D1 --n 80 --seed 2 --out " + med) == 0);
  auto mdir = dir / "med_est";
  REQUIRE(run_cli("estimate-median --data " + med + " --out " + mdir.string()) == 0);
  auto mj = read_json_file(mdir / "report.json");
  CHECK(mj["beta_tmle"].size() == 2);

  const auto sh = (dir / "shift.csv").string();
  REQUIRE(run_cli("gen --problem shift --n 200 --seed 3 --out " + sh) == 0);
  auto sdir = dir / "shift_est";
  REQUIRE(run_cli("estimate-shift --data " + sh + " --gamma 0.5 --a-min 0 --a-max 2 --out " +
                  sdir.string()) == 0);
  auto sj = read_json_file(sdir / "report.json");
  const double psi = sj["psi_hat"][0].get<double>();
  CHECK(psi > 0.0);
  CHECK(psi < 1.0);
}

TEST_CASE("cli: study emits csv, json and manifest") {
  auto dir = make_tmpdir();
  REQUIRE(run_cli("study --problem missing --mechanism D1 --spec i --n 200 "
                  "--replicates 4 --seed 10 --workers 2 --bound 0.34 --truth 0.355843 "
                  "--out " + dir.string()) == 0);
  CHECK(fs::exists(dir / "study.csv"));
  CHECK(fs::exists(dir / "study.json"));
  CHECK(fs::exists(dir / "manifest.json"));
  auto j = read_json_file(dir / "study.json");
  REQUIRE(j["estimators"].size() == 4);
  CHECK(j["estimators"][0]["failures"].get<int>() == 0);
}

TEST_CASE("config file supplies defaults, flags override") {
  auto dir = make_tmpdir();
  const auto med = (dir / "m.csv").string();
  REQUIRE(run_cli("gen --problem median --design D1 --n 60 --seed 8 --out " + med) == 0);
  const auto cfg = (dir / "run.cfg").string();
  std::ofstream(cfg) << "max-iter=3\n";
  auto odir = dir / "out";
  REQUIRE(run_cli("estimate-median --config " + cfg + " --data " + med + " --out " +
                  odir.string()) == 0);
  auto j = read_json_file(odir / "report.json");
  CHECK(j["n_iter"].get<int>() <= 3);
}
