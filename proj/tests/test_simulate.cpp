#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tmlecvx/simulate.hpp"

using namespace tmle;
using namespace tmle::simulate;

TEST_CASE("pm_true mechanisms and mu_true") {
  CHECK(pm_true(Mechanism::D1, 0.0) == doctest::Approx(expit(1.0)));
  CHECK(pm_true(Mechanism::D2, 0.0) == doctest::Approx(expit(-1.0)));
  CHECK(pm_true(Mechanism::D3, 0.5) == doctest::Approx(expit(-6.0 + 1.0 + 0.5)));
  // D3 population minimum at x2 = -1/2: expit(-6.5)
  CHECK(pm_true(Mechanism::D3, -0.5) == doctest::Approx(expit(-6.5)));
  CHECK(expit(-6.5) == doctest::Approx(0.0015).epsilon(0.01));
  CHECK(mu_true(0.0) == doctest::Approx(0.5));
  CHECK(mu_true(1.0) == doctest::Approx(0.5));  // x2 - x2^2 symmetric roots
}

TEST_CASE("gen_missing: determinism and marginal structure") {
  auto a = gen_missing(500, Mechanism::D2, 99);
  auto b = gen_missing(500, Mechanism::D2, 99);
  CHECK(a.x == b.x);
  CHECK(a.m == b.m);
  CHECK(a.y == b.y);
  auto c = gen_missing(500, Mechanism::D2, 100);
  CHECK(a.x != c.x);

  // x2 is marginally standard normal under the defaults
  auto big = gen_missing(200000, Mechanism::D1, 1);
  const double m2 = big.x.col(1).mean();
  const double v2 = (big.x.col(1).array() - m2).square().mean();
  CHECK(m2 == doctest::Approx(0.0).epsilon(0.02));
  CHECK(v2 == doctest::Approx(1.0).epsilon(0.02));
  const double v1 = (big.x.col(0).array() - big.x.col(0).mean()).square().mean();
  CHECK(v1 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("gen_missing D3: observed propensity minimum and median match the paper scale") {
  auto d = gen_missing(1000000, Mechanism::D3, 12);
  std::vector<double> pm(d.n());
  for (int i = 0; i < d.n(); ++i) pm[i] = pm_true(Mechanism::D3, d.x(i, 1));
  const double mn = *std::min_element(pm.begin(), pm.end());
  CHECK(mn == doctest::Approx(0.0015).epsilon(0.02));
  std::nth_element(pm.begin(), pm.begin() + pm.size() / 2, pm.end());
  const double med = pm[pm.size() / 2];
  CHECK(med == doctest::Approx(0.0047).epsilon(0.05));
}

TEST_CASE("generator mean of E[Y|X] agrees with the quadrature truth") {
  auto d = gen_missing(1000000, Mechanism::D1, 4);
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < d.n(); ++i) {
    const double v = mu_true(d.x(i, 1));
    s += v;
    ss += v * v;
  }
  const double mean = s / d.n();
  const double se = std::sqrt((ss / d.n() - mean * mean) / d.n());
  const double truth = missing_mean_truth_quadrature();
  CHECK(std::abs(mean - truth) <= 4.0 * se);
  // frozen value of the deterministic quadrature
  CHECK(truth == doctest::Approx(0.355843).epsilon(2e-5));
}

TEST_CASE("gen_median D1: residual median is zero by construction") {
  auto d = gen_median(1000000, MedianDesign::D1, 5);
  std::vector<double> r(d.n());
  for (int i = 0; i < d.n(); ++i) {
    const double g = expit(1.5 * d.x(i, 0) + 2.5 * d.x(i, 1));
    r[i] = d.y[i] - g;
  }
  std::nth_element(r.begin(), r.begin() + r.size() / 2, r.end());
  CHECK(std::abs(r[r.size() / 2]) <= 0.002);
  // covariates uniform on (0,1)
  CHECK(d.x.minCoeff() >= 0.0);
  CHECK(d.x.maxCoeff() <= 1.0);
}

TEST_CASE("gen_shift: exposures are bin midpoints, outcomes binary, deterministic") {
  auto d = gen_shift(2000, 77);
  auto d2 = gen_shift(2000, 77);
  CHECK(d.a == d2.a);
  CHECK(d.gamma == doctest::Approx(kShiftGamma));
  const double bw = (d.a_max - d.a_min) / 16.0;
  for (int i = 0; i < d.n(); ++i) {
    const double k = (d.a[i] - d.a_min) / bw - 0.5;
    CHECK(std::abs(k - std::round(k)) <= 1e-9);  // midpoint of a generator bin
    CHECK((d.y[i] == 0.0 || d.y[i] == 1.0));
  }
}

TEST_CASE("shift_true_value: independent quadrature recomputation") {
  const double v = shift_true_value();
  CHECK(v > 0.5);
  CHECK(v < 0.9);
  // independent recomputation: Simpson over w with the generator's bin logic
  const int bins = 16;
  const double lo = 0.0, hi = 2.0, bw = (hi - lo) / bins;
  auto integrand = [&](double w) {
    double logits[bins], probs[bins];
    double mx = -1e300;
    for (int b = 0; b < bins; ++b) {
      const double mid = lo + (b + 0.5) * bw;
      const double t = (mid - (0.5 + w)) / 0.3;
      logits[b] = -0.5 * t * t;
      mx = std::max(mx, logits[b]);
    }
    double z = 0.0;
    for (int b = 0; b < bins; ++b) {
      probs[b] = std::exp(logits[b] - mx);
      z += probs[b];
    }
    double s = 0.0;
    for (int b = 0; b < bins; ++b) {
      const double mid = lo + (b + 0.5) * bw;
      s += probs[b] / z * expit(-1.0 + mid + kShiftGamma + w);
    }
    return s;
  };
  const int npan = 4000;
  double acc = integrand(0.0) + integrand(1.0);
  for (int k = 1; k < npan; ++k)
    acc += integrand(static_cast<double>(k) / npan) * (k % 2 ? 4.0 : 2.0);
  const double ref = acc / (3.0 * npan);
  CHECK(v == doctest::Approx(ref).epsilon(1e-7));
}

TEST_CASE("efficiency_bound_oracle: D1 near its reference at moderate replication") {
  auto r = efficiency_bound_oracle(Mechanism::D1, 300000, 3);
  CHECK(r.se[0] > 0.0);
  CHECK(std::abs(r.value[0] - 0.34) <= std::max(0.02, 5.0 * r.se[0]));
}

TEST_CASE("true_value_oracle: missing mean and median D1") {
  auto mm = true_value_oracle(Problem::missing_mean, 0, 500000, 21);
  CHECK(std::abs(mm.value[0] - missing_mean_truth_quadrature()) <= 4.0 * mm.se[0]);

  auto md = true_value_oracle(Problem::median_reg, 0, 300000, 22, 2);
  CHECK(md.value[0] == doctest::Approx(1.5).epsilon(0.1));
  CHECK(md.value[1] == doctest::Approx(2.5).epsilon(0.05));

  auto sh = true_value_oracle(Problem::shift_effect, 0, 500000, 23);
  CHECK(std::abs(sh.value[0] - shift_true_value()) <= 4.0 * sh.se[0]);
}

TEST_CASE("run_study: smoke on all three problems, failures recorded not dropped") {
  StudyConfig cfg;
  cfg.problem = Problem::missing_mean;
  cfg.mechanism = Mechanism::D1;
  cfg.spec = missing_mean::WorkingSpec::i;
  cfg.n = 400;
  cfg.replicates = 10;
  cfg.seed = 1000;
  cfg.workers = 2;
  auto res = run_study(cfg);
  REQUIRE(res.estimators.size() == 4);
  for (const auto& e : res.estimators) {
    CHECK(e.estimates.rows() == 10);
    CHECK(e.failures == 0);
    CHECK(e.mean[0] > 0.0);
    CHECK(e.mean[0] < 1.0);
    CHECK(std::isfinite(e.relative_efficiency));
    CHECK_FALSE(e.cell_unreliable);
  }
  CHECK(std::isfinite(res.bound_used));
  CHECK(res.true_value_used.size() == 1);

  StudyConfig mcfg;
  mcfg.problem = Problem::median_reg;
  mcfg.design = MedianDesign::D1;
  mcfg.n = 60;
  mcfg.replicates = 3;
  mcfg.seed = 5;
  mcfg.workers = 1;
  mcfg.true_beta = Eigen::Vector2d(1.5, 2.5);
  auto mres = run_study(mcfg);
  REQUIRE(mres.estimators.size() == 2);
  CHECK(mres.estimators[0].label == "tmle");
  CHECK(mres.estimators[1].label == "substitution");
  CHECK(mres.estimators[0].estimates.cols() == 2);

  StudyConfig scfg;
  scfg.problem = Problem::shift_effect;
  scfg.n = 300;
  scfg.replicates = 3;
  scfg.seed = 6;
  scfg.workers = 1;
  scfg.true_value = shift_true_value();
  auto sres = run_study(scfg);
  REQUIRE(sres.estimators.size() == 1);
  CHECK(sres.estimators[0].failures == 0);
}

TEST_CASE("seed determinism holds regardless of worker count") {
  StudyConfig cfg;
  cfg.problem = Problem::missing_mean;
  cfg.mechanism = Mechanism::D2;
  cfg.spec = missing_mean::WorkingSpec::i;
  cfg.n = 300;
  cfg.replicates = 12;
  cfg.seed = 314;
  cfg.efficiency_bound = 1.05;  // skip the MC bound for speed
  cfg.true_value = missing_mean_truth_quadrature();

  cfg.workers = 1;
  auto r1 = run_study(cfg);
  cfg.workers = 4;
  auto r4 = run_study(cfg);
  cfg.workers = 4;
  auto r4b = run_study(cfg);
  REQUIRE(r1.estimators.size() == r4.estimators.size());
  for (std::size_t k = 0; k < r1.estimators.size(); ++k) {
    CHECK(r1.estimators[k].estimates == r4.estimators[k].estimates);  // bitwise
    CHECK(r4.estimators[k].estimates == r4b.estimators[k].estimates);
    CHECK(r1.estimators[k].mean[0] == r4.estimators[k].mean[0]);
  }
}

TEST_CASE("StudyConfig validation") {
  StudyConfig cfg;
  cfg.replicates = 0;
  CHECK_THROWS(cfg.validate());
  cfg.replicates = 1;
  cfg.n = 5;
  CHECK_THROWS(cfg.validate());
}
