#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tmlecvx/optim.hpp"

using namespace tmle;

namespace {

// Scalar grid refinement used as an oracle: coarse pass then repeated
// zoom until the step is below `final_step`.
double grid_maximize(const std::function<double(double)>& f, double lo,
                     double hi, double final_step) {
  double step = (hi - lo) / 400.0;
  double best = lo;
  while (true) {
    double bestv = -std::numeric_limits<double>::infinity();
    for (double e = lo; e <= hi + 0.5 * step; e += step) {
      const double v = f(e);
      if (v > bestv) {
        bestv = v;
        best = e;
      }
    }
    if (step <= final_step) return best;
    lo = best - 2.0 * step;
    hi = best + 2.0 * step;
    step = std::max(final_step, step / 50.0);
  }
}

}  // namespace

TEST_CASE("maximize_concave: quadratic solved exactly") {
  ConcaveObjective obj;
  obj.value = [](const Vec& e) { return -(e[0] - 2.0) * (e[0] - 2.0); };
  obj.gradient = [](const Vec& e) { return Vec::Constant(1, -2.0 * (e[0] - 2.0)); };
  obj.hessian = [](const Vec&) { return Mat::Constant(1, 1, -2.0); };
  Vec ehat = maximize_concave(obj, Vec::Zero(1));
  CHECK(ehat[0] == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("maximize_concave_scalar: -cosh(e) + 0.3 e -> asinh(0.3)") {
  const double ehat = maximize_concave_scalar(
      [](double e) { return -std::cosh(e) + 0.3 * e; },
      [](double e) { return -std::sinh(e) + 0.3; },
      [](double e) { return -std::cosh(e); });
  CHECK(ehat == doctest::Approx(std::asinh(0.3)).epsilon(1e-9));
  CHECK(ehat == doctest::Approx(0.29567).epsilon(1e-4));
}

TEST_CASE("maximize_concave: finite-difference Hessian fallback") {
  ConcaveObjective obj;
  obj.value = [](const Vec& e) { return -std::cosh(e[0]) + 0.3 * e[0]; };
  obj.gradient = [](const Vec& e) { return Vec::Constant(1, -std::sinh(e[0]) + 0.3); };
  // no hessian supplied
  Vec ehat = maximize_concave(obj, Vec::Zero(1));
  CHECK(ehat[0] == doctest::Approx(std::asinh(0.3)).epsilon(1e-8));
}

TEST_CASE("maximize_concave: exponential-family likelihood on a 3-atom support matches grid") {
  // atoms with scores d and base weights w; l(eps) = eps*dbar_data - log sum w exp(eps d)
  const double d0 = -1.0, d1 = 0.2, d2 = 1.5;
  const double w0 = 0.5, w1 = 0.3, w2 = 0.2;
  const double dbar = 0.4;  // empirical mean score of a pretend sample
  auto value = [&](double e) {
    return e * dbar - std::log(w0 * std::exp(e * d0) + w1 * std::exp(e * d1) +
                               w2 * std::exp(e * d2));
  };
  auto mean_tilted = [&](double e) {
    const double z0 = w0 * std::exp(e * d0), z1 = w1 * std::exp(e * d1),
                 z2 = w2 * std::exp(e * d2);
    return (z0 * d0 + z1 * d1 + z2 * d2) / (z0 + z1 + z2);
  };
  auto grad = [&](double e) { return dbar - mean_tilted(e); };
  auto hess = [&](double e) {
    const double z0 = w0 * std::exp(e * d0), z1 = w1 * std::exp(e * d1),
                 z2 = w2 * std::exp(e * d2);
    const double z = z0 + z1 + z2;
    const double m1 = (z0 * d0 + z1 * d1 + z2 * d2) / z;
    const double m2 = (z0 * d0 * d0 + z1 * d1 * d1 + z2 * d2 * d2) / z;
    return -(m2 - m1 * m1);
  };
  const double ehat = maximize_concave_scalar(value, grad, hess);
  const double egrid = grid_maximize(value, -5.0, 5.0, 1e-7);
  CHECK(std::abs(ehat - egrid) <= 1e-6);
}

TEST_CASE("fit_logistic_irls: intercept-only analytic MLE") {
  Mat design = Mat::Ones(8, 1);
  Vec y(8);
  y << 1, 0, 0, 0, 1, 0, 0, 0;  // ybar = 0.25
  auto fit = fit_logistic_irls(design, y);
  CHECK(fit.converged);
  CHECK(fit.coefficients[0] == doctest::Approx(std::log(0.25 / 0.75)).epsilon(1e-8));
  CHECK(fit.coefficients[0] == doctest::Approx(-1.0986).epsilon(1e-4));
}

TEST_CASE("fit_logistic_irls: weighted intercept equals logit of weighted mean") {
  Mat design = Mat::Ones(5, 1);
  Vec y(5), w(5), off = Vec::Zero(5);
  y << 1, 0, 1, 0, 1;
  w << 2.0, 1.0, 0.5, 3.0, 1.5;
  auto fit = fit_logistic_irls(design, y, w, off);
  const double wmean = w.dot(y) / w.sum();
  CHECK(fit.converged);
  CHECK(fit.coefficients[0] == doctest::Approx(std::log(wmean / (1 - wmean))).epsilon(1e-8));
}

TEST_CASE("fit_logistic_irls: score equation at the optimum, weighted with offset") {
  std::mt19937_64 rng(123);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud;
  const int n = 50;
  Mat design(n, 2);
  Vec y(n), w(n), off(n);
  for (int i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = nd(rng);
    off[i] = 0.3 * nd(rng);
    w[i] = 0.5 + ud(rng);
    const double p = expit(-0.4 + 0.8 * design(i, 1) + off[i]);
    y[i] = ud(rng) < p ? 1.0 : 0.0;
  }
  auto fit = fit_logistic_irls(design, y, w, off);
  REQUIRE(fit.converged);
  // design' diag(w) (y - pi) ~ 0
  Vec pi(n);
  for (int i = 0; i < n; ++i)
    pi[i] = expit(design.row(i).dot(fit.coefficients) + off[i]);
  const Vec score = design.transpose() * (w.array() * (y - pi).array()).matrix();
  CHECK(score.lpNorm<Eigen::Infinity>() <= 1e-8 * n);

  // grid oracle on each coordinate through the optimum (profile check):
  auto dev = [&](double b0, double b1) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double lp = b0 + b1 * design(i, 1) + off[i];
      s += w[i] * (y[i] * log_sigmoid(lp) + (1 - y[i]) * log_sigmoid(-lp));
    }
    return s;
  };
  const double b0 = fit.coefficients[0], b1 = fit.coefficients[1];
  const double g0 = grid_maximize([&](double b) { return dev(b, b1); },
                                  b0 - 0.5, b0 + 0.5, 1e-6);
  const double g1 = grid_maximize([&](double b) { return dev(b0, b); },
                                  b1 - 0.5, b1 + 0.5, 1e-6);
  CHECK(std::abs(b0 - g0) <= 1e-5);
  CHECK(std::abs(b1 - g1) <= 1e-5);
}

TEST_CASE("fit_logistic_irls: complete separation clamps and flags") {
  const int n = 20;
  Mat design(n, 2);
  Vec y(n);
  for (int i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = i < n / 2 ? -1.0 - 0.1 * i : 1.0 + 0.1 * i;
    y[i] = i < n / 2 ? 0.0 : 1.0;
  }
  auto fit = fit_logistic_irls(design, y);
  CHECK(fit.separation);
  CHECK(fit.coefficients.lpNorm<Eigen::Infinity>() <= 30.0 + 1e-9);
  CHECK(fit.coefficients.allFinite());
}

TEST_CASE("find_root_bracketed") {
  CHECK(find_root_bracketed([](double e) { return e - 1.0; }, 0.0, 2.0) ==
        doctest::Approx(1.0).epsilon(1e-10));
  const double r = find_root_bracketed([](double e) { return e * e * e - 2.0; }, 0.0, 2.0);
  CHECK(r == doctest::Approx(std::cbrt(2.0)).epsilon(1e-9));
  CHECK(r == doctest::Approx(1.259921).epsilon(1e-6));
  CHECK_THROWS_AS(find_root_bracketed([](double e) { return e * e + 1.0; }, -1.0, 1.0),
                  BracketError);
}

TEST_CASE("find_root_bracketed agrees with maximize_concave on a concave score") {
  // gradient of -cosh(e) + 0.3 e has a root at asinh(0.3)
  auto f = [](double e) { return -std::sinh(e) + 0.3; };
  const double root = find_root_bracketed(f, -2.0, 2.0);
  const double ehat = maximize_concave_scalar(
      [](double e) { return -std::cosh(e) + 0.3 * e; }, f,
      [](double e) { return -std::cosh(e); });
  CHECK(std::abs(root - ehat) <= 1e-8);
}
