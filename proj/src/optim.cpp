#include "tmlecvx/optim.hpp"

#include <Eigen/Cholesky>

namespace tmle {

namespace {

Mat fd_hessian(const ConcaveObjective& obj, const Vec& x) {
  const auto d = x.size();
  Mat h(d, d);
  const double step = 1e-5;
  for (Eigen::Index j = 0; j < d; ++j) {
    Vec xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    h.col(j) = (obj.gradient(xp) - obj.gradient(xm)) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

}  // namespace

Vec maximize_concave(const ConcaveObjective& obj, const Vec& eps0) {
  Vec x = eps0;
  double fx = obj.value(x);
  if (!std::isfinite(fx))
    throw NumericalError("maximize_concave: objective not finite at start");

  const int max_iter = 200;
  for (int it = 0; it < max_iter; ++it) {
    Vec g = obj.gradient(x);
    if (g.lpNorm<Eigen::Infinity>() <= 1e-10 * (1.0 + std::abs(fx))) break;

    Mat h = obj.hessian ? obj.hessian(x) : fd_hessian(obj, x);
    Vec dir;
    Eigen::LDLT<Mat> ldlt(-h);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      dir = ldlt.solve(g);
      if (dir.dot(g) <= 0.0) dir = g;  // indefinite solve, fall back to ascent
    } else {
      dir = g;
    }

    double step = 1.0;
    bool accepted = false;
    for (int halved = 0; halved < 60; ++halved) {
      Vec cand = x + step * dir;
      const double fc = obj.value(cand);
      if (std::isfinite(fc) && fc >= fx) {  // monotone ascent
        const bool flat = fc - fx <= 1e-16 * (1.0 + std::abs(fx));
        x = cand;
        fx = fc;
        if (flat) return x;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted)
      throw NumericalError("maximize_concave: 60 step halvings without ascent");
  }
  return x;
}

double maximize_concave_scalar(const std::function<double(double)>& value,
                               const std::function<double(double)>& grad,
                               const std::function<double(double)>& hess,
                               double eps0) {
  ConcaveObjective obj;
  obj.value = [&](const Vec& v) { return value(v[0]); };
  obj.gradient = [&](const Vec& v) {
    Vec g(1);
    g[0] = grad(v[0]);
    return g;
  };
  if (hess) {
    obj.hessian = [&](const Vec& v) {
      Mat h(1, 1);
      h(0, 0) = hess(v[0]);
      return h;
    };
  }
  Vec x0(1);
  x0[0] = eps0;
  return maximize_concave(obj, x0)[0];
}

LogisticFit fit_logistic_irls(const Mat& design, const Vec& y,
                              const Vec& weights, const Vec& offset) {
  const auto n = design.rows();
  const auto p = design.cols();
  LogisticFit fit;
  fit.coefficients = Vec::Zero(p);

  const double clamp = 30.0;
  const int max_iter = 100;
  const double score_tol = 1e-9 * static_cast<double>(n);

  Vec pi(n), score(p);
  for (int it = 0; it < max_iter; ++it) {
    fit.n_iter = it;
    Vec eta = design * fit.coefficients + offset;
    for (Eigen::Index i = 0; i < n; ++i) pi[i] = expit(eta[i]);
    score = design.transpose() * (weights.array() * (y - pi).array()).matrix();
    if (score.lpNorm<Eigen::Infinity>() <= score_tol) {
      fit.converged = true;
      break;
    }
    Vec irls_w = (weights.array() * pi.array() * (1.0 - pi.array())).matrix();
    irls_w.array() += 1e-10;  // guard against exactly saturated rows
    Mat xtwx = design.transpose() * irls_w.asDiagonal() * design;
    Vec delta = xtwx.ldlt().solve(score);
    fit.coefficients += delta;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (std::abs(fit.coefficients[j]) > clamp) {
        fit.coefficients[j] = fit.coefficients[j] > 0 ? clamp : -clamp;
        fit.separation = true;
      }
    }
  }

  // With (quasi-)separated data the score can vanish numerically while the
  // coefficients drift toward infinity; treat a large fitted coefficient as
  // evidence of separation even if the clamp was never hit.
  if (fit.coefficients.lpNorm<Eigen::Infinity>() >= clamp / 3.0)
    fit.separation = true;

  Vec eta = design * fit.coefficients + offset;
  double dev = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ll =
        y[i] * log_sigmoid(eta[i]) + (1.0 - y[i]) * log_sigmoid(-eta[i]);
    dev -= 2.0 * weights[i] * ll;
  }
  fit.final_deviance = dev;
  return fit;
}

LogisticFit fit_logistic_irls(const Mat& design, const Vec& y) {
  return fit_logistic_irls(design, y, Vec::Ones(design.rows()),
                           Vec::Zero(design.rows()));
}

double find_root_bracketed(const std::function<double(double)>& f,
                           double lo, double hi) {
  double flo = f(lo), fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if (flo * fhi > 0.0)
    throw BracketError("find_root_bracketed: no sign change on [lo, hi]");

  double x = lo, fx = flo;
  for (int it = 0; it < 200; ++it) {
    // Secant candidate, safeguarded to the bracket interior.
    double xs = hi - fhi * (hi - lo) / (fhi - flo);
    const double mid = 0.5 * (lo + hi);
    if (!std::isfinite(xs) || xs <= lo || xs >= hi) xs = mid;
    // Alternate with bisection to guarantee bracket shrinkage.
    x = (it % 2 == 0) ? xs : mid;
    fx = f(x);
    if (std::abs(fx) <= 1e-10 || hi - lo <= 1e-12) return x;
    if (flo * fx <= 0.0) {
      hi = x;
      fhi = fx;
    } else {
      lo = x;
      flo = fx;
    }
  }
  return x;
}

}  // namespace tmle
