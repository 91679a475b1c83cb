#pragma once

#include <functional>

#include "tmlecvx/core.hpp"

namespace tmle {

// Concave objective with analytic gradient; the Hessian is optional and
// falls back to central finite differences of the gradient.
struct ConcaveObjective {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
  std::function<Mat(const Vec&)> hessian;  // may be empty
};

struct LogisticFit {
  Vec coefficients;
  bool converged = false;
  int n_iter = 0;
  double final_deviance = 0.0;
  bool separation = false;  // coefficients hit the +-30 clamp
};

// Safeguarded Newton ascent with backtracking line search. Falls back to
// the gradient direction when the Hessian is not negative definite.
// Stops when ||grad||_inf <= 1e-10 (1 + |value|) or after 200 iterations.
Vec maximize_concave(const ConcaveObjective& obj, const Vec& eps0);

// Scalar convenience wrapper.
double maximize_concave_scalar(const std::function<double(double)>& value,
                               const std::function<double(double)>& grad,
                               const std::function<double(double)>& hess,
                               double eps0 = 0.0);

// Weighted logistic regression with offset, fit by IRLS. Maximizes
// sum_i w_i [y_i log pi_i + (1-y_i) log(1-pi_i)], pi_i = expit(X_i b + off_i).
// Coefficients are clamped at +-30 (separation flag) rather than diverging.
LogisticFit fit_logistic_irls(const Mat& design, const Vec& y,
                              const Vec& weights, const Vec& offset);
LogisticFit fit_logistic_irls(const Mat& design, const Vec& y);

// Bisection with secant acceleration. Requires f(lo) * f(hi) <= 0; returns
// x with |f(x)| <= 1e-10 or bracket width <= 1e-12.
double find_root_bracketed(const std::function<double(double)>& f,
                           double lo, double hi);

}  // namespace tmle
