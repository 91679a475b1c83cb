#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "tmlecvx/errors.hpp"

namespace tmle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Clamp bounds used for probabilities entering logit().
inline constexpr double kProbClampLo = 1e-12;
inline constexpr double kProbClampHi = 1.0 - 1e-12;

// Default stopping rule for the TMLE iteration.
inline constexpr double kEpsilonTol = 1e-4;
inline constexpr int kMaxTmleIter = 50;
inline constexpr double kStallTol = 1e-12;
// Self-consistency constant: at convergence |mean EIF| <= kSelfConsistencyC * tol.
inline constexpr double kSelfConsistencyC = 10.0;

// Numerically stable 1/(1+exp(-x)).
inline double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(p/(1-p)) with p clamped to [1e-12, 1-1e-12].
inline double logit(double p) {
  p = std::min(std::max(p, kProbClampLo), kProbClampHi);
  return std::log(p / (1.0 - p));
}

inline double clamp_prob(double p) {
  return std::min(std::max(p, kProbClampLo), kProbClampHi);
}

// log(sigmoid(x)) = -log(1+exp(-x)), stable for large |x|.
inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// One row of an observed-data table. The outcome is absent when m == 0.
struct Observation {
  Vec x;
  int m = 1;                       // observation indicator (missing-data problems)
  std::optional<double> y;         // outcome, defined when observed
};

enum class StopReason { epsilon_small, max_iter, stalled };

struct TmleIteration {
  Vec epsilon_hat;
  double loglik = 0.0;
  Vec mean_eif;
};

struct TmleTrace {
  std::vector<TmleIteration> iterations;
  bool converged = false;
  StopReason stop_reason = StopReason::max_iter;

  int n_iter() const { return static_cast<int>(iterations.size()); }
  const TmleIteration& last() const { return iterations.back(); }
};

struct EstimateReport {
  Vec psi_hat;
  Mat variance_hat;   // EIF-based covariance of psi_hat
  Vec ci_lower;
  Vec ci_upper;
  TmleTrace trace;
};

// Fills Wald 95% limits from psi_hat and variance_hat.
void finalize_wald_ci(EstimateReport& report);

// Efficient influence function for E(Y) with Y missing at random:
//   (m/pm)(y - mu) + mu - psi, the first term taken as 0 when m = 0.
inline double eif_missing_mean(double mu_x, double pm_x, int m,
                               std::optional<double> y, double psi) {
  if (pm_x <= 0.0) throw PositivityError("eif_missing_mean: pm(x) <= 0");
  double ipw = 0.0;
  if (m == 1) {
    if (!y.has_value()) throw NumericalError("eif_missing_mean: m=1 but y absent");
    ipw = (*y - mu_x) / pm_x;
  }
  return ipw + mu_x - psi;
}

// Result of one fluctuation step supplied by a problem module.
struct FluctuationStep {
  Vec epsilon_hat;
  double loglik = 0.0;
  Vec mean_eif;
};

// Generic TMLE driver: repeats the supplied fluctuation step until
// ||epsilon||_inf < tol, the log-likelihood stalls, or max_iter is hit.
// The closure owns and mutates the problem state.
TmleTrace run_tmle(const std::function<FluctuationStep()>& step,
                   double tol = kEpsilonTol, int max_iter = kMaxTmleIter);

// Central-finite-difference check of the submodel score condition:
// returns [l(h) - l(-h)]/(2h) - eif_at_atom.
double score_check(const std::function<double(double)>& tilt_loglik,
                   double eif_at_atom, double h);

}  // namespace tmle
