#include "tmlecvx/core.hpp"

namespace tmle {

void finalize_wald_ci(EstimateReport& report) {
  const double z = 1.959963984540054;
  const auto d = report.psi_hat.size();
  report.ci_lower.resize(d);
  report.ci_upper.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double se = std::sqrt(std::max(report.variance_hat(j, j), 0.0));
    report.ci_lower[j] = report.psi_hat[j] - z * se;
    report.ci_upper[j] = report.psi_hat[j] + z * se;
  }
}

TmleTrace run_tmle(const std::function<FluctuationStep()>& step,
                   double tol, int max_iter) {
  TmleTrace trace;
  double prev_loglik = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < max_iter; ++k) {
    FluctuationStep r = step();
    if (!std::isfinite(r.loglik))
      throw NumericalError("run_tmle: non-finite log-likelihood at iteration " +
                           std::to_string(k + 1));
    trace.iterations.push_back({r.epsilon_hat, r.loglik, r.mean_eif});
    if (r.epsilon_hat.size() == 0 ||
        r.epsilon_hat.lpNorm<Eigen::Infinity>() < tol) {
      trace.converged = true;
      trace.stop_reason = StopReason::epsilon_small;
      return trace;
    }
    if (k > 0 && r.loglik - prev_loglik < kStallTol) {
      trace.converged = false;
      trace.stop_reason = StopReason::stalled;
      return trace;
    }
    prev_loglik = r.loglik;
  }
  trace.converged = false;
  trace.stop_reason = StopReason::max_iter;
  return trace;
}

double score_check(const std::function<double(double)>& tilt_loglik,
                   double eif_at_atom, double h) {
  const double fd = (tilt_loglik(h) - tilt_loglik(-h)) / (2.0 * h);
  return fd - eif_at_atom;
}

}  // namespace tmle
