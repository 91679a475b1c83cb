#pragma once

#include <utility>
#include <vector>

#include "tmlecvx/core.hpp"
#include "tmlecvx/optim.hpp"

namespace tmle::median_reg {

struct XYDataset {
  Mat x;  // n x d covariates
  Vec y;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index d() const { return x.cols(); }
  void validate() const;
};

// Search box for the grid minimization of E|Y - g(X,beta)|.
inline constexpr double kBetaBoxLo = -10.0;
inline constexpr double kBetaBoxHi = 15.0;

struct GLink {
  double value;  // expit(beta'x)
  Vec grad;      // value (1-value) x
};
GLink g_link(const Vec& x, const Vec& beta);

// Unnormalized EIF: -grad_g(x,beta) sign(y - g(x,beta)), sign(0) := 0.
Vec eif_median(const Vec& beta, const Vec& x, double y);

struct MedianBeta {
  Vec beta;
  bool boundary_warning = false;  // minimizer landed on the search-box edge
};

// Empirical-X-atom x continuous-Y joint density: per-atom normal base
// (mean from an initial fit, variance 1) times accumulated exponential tilt
// factors exp(eps_k' D(beta_k; x, y)). Because each D is piecewise constant
// in y with a single breakpoint at g(x, beta_k), all conditional integrals
// reduce to exact normal-CDF segment sums.
class TiltedXYDensity {
 public:
  struct Tilt {
    Vec eps;
    Vec beta;
  };

  TiltedXYDensity(Mat atoms, Vec base_means);

  // Initial fit: empirical X atoms, normal(OLS main-terms prediction, 1).
  static TiltedXYDensity initial_fit(const XYDataset& data);

  const Mat& atoms() const { return x_; }
  const Vec& weights() const { return w_; }
  const Vec& base_means() const { return mean_; }
  const std::vector<Tilt>& tilts() const { return tilts_; }
  Eigen::Index n_atoms() const { return x_.rows(); }

  // sum_i w_i int |y - g(x_i,beta)| p(y|x_i) dy, exact per segment.
  double risk_abs(const Vec& beta) const;

  // Conditional masses of {y <= c} and {y > c} at atom i.
  std::pair<double, double> mass_split(Eigen::Index i, double c) const;

  // Conditional density p(y | x_i); used by the score/oracle checks.
  double conditional_density(Eigen::Index i, double y) const;
  double log_conditional_density(Eigen::Index i, double y) const;
  double atom_normalizer(Eigen::Index i) const { return norm_[i]; }

  // Appends one tilt factor, renormalizes per atom, and updates the
  // marginal atom weights by the global joint normalizer.
  void append_tilt(const Vec& eps, const Vec& beta);

 private:
  void rebuild();

  Mat x_;
  Vec w_;
  Vec mean_;
  std::vector<Tilt> tilts_;

  // Per-atom segment cache: K sorted breakpoints, K+1 log tilt factors,
  // cdf/pdf at the K interior edges, per-segment base masses.
  Mat bp_;      // n x K
  Mat lf_;      // n x (K+1)
  Mat dphi_;    // n x (K+1) base normal mass per segment
  Mat jseg_;    // n x (K+1) int_seg (y-m) phi dy
  Mat cdf_edge_, pdf_edge_;  // n x K, base cdf/pdf at interior edges
  Vec norm_;    // per-atom normalizer
};

// Coarse-to-fine grid minimizer of risk_abs over the declared box
// (one coarse pass plus three refinements; final step 6.25e-4).
MedianBeta argmin_beta(const TiltedXYDensity& p);

// Joint-likelihood maximizer for the vector tilt at the current beta,
// via Newton with analytic gradient and covariance Hessian.
Vec epsilon_mle_median(const TiltedXYDensity& p, const XYDataset& data,
                       const Vec& beta_current);

// Sample log-likelihood objective in epsilon; exposed for oracle tests.
ConcaveObjective epsilon_objective(const TiltedXYDensity& p,
                                   const XYDataset& data, const Vec& beta);

struct MedianFitResult {
  MedianBeta beta;          // TMLE: argmin at the final density
  MedianBeta substitution;  // baseline: argmin at the initial density
  TmleTrace trace;
};

MedianFitResult tmle_median(const XYDataset& data, double tol = kEpsilonTol,
                            int max_iter = kMaxTmleIter);

}  // namespace tmle::median_reg
