#pragma once

#include <vector>

#include "tmlecvx/core.hpp"
#include "tmlecvx/optim.hpp"

namespace tmle::missing_mean {

struct MissingDataset {
  Mat x;             // n x d covariates
  Eigen::VectorXi m; // observation indicators
  Vec y;             // outcome; meaningful only where m == 1

  Eigen::Index n() const { return x.rows(); }
  void validate() const;
};

enum class WorkingSpec { i, ii, iii, iv };

// Fitted logistic working models for mu(x) = P(Y=1|M=1,X=x) and
// pm(x) = P(M=1|X=x), stored as per-sample fitted probabilities plus the
// coefficient vectors (features depend on the spec).
struct NuisanceFit {
  Vec mu0;   // fitted mu at each sample x, clamped
  Vec pm0;   // fitted pm at each sample x, clamped to (0,1)
  Vec mu_coef;
  Vec pm_coef;
  WorkingSpec spec = WorkingSpec::i;
  bool separation = false;
};

// Working-model design matrices: the correct spec regresses on
// (X1, X2, X2^2) (intercept included), the misspecified one on (X1, X1^2).
Mat correct_features(const Mat& x);
Mat misspecified_features(const Mat& x);

NuisanceFit fit_initial_nuisances(const MissingDataset& data, WorkingSpec spec);

enum class TiltKind { exp, sigmoid };

// Finite-support joint density over the 3n atoms
// (X_i, M=0), (X_i, M=1, Y=0), (X_i, M=1, Y=1), held in log scale.
struct FiniteJointState {
  Vec la0, la10, la11;  // log atom weights, one triple per sample index
  Vec w, pm, mu;        // decomposed components (pm, mu clamped for logit use)

  static FiniteJointState from_nuisances(const NuisanceFit& nf);
  void decompose();     // recompute (w, pm, mu) from the atoms
  double plugin_mean() const { return w.dot(mu); }

  // EIF value at each of the three atoms of sample i, given psi.
  void eif_atoms(double psi, Vec& d0, Vec& d10, Vec& d11) const;
};

// Multiplies every atom by the tilt factor at its EIF value (psi_ref inside D),
// renormalizes by the exact finite sum, and re-decomposes.
FiniteJointState tilt_finite_joint(const FiniteJointState& state, double eps,
                                   TiltKind kind, double psi_ref);

// Implementation 1: one no-intercept logistic fit of Y on H(X) = 1/pm0(X)
// with offset logit mu0, over observed rows.
EstimateReport tmle_clever_covariate(const MissingDataset& data,
                                     const NuisanceFit& nf);

// Implementation 2: intercept-only logistic fit with weights 1/pm0(X) and
// offset logit mu^k, over observed rows.
EstimateReport tmle_weighted_intercept(const MissingDataset& data,
                                       const NuisanceFit& nf);

// Implementations 3 (exp) and 4 (sigmoid): iterative scalar-epsilon tilt of
// the full finite-support joint density.
EstimateReport tmle_expfam(const MissingDataset& data, const NuisanceFit& nf,
                           TiltKind kind);

EstimateReport run_implementation(int impl, const MissingDataset& data,
                                  const NuisanceFit& nf);

double plugin_mean(const FiniteJointState& state);

// Wald report from the empirical variance of the EIF at the supplied
// per-sample (mu, pm) components and psi.
EstimateReport eif_variance_ci(const Vec& mu, const Vec& pm,
                               const MissingDataset& data, double psi,
                               TmleTrace trace);

// Observed-data log-likelihood of the scalar tilt, with analytic
// gradient/Hessian; exposed for the oracle tests.
ConcaveObjective tilt_loglik_objective(const FiniteJointState& state,
                                       const MissingDataset& data,
                                       TiltKind kind);

}  // namespace tmle::missing_mean
