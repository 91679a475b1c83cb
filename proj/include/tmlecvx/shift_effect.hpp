#pragma once

#include <vector>

#include "tmlecvx/core.hpp"
#include "tmlecvx/optim.hpp"

namespace tmle::shift_effect {

struct ShiftDataset {
  Mat w;        // n x d covariates
  Vec a;        // continuous exposure
  Vec y;        // binary outcome
  double gamma = 0.0;
  double a_min = 0.0;
  double a_max = 1.0;

  Eigen::Index n() const { return w.rows(); }
  void validate() const;
};

// Piecewise-constant conditional exposure density on B equal-width bins over
// [a_min, a_max + gamma], with per-row bin probabilities from a
// multinomial-logistic working model in w.
struct HistogramConditionalDensity {
  double lo = 0.0;
  double hi = 1.0;
  int n_bins = 0;
  Mat bin_probs;  // n x B, rows sum to 1
  // Observation count per bin from the fit; bins with zero observations are
  // outside the effective support and the mu fluctuation skips them (no data
  // can inform the update there). Empty vector = treat all bins as observed.
  Eigen::VectorXi bin_counts;

  bool bin_observed(int b) const {
    return bin_counts.size() == 0 || bin_counts[b] > 0;
  }

  double binwidth() const { return (hi - lo) / n_bins; }
  int bin_index(double a) const;                 // -1 when outside [lo, hi)
  double midpoint(int b) const { return lo + (b + 0.5) * binwidth(); }
  double density(Eigen::Index row, double a) const;  // P(bin|w)/binwidth, 0 outside
  void validate() const;
};

enum class PaModel { conditional, marginal };  // marginal = intercept-only (misspecified)

// Multinomial-logistic histogram fit: per-bin linear predictor in w
// (intercept only under PaModel::marginal). Linear predictors are clamped
// at +-30 so empty bins degrade to near-zero mass instead of diverging.
HistogramConditionalDensity fit_histogram_density(const ShiftDataset& data,
                                                  int n_bins, PaModel model);

struct ShiftState {
  // logit mu(a,w) = base linear predictor + accumulated eps_Y * H_Y terms;
  // each H_Y layer needs the p_A snapshot it was built from, so layers carry
  // per-row bin probabilities.
  Vec mu_base_coef;  // coefficients of (1, a, w)
  struct MuLayer {
    double eps_y;
    HistogramConditionalDensity pa_snapshot;
  };
  std::vector<MuLayer> mu_layers;
  HistogramConditionalDensity pa;
  Vec w_weights;  // empirical marginal (1/n each)
  double gamma = 0.0;

  double mu(Eigen::Index row, double a, const Mat& w) const;
  double psi(const Mat& w) const;  // substitution estimator at this state
};

// pa(a - gamma | w) / pa(a | w); numerator 0 outside the support.
double density_ratio_shift(const HistogramConditionalDensity& pa,
                           Eigen::Index row, double a, double gamma);

// sum_b P(b|w) mu(mid_b + gamma, w)
double conditional_mean_shifted(const ShiftState& state, Eigen::Index row,
                                const Mat& w);

struct CleverTerms {
  double h_y, h_a, h_w;
};
CleverTerms clever_terms(const ShiftState& state, const ShiftDataset& data,
                         Eigen::Index row);

// EIF at one observation, assembled from the clever terms.
double eif_shift(const ShiftState& state, const ShiftDataset& data,
                 Eigen::Index row);

// EIF at every observation; shares the per-row conditional means and psi
// across rows instead of recomputing them (the per-row form is O(n) each).
Vec eif_all(const ShiftState& state, const ShiftDataset& data);

// One fluctuation: eps_Y by offset logistic regression of Y on H_Y, eps_A by
// maximizing the tilted histogram likelihood. Updates mu and pa in place.
Vec fluctuate_shift(ShiftState& state, const ShiftDataset& data);

// Analytic score in eps_A at the current state (for the root-finding route).
std::function<double(double)> epsilon_a_score(const ShiftState& state,
                                              const ShiftDataset& data);

struct ShiftOptions {
  int n_bins = 20;
  PaModel pa_model = PaModel::conditional;
  double tol = kEpsilonTol;
  int max_iter = kMaxTmleIter;
  bool shared_scalar_epsilon = false;  // single eps for both components
};

EstimateReport tmle_shift(const ShiftDataset& data, const ShiftOptions& opts);

// Initial state (working-model fits) without running the TMLE loop;
// exposed for fixtures and unit tests.
ShiftState initial_state(const ShiftDataset& data, const ShiftOptions& opts);

}  // namespace tmle::shift_effect
