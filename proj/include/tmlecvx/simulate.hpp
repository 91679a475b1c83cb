#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "tmlecvx/core.hpp"
#include "tmlecvx/median_reg.hpp"
#include "tmlecvx/missing_mean.hpp"
#include "tmlecvx/shift_effect.hpp"

namespace tmle::simulate {

enum class Problem { missing_mean, median_reg, shift_effect };

// Missingness mechanisms for the missing-outcome study.
enum class Mechanism { D1, D2, D3 };

// Outcome designs for the median-regression study.
enum class MedianDesign { D1, D2 };

struct GenOptions {
  // x1 ~ N(0, x1_var); x2 = x1 + N(0, x2_cond_var). The defaults give x2 a
  // standard-normal marginal, which is what the reference quantities
  // (efficiency bounds, true mean) require. The switches below expose the
  // alternative readings of the generator's variance notation.
  double x1_var = 0.5;
  double x2_cond_var = 0.5;
};

// P(M=1 | x2) under each mechanism; exposed for curve exports and oracles.
double pm_true(Mechanism mech, double x2);
// P(Y=1 | x2) = expit(x2 - x2^2).
double mu_true(double x2);

missing_mean::MissingDataset gen_missing(int n, Mechanism mech,
                                         std::uint64_t seed,
                                         const GenOptions& opts = {});

median_reg::XYDataset gen_median(int n, MedianDesign design,
                                 std::uint64_t seed);

// Shift-effect generator: W ~ U(0,1); A = midpoint of one of 16 width-0.125
// bins on [0,2], drawn with per-bin log-odds linear in w (so the estimator's
// multinomial-logistic working model is exactly correct); Y ~ Ber(expit(-1+A+W));
// gamma = 0.5.
shift_effect::ShiftDataset gen_shift(int n, std::uint64_t seed);
inline constexpr double kShiftGamma = 0.5;
// True shifted mean E{expit(-1 + (A+gamma) + W)}, by quadrature over the
// discrete exposure (exact up to the uniform-W integral).
double shift_true_value();

struct OracleResult {
  Vec value;
  Vec se;  // Monte-Carlo standard error per coordinate
};

// Var of the missing-mean EIF at the truth, by Monte Carlo.
OracleResult efficiency_bound_oracle(Mechanism mech, long reps,
                                     std::uint64_t seed,
                                     const GenOptions& opts = {});

// Deterministic quadrature value of E[expit(X2 - X2^2)] (X2 standard normal
// under the default options); used wherever an exact reference is needed.
double missing_mean_truth_quadrature(const GenOptions& opts = {});

// MC estimate of the estimand under the true generator. For median designs,
// a staged grid argmin of the MC risk (final resolution 0.05), threaded.
OracleResult true_value_oracle(Problem problem, int mechanism_or_design,
                               long reps, std::uint64_t seed, int workers = 0);

struct StudyConfig {
  Problem problem = Problem::missing_mean;
  Mechanism mechanism = Mechanism::D1;       // missing-mean cells
  MedianDesign design = MedianDesign::D1;    // median cells
  missing_mean::WorkingSpec spec = missing_mean::WorkingSpec::i;
  int n = 200;
  int replicates = 1;
  std::uint64_t seed = 0;
  std::vector<int> implementations = {1, 2, 3, 4};  // missing-mean only
  int workers = 0;  // 0 = hardware concurrency
  bool shift_pa_misspecified = false;
  GenOptions gen;

  // Reference quantities; when NaN they are computed internally
  // (quadrature/closed form where available, otherwise MC).
  double true_value = std::numeric_limits<double>::quiet_NaN();
  Vec true_beta;       // median designs
  double efficiency_bound = std::numeric_limits<double>::quiet_NaN();
  long oracle_reps = 2'000'000;

  void validate() const;
};

struct EstimatorSummary {
  std::string label;
  Mat estimates;            // replicates x dim, NaN rows for failures
  std::vector<int> iterations;
  int failures = 0;
  std::vector<std::string> failure_messages;

  // Aggregates over successful replicates (per coordinate).
  Vec mean, bias, percent_bias, mse, sqrt_mse;
  Vec se_mean, se_percent_bias;
  double relative_efficiency = std::numeric_limits<double>::quiet_NaN();
  double se_relative_efficiency = std::numeric_limits<double>::quiet_NaN();
  double mean_iterations = 0.0;
  bool cell_unreliable = false;  // >5% of replicates failed
};

struct StudyResult {
  StudyConfig config;
  Vec true_value_used;
  double bound_used = std::numeric_limits<double>::quiet_NaN();
  std::vector<EstimatorSummary> estimators;
  double wall_seconds = 0.0;
};

StudyResult run_study(const StudyConfig& config);

}  // namespace tmle::simulate
