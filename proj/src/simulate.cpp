#include "tmlecvx/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <random>
#include <thread>

#include "tmlecvx/errors.hpp"

namespace tmle::simulate {

namespace {

int resolve_workers(int workers) {
  if (workers > 0) return workers;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs task(i) for i in [0, count) on a pool; each index is independent and
// writes only to its own slot, so the result is worker-count invariant.
void parallel_for(long count, int workers,
                  const std::function<void(long)>& task) {
  workers = std::min<long>(resolve_workers(workers), count);
  if (workers <= 1) {
    for (long i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&]() {
      for (long i = next.fetch_add(1); i < count; i = next.fetch_add(1))
        task(i);
    });
  }
  for (auto& th : pool) th.join();
}

double simpson(const std::function<double(double)>& f, double lo, double hi,
               int n_panels) {
  const double h = (hi - lo) / (2 * n_panels);
  double s = f(lo) + f(hi);
  for (int i = 1; i < 2 * n_panels; ++i)
    s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

constexpr int kShiftGenBins = 16;
constexpr double kShiftGenLo = 0.0;
constexpr double kShiftGenHi = 2.0;
constexpr double kShiftGenSigma = 0.3;

// Per-bin probabilities of the shift generator's discrete exposure; the
// log-odds are linear in w, so the estimator's multinomial-logistic family
// contains this density exactly.
void shift_bin_probs(double w, double* probs) {
  const double bw = (kShiftGenHi - kShiftGenLo) / kShiftGenBins;
  double mx = -1e300;
  double lg[kShiftGenBins];
  for (int b = 0; b < kShiftGenBins; ++b) {
    const double mid = kShiftGenLo + (b + 0.5) * bw;
    const double z = mid - (0.5 + w);
    lg[b] = -z * z / (2.0 * kShiftGenSigma * kShiftGenSigma);
    mx = std::max(mx, lg[b]);
  }
  double sum = 0.0;
  for (int b = 0; b < kShiftGenBins; ++b) {
    probs[b] = std::exp(lg[b] - mx);
    sum += probs[b];
  }
  for (int b = 0; b < kShiftGenBins; ++b) probs[b] /= sum;
}

}  // namespace

double pm_true(Mechanism mech, double x2) {
  switch (mech) {
    case Mechanism::D1: return expit(1.0 + 2.0 * x2);
    case Mechanism::D2: return expit(-1.0 + 2.0 * x2);
    case Mechanism::D3: return expit(-6.0 + 2.0 * x2 + 2.0 * x2 * x2);
  }
  throw UsageError("unknown mechanism");
}

double mu_true(double x2) { return expit(x2 - x2 * x2); }

missing_mean::MissingDataset gen_missing(int n, Mechanism mech,
                                         std::uint64_t seed,
                                         const GenOptions& opts) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double s1 = std::sqrt(opts.x1_var);
  const double s2 = std::sqrt(opts.x2_cond_var);

  missing_mean::MissingDataset d;
  d.x.resize(n, 2);
  d.m.resize(n);
  d.y = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    const double x1 = s1 * nd(rng);
    const double x2 = x1 + s2 * nd(rng);
    d.x(i, 0) = x1;
    d.x(i, 1) = x2;
    const double um = ud(rng);
    const double uy = ud(rng);  // always drawn, to keep the stream aligned
    d.m[i] = um < pm_true(mech, x2) ? 1 : 0;
    if (d.m[i] == 1) d.y[i] = uy < mu_true(x2) ? 1.0 : 0.0;
  }
  return d;
}

median_reg::XYDataset gen_median(int n, MedianDesign design,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::exponential_distribution<double> ed(3.0);

  median_reg::XYDataset d;
  d.x.resize(n, 2);
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const double x1 = ud(rng);
    const double x2 = ud(rng);
    d.x(i, 0) = x1;
    d.x(i, 1) = x2;
    if (design == MedianDesign::D1) {
      d.y[i] = -std::log(2.0) / 3.0 + expit(1.5 * x1 + 2.5 * x2) + ed(rng);
    } else {
      d.y[i] = std::exp(x1 + 2.0 * x2) + nd(rng);
    }
  }
  return d;
}

shift_effect::ShiftDataset gen_shift(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double bw = (kShiftGenHi - kShiftGenLo) / kShiftGenBins;

  shift_effect::ShiftDataset d;
  d.w.resize(n, 1);
  d.a.resize(n);
  d.y.resize(n);
  d.gamma = kShiftGamma;
  d.a_min = kShiftGenLo;
  d.a_max = kShiftGenHi;
  double probs[kShiftGenBins];
  for (int i = 0; i < n; ++i) {
    const double w = ud(rng);
    d.w(i, 0) = w;
    shift_bin_probs(w, probs);
    const double u = ud(rng);
    double c = 0.0;
    int bin = kShiftGenBins - 1;
    for (int b = 0; b < kShiftGenBins; ++b) {
      c += probs[b];
      if (u < c) { bin = b; break; }
    }
    d.a[i] = kShiftGenLo + (bin + 0.5) * bw;
    d.y[i] = ud(rng) < expit(-1.0 + d.a[i] + w) ? 1.0 : 0.0;
  }
  return d;
}

double shift_true_value() {
  const double bw = (kShiftGenHi - kShiftGenLo) / kShiftGenBins;
  auto inner = [&](double w) {
    double probs[kShiftGenBins];
    shift_bin_probs(w, probs);
    double s = 0.0;
    for (int b = 0; b < kShiftGenBins; ++b) {
      const double a = kShiftGenLo + (b + 0.5) * bw;
      s += probs[b] * expit(-1.0 + a + kShiftGamma + w);
    }
    return s;
  };
  return simpson(inner, 0.0, 1.0, 2000);
}

double missing_mean_truth_quadrature(const GenOptions& opts) {
  const double sd = std::sqrt(opts.x1_var + opts.x2_cond_var);
  auto f = [&](double x) {
    const double z = x / sd;
    return mu_true(x) * std::exp(-0.5 * z * z) /
           (sd * std::sqrt(2.0 * M_PI));
  };
  return simpson(f, -10.0 * sd, 10.0 * sd, 4000);
}

OracleResult efficiency_bound_oracle(Mechanism mech, long reps,
                                     std::uint64_t seed,
                                     const GenOptions& opts) {
  if (reps < 1000) throw UsageError("efficiency bound oracle needs more reps");
  const double psi0 = missing_mean_truth_quadrature(opts);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double s1 = std::sqrt(opts.x1_var);
  const double s2 = std::sqrt(opts.x2_cond_var);

  // Raw-moment accumulators for Var(D) and its MC standard error.
  double s = 0.0, s2m = 0.0, s3 = 0.0, s4 = 0.0;
  for (long r = 0; r < reps; ++r) {
    const double x2 = s1 * nd(rng) + s2 * nd(rng);
    const double pm = pm_true(mech, x2);
    const double mu = mu_true(x2);
    const int m = ud(rng) < pm ? 1 : 0;
    const double uy = ud(rng);
    double d = mu - psi0;
    if (m == 1) {
      const double y = uy < mu ? 1.0 : 0.0;
      d += (y - mu) / pm;
    }
    s += d;
    s2m += d * d;
    s3 += d * d * d;
    s4 += d * d * d * d;
  }
  const double n = static_cast<double>(reps);
  const double m1 = s / n;
  const double var = s2m / n - m1 * m1;
  // Fourth central moment via raw moments.
  const double mu4 = s4 / n - 4.0 * m1 * (s3 / n) + 6.0 * m1 * m1 * (s2m / n) -
                     3.0 * m1 * m1 * m1 * m1;
  const double se = std::sqrt(std::max(mu4 - var * var, 0.0) / n);

  OracleResult out;
  out.value = Vec::Constant(1, var);
  out.se = Vec::Constant(1, se);
  return out;
}

namespace {

OracleResult median_truth_grid(MedianDesign design, long reps,
                               std::uint64_t seed, int workers) {
  const auto data = gen_median(static_cast<int>(reps), design, seed);
  const auto& x = data.x;
  const auto& y = data.y;

  auto risk = [&](double b1, double b2) {
    const Eigen::ArrayXd lp = (x.col(0) * b1 + x.col(1) * b2).array();
    return (y.array() - 1.0 / (1.0 + (-lp).exp())).abs().mean();
  };

  // Coarse pass over the standard search box, one refinement to 0.05.
  double lo1 = median_reg::kBetaBoxLo, lo2 = median_reg::kBetaBoxLo;
  double step = 0.5;
  int npts = static_cast<int>((median_reg::kBetaBoxHi - median_reg::kBetaBoxLo) / step) + 1;
  Vec best(2);
  for (int stage = 0; stage < 2; ++stage) {
    const long total = static_cast<long>(npts) * npts;
    std::vector<double> vals(total);
    parallel_for(total, workers, [&](long k) {
      const int i = static_cast<int>(k / npts), j = static_cast<int>(k % npts);
      vals[k] = risk(lo1 + i * step, lo2 + j * step);
    });
    const long kbest = std::min_element(vals.begin(), vals.end()) - vals.begin();
    best[0] = lo1 + (kbest / npts) * step;
    best[1] = lo2 + (kbest % npts) * step;
    lo1 = best[0] - step;
    lo2 = best[1] - step;
    step = 0.05;
    npts = 21;
  }
  OracleResult out;
  out.value = best;
  out.se = Vec::Constant(2, 0.05);  // grid resolution, not an MC error
  return out;
}

}  // namespace

OracleResult true_value_oracle(Problem problem, int mechanism_or_design,
                               long reps, std::uint64_t seed, int workers) {
  if (reps < 1000) throw UsageError("true value oracle needs more reps");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);

  OracleResult out;
  switch (problem) {
    case Problem::missing_mean: {
      const GenOptions opts;
      const double s1 = std::sqrt(opts.x1_var);
      const double s2 = std::sqrt(opts.x2_cond_var);
      double s = 0.0, ss = 0.0;
      for (long r = 0; r < reps; ++r) {
        const double x2 = s1 * nd(rng) + s2 * nd(rng);
        const double v = mu_true(x2);
        s += v;
        ss += v * v;
      }
      const double m = s / reps;
      out.value = Vec::Constant(1, m);
      out.se = Vec::Constant(1, std::sqrt((ss / reps - m * m) / reps));
      return out;
    }
    case Problem::median_reg: {
      const MedianDesign d =
          mechanism_or_design == 2 ? MedianDesign::D2 : MedianDesign::D1;
      return median_truth_grid(d, reps, seed, workers);
    }
    case Problem::shift_effect: {
      double s = 0.0, ss = 0.0;
      const double bw = (kShiftGenHi - kShiftGenLo) / kShiftGenBins;
      double probs[kShiftGenBins];
      for (long r = 0; r < reps; ++r) {
        const double w = ud(rng);
        shift_bin_probs(w, probs);
        const double u = ud(rng);
        double c = 0.0;
        int bin = kShiftGenBins - 1;
        for (int b = 0; b < kShiftGenBins; ++b) {
          c += probs[b];
          if (u < c) { bin = b; break; }
        }
        const double a = kShiftGenLo + (bin + 0.5) * bw;
        const double v = expit(-1.0 + a + kShiftGamma + w);
        s += v;
        ss += v * v;
      }
      const double m = s / reps;
      out.value = Vec::Constant(1, m);
      out.se = Vec::Constant(1, std::sqrt((ss / reps - m * m) / reps));
      return out;
    }
  }
  throw UsageError("unknown problem");
}

void StudyConfig::validate() const {
  if (replicates < 1) throw UsageError("study needs replicates >= 1");
  if (n < 20) throw UsageError("study needs n >= 20");
  if (problem == Problem::missing_mean) {
    if (implementations.empty())
      throw UsageError("study needs at least one implementation");
    for (int i : implementations)
      if (i < 1 || i > 4) throw UsageError("implementation must be in 1..4");
  }
}

namespace {

struct ReplicateSlot {
  std::vector<Vec> psis;            // one per estimator, empty on failure
  std::vector<int> iters;
  std::vector<std::string> errors;  // empty string on success
};

std::vector<std::string> estimator_labels(const StudyConfig& c) {
  std::vector<std::string> labels;
  switch (c.problem) {
    case Problem::missing_mean:
      for (int i : c.implementations) labels.push_back("impl" + std::to_string(i));
      break;
    case Problem::median_reg:
      labels = {"tmle", "substitution"};
      break;
    case Problem::shift_effect:
      labels = {"tmle"};
      break;
  }
  return labels;
}

void run_replicate(const StudyConfig& c, long r, ReplicateSlot& slot) {
  const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(r);
  switch (c.problem) {
    case Problem::missing_mean: {
      const auto data = gen_missing(c.n, c.mechanism, seed, c.gen);
      missing_mean::NuisanceFit nf;
      bool nf_ok = true;
      std::string nf_err;
      try {
        nf = missing_mean::fit_initial_nuisances(data, c.spec);
      } catch (const std::exception& e) {
        nf_ok = false;
        nf_err = e.what();
      }
      for (std::size_t k = 0; k < c.implementations.size(); ++k) {
        if (!nf_ok) {
          slot.errors[k] = nf_err;
          continue;
        }
        try {
          const EstimateReport rep =
              missing_mean::run_implementation(c.implementations[k], data, nf);
          slot.psis[k] = rep.psi_hat;
          slot.iters[k] = rep.trace.n_iter();
        } catch (const std::exception& e) {
          slot.errors[k] = e.what();
        }
      }
      break;
    }
    case Problem::median_reg: {
      const auto data = gen_median(c.n, c.design, seed);
      try {
        const auto fit = median_reg::tmle_median(data);
        slot.psis[0] = fit.beta.beta;
        slot.iters[0] = fit.trace.n_iter();
        slot.psis[1] = fit.substitution.beta;
        slot.iters[1] = 1;
      } catch (const std::exception& e) {
        slot.errors[0] = e.what();
        slot.errors[1] = e.what();
      }
      break;
    }
    case Problem::shift_effect: {
      const auto data = gen_shift(c.n, seed);
      shift_effect::ShiftOptions opts;
      opts.pa_model = c.shift_pa_misspecified
                          ? shift_effect::PaModel::marginal
                          : shift_effect::PaModel::conditional;
      try {
        const EstimateReport rep = shift_effect::tmle_shift(data, opts);
        slot.psis[0] = rep.psi_hat;
        slot.iters[0] = rep.trace.n_iter();
      } catch (const std::exception& e) {
        slot.errors[0] = e.what();
      }
      break;
    }
  }
}

}  // namespace

StudyResult run_study(const StudyConfig& config) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();

  StudyResult result;
  result.config = config;

  // Reference quantities: prefer user-supplied values, otherwise compute.
  switch (config.problem) {
    case Problem::missing_mean:
      result.true_value_used = Vec::Constant(
          1, std::isfinite(config.true_value)
                 ? config.true_value
                 : missing_mean_truth_quadrature(config.gen));
      result.bound_used =
          std::isfinite(config.efficiency_bound)
              ? config.efficiency_bound
              : efficiency_bound_oracle(config.mechanism, config.oracle_reps,
                                        config.seed ^ 0x9e3779b97f4a7c15ULL,
                                        config.gen)
                    .value[0];
      break;
    case Problem::median_reg:
      if (config.true_beta.size() == 2) {
        result.true_value_used = config.true_beta;
      } else if (config.design == MedianDesign::D1) {
        result.true_value_used = Vec(2);
        result.true_value_used << 1.5, 2.5;  // exact by construction
      } else {
        result.true_value_used =
            true_value_oracle(Problem::median_reg, 2, config.oracle_reps,
                              config.seed ^ 0x9e3779b97f4a7c15ULL,
                              config.workers)
                .value;
      }
      break;
    case Problem::shift_effect:
      result.true_value_used = Vec::Constant(
          1, std::isfinite(config.true_value) ? config.true_value
                                              : shift_true_value());
      break;
  }

  const auto labels = estimator_labels(config);
  const std::size_t ne = labels.size();
  std::vector<ReplicateSlot> slots(config.replicates);
  for (auto& s : slots) {
    s.psis.resize(ne);
    s.iters.assign(ne, 0);
    s.errors.assign(ne, "");
  }
  parallel_for(config.replicates, config.workers,
               [&](long r) { run_replicate(config, r, slots[r]); });

  const Eigen::Index dim = result.true_value_used.size();
  for (std::size_t k = 0; k < ne; ++k) {
    EstimatorSummary sum;
    sum.label = labels[k];
    sum.estimates = Mat::Constant(config.replicates, dim,
                                  std::numeric_limits<double>::quiet_NaN());
    sum.iterations.assign(config.replicates, 0);
    long n_ok = 0, iter_total = 0;
    for (int r = 0; r < config.replicates; ++r) {
      const auto& s = slots[r];
      if (!s.errors[k].empty() || s.psis[k].size() != dim) {
        ++sum.failures;
        sum.failure_messages.push_back(s.errors[k].empty()
                                           ? "estimator returned wrong dimension"
                                           : s.errors[k]);
        continue;
      }
      sum.estimates.row(r) = s.psis[k].transpose();
      sum.iterations[r] = s.iters[k];
      iter_total += s.iters[k];
      ++n_ok;
    }
    sum.cell_unreliable =
        sum.failures > 0.05 * static_cast<double>(config.replicates);
    if (n_ok > 0) {
      sum.mean_iterations = static_cast<double>(iter_total) / n_ok;
      sum.mean = Vec::Zero(dim);
      Vec m2 = Vec::Zero(dim), sq = Vec::Zero(dim), sq2 = Vec::Zero(dim);
      for (int r = 0; r < config.replicates; ++r) {
        if (std::isnan(sum.estimates(r, 0))) continue;
        const Vec e = sum.estimates.row(r).transpose() - result.true_value_used;
        sum.mean += sum.estimates.row(r).transpose();
        m2 += sum.estimates.row(r).transpose().cwiseAbs2();
        sq += e.cwiseAbs2();
        sq2 += e.cwiseAbs2().cwiseAbs2();
      }
      sum.mean /= n_ok;
      sum.bias = sum.mean - result.true_value_used;
      sum.percent_bias = 100.0 * sum.bias.cwiseQuotient(
                                     result.true_value_used.cwiseAbs());
      sum.mse = sq / n_ok;
      sum.sqrt_mse = sum.mse.cwiseSqrt();
      const Vec var_est = (m2 / n_ok - sum.mean.cwiseAbs2()).cwiseMax(0.0);
      sum.se_mean = (var_est / n_ok).cwiseSqrt();
      sum.se_percent_bias =
          100.0 * sum.se_mean.cwiseQuotient(result.true_value_used.cwiseAbs());
      if (dim == 1 && std::isfinite(result.bound_used) &&
          result.bound_used > 0.0) {
        sum.relative_efficiency =
            config.n * sum.mse[0] / result.bound_used;
        const double var_sq =
            std::max(sq2[0] / n_ok - sum.mse[0] * sum.mse[0], 0.0);
        sum.se_relative_efficiency =
            config.n * std::sqrt(var_sq / n_ok) / result.bound_used;
      }
    }
    result.estimators.push_back(std::move(sum));
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

}  // namespace tmle::simulate
