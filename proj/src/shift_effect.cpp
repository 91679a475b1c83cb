#include "tmlecvx/shift_effect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tmlecvx/errors.hpp"

namespace tmle::shift_effect {

namespace {

constexpr double kEtaClamp = 30.0;
constexpr double kMultinomRidge = 1e-4;

Mat mu_design(const ShiftDataset& data) {
  const Eigen::Index n = data.n();
  Mat z(n, 2 + data.w.cols());
  z.col(0).setOnes();
  z.col(1) = data.a;
  z.rightCols(data.w.cols()) = data.w;
  return z;
}

}  // namespace

void ShiftDataset::validate() const {
  const Eigen::Index nn = w.rows();
  if (nn == 0) throw UsageError("shift dataset is empty");
  if (a.size() != nn || y.size() != nn)
    throw UsageError("shift dataset column lengths differ");
  if (!(gamma >= 0.0)) throw UsageError("shift gamma must be nonnegative");
  if (!(a_max > a_min)) throw UsageError("exposure range is degenerate");
  for (Eigen::Index i = 0; i < nn; ++i) {
    if (y[i] != 0.0 && y[i] != 1.0)
      throw UsageError("shift outcome must be binary");
    if (!(a[i] >= a_min && a[i] <= a_max))
      throw UsageError("exposure outside declared range");
  }
}

int HistogramConditionalDensity::bin_index(double a) const {
  if (a < lo || a > hi) return -1;
  const int b = static_cast<int>(std::floor((a - lo) / binwidth()));
  return std::min(b, n_bins - 1);
}

double HistogramConditionalDensity::density(Eigen::Index row, double a) const {
  const int b = bin_index(a);
  if (b < 0) return 0.0;
  return bin_probs(row, b) / binwidth();
}

void HistogramConditionalDensity::validate() const {
  if (n_bins < 2) throw UsageError("histogram needs at least 2 bins");
  if (!(hi > lo)) throw UsageError("histogram support is degenerate");
  for (Eigen::Index i = 0; i < bin_probs.rows(); ++i) {
    if (std::abs(bin_probs.row(i).sum() - 1.0) > 1e-8)
      throw NumericalError("histogram row does not sum to 1");
  }
}

HistogramConditionalDensity fit_histogram_density(const ShiftDataset& data,
                                                  int n_bins, PaModel model) {
  if (n_bins < 2) throw UsageError("histogram needs at least 2 bins");
  HistogramConditionalDensity out;
  out.lo = data.a_min;
  out.hi = data.a_max + data.gamma;
  out.n_bins = n_bins;
  const Eigen::Index n = data.n();

  Eigen::VectorXi bins(n);
  out.bin_counts = Eigen::VectorXi::Zero(n_bins);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int b = out.bin_index(data.a[i]);
    if (b < 0) throw UsageError("exposure outside histogram support");
    bins[i] = b;
    ++out.bin_counts[b];
  }

  if (model == PaModel::marginal) {
    Vec freq = Vec::Constant(n_bins, 1e-12);
    for (Eigen::Index i = 0; i < n; ++i) freq[bins[i]] += 1.0;
    freq /= freq.sum();
    out.bin_probs = freq.transpose().replicate(n, 1);
    return out;
  }

  // Multinomial logistic with per-bin linear predictor in (1, w); last bin is
  // the reference. A small ridge keeps empty-bin intercepts finite.
  const Eigen::Index d = data.w.cols();
  const Eigen::Index q = 1 + d;              // features per bin
  const Eigen::Index nb = n_bins - 1;        // free bins
  const Eigen::Index k = nb * q;
  Mat z(n, q);
  z.col(0).setOnes();
  z.rightCols(d) = data.w;

  auto probs_for = [&](const Vec& theta) {
    Mat eta = Mat::Zero(n, n_bins);
    for (Eigen::Index b = 0; b < nb; ++b)
      eta.col(b) = z * theta.segment(b * q, q);
    eta = eta.cwiseMax(-kEtaClamp).cwiseMin(kEtaClamp);
    Mat p(n, n_bins);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = eta.row(i).maxCoeff();
      p.row(i) = (eta.row(i).array() - mx).exp();
      p.row(i) /= p.row(i).sum();
    }
    return p;
  };

  ConcaveObjective obj;
  obj.value = [&](const Vec& theta) {
    Mat p = probs_for(theta);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      ll += std::log(std::max(p(i, bins[i]), 1e-300));
    return ll - kMultinomRidge * theta.squaredNorm();
  };
  obj.gradient = [&](const Vec& theta) {
    Mat p = probs_for(theta);
    Vec g = Vec::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index b = 0; b < nb; ++b) {
        const double r = (bins[i] == b ? 1.0 : 0.0) - p(i, b);
        g.segment(b * q, q) += r * z.row(i).transpose();
      }
    }
    return Vec(g - 2.0 * kMultinomRidge * theta);
  };
  obj.hessian = [&](const Vec& theta) {
    Mat p = probs_for(theta);
    Mat h = Mat::Zero(k, k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Mat zz = z.row(i).transpose() * z.row(i);
      for (Eigen::Index b = 0; b < nb; ++b) {
        for (Eigen::Index c = b; c < nb; ++c) {
          const double w = -p(i, b) * ((b == c ? 1.0 : 0.0) - p(i, c));
          h.block(b * q, c * q, q, q) += w * zz;
          if (c != b) h.block(c * q, b * q, q, q) += w * zz;
        }
      }
    }
    h.diagonal().array() -= 2.0 * kMultinomRidge;
    return h;
  };

  const Vec theta = maximize_concave(obj, Vec::Zero(k));
  out.bin_probs = probs_for(theta);
  return out;
}

double ShiftState::mu(Eigen::Index row, double a, const Mat& w) const {
  double lp = mu_base_coef[0] + mu_base_coef[1] * a;
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    lp += mu_base_coef[2 + j] * w(row, j);
  for (const auto& layer : mu_layers) {
    // The fluctuation lives on the fitted density's effective support;
    // at evaluation points in bins with no observations mu stays at its
    // base, since no data informs the update there.
    const int b = layer.pa_snapshot.bin_index(a);
    if (b < 0 || !layer.pa_snapshot.bin_observed(b)) continue;
    const double den = layer.pa_snapshot.density(row, a);
    if (den <= 0.0) continue;
    lp += layer.eps_y * (layer.pa_snapshot.density(row, a - gamma) / den);
  }
  return expit(lp);
}

double conditional_mean_shifted(const ShiftState& state, Eigen::Index row,
                                const Mat& w) {
  double s = 0.0;
  for (int b = 0; b < state.pa.n_bins; ++b) {
    const double p = state.pa.bin_probs(row, b);
    if (p <= 0.0) continue;
    s += p * state.mu(row, state.pa.midpoint(b) + state.gamma, w);
  }
  return s;
}

double ShiftState::psi(const Mat& w) const {
  double s = 0.0;
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    s += w_weights[i] * conditional_mean_shifted(*this, i, w);
  return s;
}

double density_ratio_shift(const HistogramConditionalDensity& pa,
                           Eigen::Index row, double a, double gamma) {
  const double den = pa.density(row, a);
  if (den <= 0.0)
    throw PositivityError("exposure density vanishes at an observed point");
  return pa.density(row, a - gamma) / den;
}

CleverTerms clever_terms(const ShiftState& state, const ShiftDataset& data,
                         Eigen::Index row) {
  CleverTerms t;
  t.h_y = density_ratio_shift(state.pa, row, data.a[row], state.gamma);
  const double ebar = conditional_mean_shifted(state, row, data.w);
  // The fitted exposure density is a histogram, so the exposure is carried at
  // its bin midpoint when plugged into mu(. + gamma).
  const int b = state.pa.bin_index(data.a[row]);
  t.h_a = state.mu(row, state.pa.midpoint(b) + state.gamma, data.w) - ebar;
  t.h_w = ebar - state.psi(data.w);
  return t;
}

double eif_shift(const ShiftState& state, const ShiftDataset& data,
                 Eigen::Index row) {
  const CleverTerms t = clever_terms(state, data, row);
  const double m = state.mu(row, data.a[row], data.w);
  return t.h_y * (data.y[row] - m) + t.h_a + t.h_w;
}

Vec eif_all(const ShiftState& state, const ShiftDataset& data) {
  const Eigen::Index n = data.n();
  Vec ebar(n);
  for (Eigen::Index i = 0; i < n; ++i)
    ebar[i] = conditional_mean_shifted(state, i, data.w);
  const double psi = state.w_weights.dot(ebar);
  Vec out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double hy = density_ratio_shift(state.pa, i, data.a[i], state.gamma);
    const double m = state.mu(i, data.a[i], data.w);
    const int b = state.pa.bin_index(data.a[i]);
    const double ha =
        state.mu(i, state.pa.midpoint(b) + state.gamma, data.w) - ebar[i];
    out[i] = hy * (data.y[i] - m) + ha + (ebar[i] - psi);
  }
  return out;
}

namespace {

// Per-row pieces reused by the eps_A likelihood and the shared-scalar path:
// h(i,b) = mu(mid_b + gamma, w_i) - E{mu(A + gamma, W) | W = w_i}.
Mat tilt_scores(const ShiftState& state, const ShiftDataset& data) {
  const Eigen::Index n = data.n();
  Mat h(n, state.pa.n_bins);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ebar = conditional_mean_shifted(state, i, data.w);
    for (int b = 0; b < state.pa.n_bins; ++b)
      h(i, b) = state.mu(i, state.pa.midpoint(b) + state.gamma, data.w) - ebar;
  }
  return h;
}

// log-likelihood of the exponentially tilted histogram in eps, with analytic
// derivatives; concave by construction.
void eps_a_derivs(const Mat& p0, const Mat& h, const Eigen::VectorXi& bins,
                  double eps, double* ll, double* g, double* hess) {
  const Eigen::Index n = p0.rows();
  double l = 0.0, gr = 0.0, he = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto hi = h.row(i).array();
    const auto e = (eps * hi).exp();
    const auto pe = p0.row(i).array() * e;
    const double z = pe.sum();
    const double m1 = (pe * hi).sum() / z;
    const double m2 = (pe * hi * hi).sum() / z;
    l += eps * h(i, bins[i]) - std::log(z);
    gr += h(i, bins[i]) - m1;
    he -= m2 - m1 * m1;
  }
  if (ll) *ll = l;
  if (g) *g = gr;
  if (hess) *hess = he;
}

Eigen::VectorXi observed_bins(const HistogramConditionalDensity& pa,
                              const ShiftDataset& data) {
  Eigen::VectorXi bins(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i)
    bins[i] = pa.bin_index(data.a[i]);
  return bins;
}

void apply_eps_a(ShiftState& state, const Mat& h, double eps_a) {
  Mat& p = state.pa.bin_probs;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i) = p.row(i).array() * (eps_a * h.row(i).array()).exp();
    p.row(i) /= p.row(i).sum();
  }
}

double y_loglik(const ShiftState& state, const ShiftDataset& data) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double m = clamp_prob(state.mu(i, data.a[i], data.w));
    ll += data.y[i] > 0.5 ? std::log(m) : std::log(1.0 - m);
  }
  return ll;
}

double a_loglik(const ShiftState& state, const Eigen::VectorXi& bins) {
  double ll = 0.0;
  const double lbw = std::log(state.pa.binwidth());
  for (Eigen::Index i = 0; i < bins.size(); ++i)
    ll += std::log(std::max(state.pa.bin_probs(i, bins[i]), 1e-300)) - lbw;
  return ll;
}

}  // namespace

Vec fluctuate_shift(ShiftState& state, const ShiftDataset& data) {
  const Eigen::Index n = data.n();
  const Eigen::VectorXi bins = observed_bins(state.pa, data);

  // Both component likelihoods are evaluated at the current state, so the
  // eps_A tilt scores are taken before the mu update lands.
  const Mat h = tilt_scores(state, data);

  // eps_Y: offset logistic regression of Y on the density-ratio covariate.
  Vec hy(n), off(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    hy[i] = density_ratio_shift(state.pa, i, data.a[i], state.gamma);
    off[i] = logit(clamp_prob(state.mu(i, data.a[i], data.w)));
  }
  Mat hy_design = hy;
  const LogisticFit fy =
      fit_logistic_irls(hy_design, data.y, Vec::Ones(n), off);
  const double eps_y = fy.coefficients[0];
  state.mu_layers.push_back({eps_y, state.pa});
  ConcaveObjective obj;
  obj.value = [&](const Vec& e) {
    double ll;
    eps_a_derivs(state.pa.bin_probs, h, bins, e[0], &ll, nullptr, nullptr);
    return ll;
  };
  obj.gradient = [&](const Vec& e) {
    double g;
    eps_a_derivs(state.pa.bin_probs, h, bins, e[0], nullptr, &g, nullptr);
    return Vec::Constant(1, g).eval();
  };
  obj.hessian = [&](const Vec& e) {
    double hs;
    eps_a_derivs(state.pa.bin_probs, h, bins, e[0], nullptr, nullptr, &hs);
    return Mat::Constant(1, 1, hs).eval();
  };
  const double eps_a = maximize_concave(obj, Vec::Zero(1))[0];
  apply_eps_a(state, h, eps_a);

  Vec eps(2);
  eps << eps_y, eps_a;
  return eps;
}

std::function<double(double)> epsilon_a_score(const ShiftState& state,
                                              const ShiftDataset& data) {
  const Mat h = tilt_scores(state, data);
  const Mat p0 = state.pa.bin_probs;
  const Eigen::VectorXi bins = observed_bins(state.pa, data);
  return [p0, h, bins](double eps) {
    double g;
    eps_a_derivs(p0, h, bins, eps, nullptr, &g, nullptr);
    return g;
  };
}

ShiftState initial_state(const ShiftDataset& data, const ShiftOptions& opts) {
  data.validate();
  ShiftState st;
  st.gamma = data.gamma;
  const Mat z = mu_design(data);
  st.mu_base_coef = fit_logistic_irls(z, data.y).coefficients;
  st.pa = fit_histogram_density(data, opts.n_bins, opts.pa_model);
  st.w_weights = Vec::Constant(data.n(), 1.0 / data.n());
  return st;
}

namespace {

Vec fluctuate_shared(ShiftState& state, const ShiftDataset& data) {
  // One scalar eps drives both tilts: logit mu + eps*H_Y and the histogram
  // tilt exp(eps*h). The joint log-likelihood is concave in eps.
  const Eigen::Index n = data.n();
  const Eigen::VectorXi bins = observed_bins(state.pa, data);
  Vec hy(n), off(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    hy[i] = density_ratio_shift(state.pa, i, data.a[i], state.gamma);
    off[i] = logit(clamp_prob(state.mu(i, data.a[i], data.w)));
  }
  const Mat h = tilt_scores(state, data);
  const Mat p0 = state.pa.bin_probs;

  ConcaveObjective obj;
  auto y_part = [&](double e, double* ll, double* g, double* hs) {
    double l = 0.0, gr = 0.0, he = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double eta = off[i] + e * hy[i];
      const double m = expit(eta);
      l += data.y[i] > 0.5 ? log_sigmoid(eta) : log_sigmoid(-eta);
      gr += hy[i] * (data.y[i] - m);
      he -= hy[i] * hy[i] * m * (1.0 - m);
    }
    if (ll) *ll = l;
    if (g) *g = gr;
    if (hs) *hs = he;
  };
  obj.value = [&](const Vec& e) {
    double l1, l2;
    y_part(e[0], &l1, nullptr, nullptr);
    eps_a_derivs(p0, h, bins, e[0], &l2, nullptr, nullptr);
    return l1 + l2;
  };
  obj.gradient = [&](const Vec& e) {
    double g1, g2;
    y_part(e[0], nullptr, &g1, nullptr);
    eps_a_derivs(p0, h, bins, e[0], nullptr, &g2, nullptr);
    return Vec::Constant(1, g1 + g2).eval();
  };
  obj.hessian = [&](const Vec& e) {
    double h1, h2;
    y_part(e[0], nullptr, nullptr, &h1);
    eps_a_derivs(p0, h, bins, e[0], nullptr, nullptr, &h2);
    return Mat::Constant(1, 1, h1 + h2).eval();
  };
  const double eps = maximize_concave(obj, Vec::Zero(1))[0];
  state.mu_layers.push_back({eps, state.pa});
  apply_eps_a(state, h, eps);
  return Vec::Constant(1, eps);
}

}  // namespace

EstimateReport tmle_shift(const ShiftDataset& data, const ShiftOptions& opts) {
  ShiftState state = initial_state(data, opts);
  const Eigen::VectorXi bins = observed_bins(state.pa, data);
  const Eigen::Index n = data.n();

  auto step = [&]() {
    FluctuationStep s;
    s.epsilon_hat = opts.shared_scalar_epsilon ? fluctuate_shared(state, data)
                                       : fluctuate_shift(state, data);
    s.loglik = y_loglik(state, data) + a_loglik(state, bins);
    s.mean_eif = Vec::Constant(1, eif_all(state, data).mean());
    return s;
  };

  EstimateReport rep;
  rep.trace = run_tmle(step, opts.tol, opts.max_iter);
  rep.psi_hat = Vec::Constant(1, state.psi(data.w));
  const Vec eif = eif_all(state, data);
  const double var = (eif.array() - eif.mean()).square().sum() / n;
  rep.variance_hat = Mat::Constant(1, 1, var / n);
  finalize_wald_ci(rep);
  return rep;
}

}  // namespace tmle::shift_effect
