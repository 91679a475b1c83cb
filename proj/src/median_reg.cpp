#include "tmlecvx/median_reg.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace tmle::median_reg {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }
inline double norm_pdf(double z) {
  return kInvSqrt2Pi * std::exp(-0.5 * z * z);
}

}  // namespace

void XYDataset::validate() const {
  if (x.rows() != y.size()) throw UsageError("XYDataset: inconsistent rows");
  if (!x.allFinite() || !y.allFinite())
    throw UsageError("XYDataset: non-finite entries");
}

GLink g_link(const Vec& x, const Vec& beta) {
  GLink g;
  g.value = expit(beta.dot(x));
  g.grad = g.value * (1.0 - g.value) * x;
  return g;
}

Vec eif_median(const Vec& beta, const Vec& x, double y) {
  const GLink g = g_link(x, beta);
  const double r = y - g.value;
  const double s = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
  return -s * g.grad;
}

TiltedXYDensity::TiltedXYDensity(Mat atoms, Vec base_means)
    : x_(std::move(atoms)), mean_(std::move(base_means)) {
  w_ = Vec::Constant(x_.rows(), 1.0 / static_cast<double>(x_.rows()));
  rebuild();
}

TiltedXYDensity TiltedXYDensity::initial_fit(const XYDataset& data) {
  data.validate();
  const auto n = data.n();
  Mat design(n, data.d() + 1);
  design.col(0).setOnes();
  design.rightCols(data.d()) = data.x;
  const Vec ols = design.colPivHouseholderQr().solve(data.y);
  return TiltedXYDensity(data.x, design * ols);
}

void TiltedXYDensity::rebuild() {
  const auto n = x_.rows();
  const auto K = static_cast<Eigen::Index>(tilts_.size());
  bp_.resize(n, K);
  lf_.resize(n, K + 1);
  dphi_.resize(n, K + 1);
  jseg_.resize(n, K + 1);
  cdf_edge_.resize(n, K);
  pdf_edge_.resize(n, K);
  norm_.resize(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec xi = x_.row(i);
    // breakpoint and the tilt's contribution eps'v (v = -grad g) per tilt
    std::vector<std::pair<double, double>> pieces(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      const GLink g = g_link(xi, tilts_[k].beta);
      pieces[k] = {g.value, tilts_[k].eps.dot(-g.grad)};
    }
    std::sort(pieces.begin(), pieces.end());

    // log factor on segment s: sum_k sign_s(k) * contrib_k
    double acc = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) acc -= pieces[k].second;
    lf_(i, 0) = acc;
    for (Eigen::Index k = 0; k < K; ++k) {
      bp_(i, k) = pieces[k].first;
      acc += 2.0 * pieces[k].second;
      lf_(i, k + 1) = acc;
    }

    const double m = mean_[i];
    double prev_cdf = 0.0, prev_pdf = 0.0, base_total = 0.0, nrm = 0.0;
    for (Eigen::Index s = 0; s <= K; ++s) {
      const bool last = (s == K);
      const double cdf = last ? 1.0 : norm_cdf(bp_(i, s) - m);
      const double pdf = last ? 0.0 : norm_pdf(bp_(i, s) - m);
      if (!last) {
        cdf_edge_(i, s) = cdf;
        pdf_edge_(i, s) = pdf;
      }
      dphi_(i, s) = cdf - prev_cdf;
      jseg_(i, s) = prev_pdf - pdf;
      base_total += dphi_(i, s);
      nrm += std::exp(lf_(i, s)) * dphi_(i, s);
      prev_cdf = cdf;
      prev_pdf = pdf;
    }
    if (std::abs(base_total - 1.0) > 1e-6)
      throw QuadratureError("TiltedXYDensity: segment partition mass != 1");
    if (!(nrm > 0.0) || !std::isfinite(nrm))
      throw QuadratureError("TiltedXYDensity: degenerate atom normalizer");
    norm_[i] = nrm;
  }
}

double TiltedXYDensity::risk_abs(const Vec& beta) const {
  const auto n = x_.rows();
  const auto K = static_cast<Eigen::Index>(tilts_.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double c = expit(beta.dot(x_.row(i)));
    const double m = mean_[i];
    const double zc = c - m;
    const double cdf_c = norm_cdf(zc);
    const double pdf_c = norm_pdf(zc);

    double acc = 0.0;
    double prev_cdf = 0.0, prev_pdf = 0.0;
    for (Eigen::Index s = 0; s <= K; ++s) {
      const double f = std::exp(lf_(i, s));
      const double hi = (s == K) ? std::numeric_limits<double>::infinity()
                                 : bp_(i, s);
      const double lo_cdf = prev_cdf, lo_pdf = prev_pdf;
      const double hi_cdf = (s == K) ? 1.0 : cdf_edge_(i, s);
      const double hi_pdf = (s == K) ? 0.0 : pdf_edge_(i, s);
      // int over segment of |y - c| phi(y - m) dy, splitting at c if inside
      const double lo = (s == 0) ? -std::numeric_limits<double>::infinity()
                                 : bp_(i, s - 1);
      if (c <= lo) {
        // whole segment above c: int (y-c) phi
        acc += f * ((m - c) * (hi_cdf - lo_cdf) + (lo_pdf - hi_pdf));
      } else if (c >= hi) {
        acc += f * ((c - m) * (hi_cdf - lo_cdf) - (lo_pdf - hi_pdf));
      } else {
        acc += f * ((c - m) * (cdf_c - lo_cdf) - (lo_pdf - pdf_c));
        acc += f * ((m - c) * (hi_cdf - cdf_c) + (pdf_c - hi_pdf));
      }
      prev_cdf = hi_cdf;
      prev_pdf = hi_pdf;
    }
    total += w_[i] * acc / norm_[i];
  }
  return total;
}

std::pair<double, double> TiltedXYDensity::mass_split(Eigen::Index i,
                                                      double c) const {
  const auto K = static_cast<Eigen::Index>(tilts_.size());
  const double m = mean_[i];
  const double cdf_c = norm_cdf(c - m);
  double below = 0.0;
  double prev_cdf = 0.0;
  for (Eigen::Index s = 0; s <= K; ++s) {
    const double hi_cdf = (s == K) ? 1.0 : cdf_edge_(i, s);
    const double f = std::exp(lf_(i, s));
    const double clipped = std::min(std::max(cdf_c, prev_cdf), hi_cdf);
    below += f * (clipped - prev_cdf);
    prev_cdf = hi_cdf;
  }
  below /= norm_[i];
  return {below, 1.0 - below};
}

double TiltedXYDensity::log_conditional_density(Eigen::Index i,
                                                double y) const {
  const auto K = static_cast<Eigen::Index>(tilts_.size());
  Eigen::Index s = 0;
  while (s < K && y > bp_(i, s)) ++s;
  const double z = y - mean_[i];
  return lf_(i, s) - 0.5 * z * z + std::log(kInvSqrt2Pi) - std::log(norm_[i]);
}

double TiltedXYDensity::conditional_density(Eigen::Index i, double y) const {
  return std::exp(log_conditional_density(i, y));
}

void TiltedXYDensity::append_tilt(const Vec& eps, const Vec& beta) {
  const Vec old_norm = norm_;
  tilts_.push_back({eps, beta});
  rebuild();
  // Marginal atom weights pick up the ratio of conditional normalizers.
  Vec r = (norm_.array() / old_norm.array()).matrix();
  w_ = (w_.array() * r.array()).matrix();
  const double z = w_.sum();
  if (!(z > 0.0) || !std::isfinite(z))
    throw NumericalError("append_tilt: joint normalizer degenerate");
  w_ /= z;
}

MedianBeta argmin_beta(const TiltedXYDensity& p) {
  const auto d = p.atoms().cols();
  Vec lo = Vec::Constant(d, kBetaBoxLo);
  Vec hi = Vec::Constant(d, kBetaBoxHi);
  Vec step = (hi - lo) / 40.0;

  Vec best = Vec::Zero(d);
  double best_risk = std::numeric_limits<double>::infinity();
  bool on_boundary = false;

  for (int stage = 0; stage < 4; ++stage) {
    // axis grids
    std::vector<std::vector<double>> grids(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      for (double v = lo[j]; v <= hi[j] + 1e-12 * std::abs(step[j]); v += step[j])
        grids[j].push_back(v);
    }
    best_risk = std::numeric_limits<double>::infinity();
    // odometer over the d-dimensional grid
    std::vector<size_t> idx(d, 0);
    Vec beta(d);
    bool done = false;
    while (!done) {
      for (Eigen::Index j = 0; j < d; ++j) beta[j] = grids[j][idx[j]];
      const double r = p.risk_abs(beta);
      if (r < best_risk - 1e-15 ||
          (std::abs(r - best_risk) <= 1e-15 && beta.norm() < best.norm())) {
        best_risk = r;
        best = beta;
      }
      Eigen::Index j = 0;
      for (; j < d; ++j) {
        if (++idx[j] < grids[j].size()) break;
        idx[j] = 0;
      }
      done = (j == d);
    }
    if (stage == 0) {
      for (Eigen::Index j = 0; j < d; ++j)
        if (best[j] <= kBetaBoxLo + 1e-9 || best[j] >= kBetaBoxHi - 1e-9)
          on_boundary = true;
    }
    // refine around the winner
    for (Eigen::Index j = 0; j < d; ++j) {
      lo[j] = std::max(best[j] - 2.0 * step[j], kBetaBoxLo);
      hi[j] = std::min(best[j] + 2.0 * step[j], kBetaBoxHi);
    }
    step /= 10.0;
  }

  MedianBeta out;
  out.beta = best;
  out.boundary_warning = on_boundary;
  return out;
}

ConcaveObjective epsilon_objective(const TiltedXYDensity& p,
                                   const XYDataset& data, const Vec& beta) {
  const auto n = data.n();
  const auto d = data.d();

  // Per-atom direction v_i = -grad g and split masses at c_i = g(x_i, beta).
  auto v = std::make_shared<Mat>(n, d);
  auto pb = std::make_shared<Vec>(n);
  auto pa = std::make_shared<Vec>(n);
  auto sumD = std::make_shared<Vec>(Vec::Zero(d));
  auto w = std::make_shared<Vec>(p.weights());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec xi = data.x.row(i);
    const GLink g = g_link(xi, beta);
    v->row(i) = -g.grad;
    auto [below, above] = p.mass_split(i, g.value);
    (*pb)[i] = below;
    (*pa)[i] = above;
    *sumD += eif_median(beta, xi, data.y[i]);
  }

  // Z(eps) with its first two moments of D under the tilted joint.
  auto zmoments = [=](const Vec& eps, double& z, Vec& m1, Mat& m2) {
    z = 0.0;
    m1 = Vec::Zero(d);
    m2 = Mat::Zero(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec vi = v->row(i);
      const double ev = eps.dot(vi);
      const double tp = (*w)[i] * (*pa)[i] * std::exp(ev);
      const double tm = (*w)[i] * (*pb)[i] * std::exp(-ev);
      z += tp + tm;
      m1 += (tp - tm) * vi;
      m2 += (tp + tm) * (vi * vi.transpose());
    }
    m1 /= z;
    m2 /= z;
  };

  ConcaveObjective obj;
  obj.value = [=](const Vec& eps) {
    double z;
    Vec m1;
    Mat m2;
    zmoments(eps, z, m1, m2);
    return eps.dot(*sumD) - static_cast<double>(n) * std::log(z);
  };
  obj.gradient = [=](const Vec& eps) {
    double z;
    Vec m1;
    Mat m2;
    zmoments(eps, z, m1, m2);
    return Vec(*sumD - static_cast<double>(n) * m1);
  };
  obj.hessian = [=](const Vec& eps) {
    double z;
    Vec m1;
    Mat m2;
    zmoments(eps, z, m1, m2);
    return Mat(-static_cast<double>(n) * (m2 - m1 * m1.transpose()));
  };
  return obj;
}

Vec epsilon_mle_median(const TiltedXYDensity& p, const XYDataset& data,
                       const Vec& beta_current) {
  const ConcaveObjective obj = epsilon_objective(p, data, beta_current);
  return maximize_concave(obj, Vec::Zero(data.d()));
}

MedianFitResult tmle_median(const XYDataset& data, double tol, int max_iter) {
  data.validate();
  const auto n = data.n();
  TiltedXYDensity p = TiltedXYDensity::initial_fit(data);

  MedianFitResult result;
  bool first = true;
  auto step = [&]() -> FluctuationStep {
    const MedianBeta bk = argmin_beta(p);
    if (first) {
      result.substitution = bk;
      first = false;
    }
    const Vec eps = epsilon_mle_median(p, data, bk.beta);
    const ConcaveObjective obj = epsilon_objective(p, data, bk.beta);

    Vec mean_eif = Vec::Zero(data.d());
    for (Eigen::Index i = 0; i < n; ++i)
      mean_eif += eif_median(bk.beta, data.x.row(i), data.y[i]);
    mean_eif /= static_cast<double>(n);

    FluctuationStep r;
    r.epsilon_hat = eps;
    r.loglik = obj.value(eps);
    r.mean_eif = mean_eif;
    p.append_tilt(eps, bk.beta);
    return r;
  };

  result.trace = run_tmle(step, tol, max_iter);
  result.beta = argmin_beta(p);
  return result;
}

}  // namespace tmle::median_reg
