#include "tmlecvx/missing_mean.hpp"

#include <memory>

namespace tmle::missing_mean {

namespace {

// log-sum-exp over the concatenation of up to three vectors
double lse3(const Vec& a, const Vec& b, const Vec& c) {
  double mx = std::max({a.maxCoeff(), b.maxCoeff(), c.maxCoeff()});
  double s = ((a.array() - mx).exp().sum() + (b.array() - mx).exp().sum() +
              (c.array() - mx).exp().sum());
  return mx + std::log(s);
}

double lse2(double a, double b) {
  double mx = std::max(a, b);
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

// log tilt factor and its first two derivatives in epsilon
inline double ltilt(TiltKind k, double eps, double d) {
  return k == TiltKind::exp ? eps * d : log_sigmoid(2.0 * eps * d);
}
inline double ltilt_d1(TiltKind k, double eps, double d) {
  return k == TiltKind::exp ? d : 2.0 * d * expit(-2.0 * eps * d);
}
inline double ltilt_d2(TiltKind k, double eps, double d) {
  if (k == TiltKind::exp) return 0.0;
  const double s = expit(2.0 * eps * d);
  return -4.0 * d * d * s * (1.0 - s);
}

}  // namespace

void MissingDataset::validate() const {
  if (x.rows() != m.size() || x.rows() != y.size())
    throw UsageError("MissingDataset: inconsistent row counts");
  bool any_obs = false;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (m[i] != 0 && m[i] != 1)
      throw UsageError("MissingDataset: m must be 0 or 1");
    if (m[i] == 1) {
      any_obs = true;
      if (y[i] != 0.0 && y[i] != 1.0)
        throw UsageError("MissingDataset: observed y must be binary");
    }
  }
  if (!any_obs) throw UsageError("MissingDataset: no observed outcomes");
}

Mat correct_features(const Mat& x) {
  const auto n = x.rows();
  Mat f(n, x.cols() + 2);
  f.col(0).setOnes();
  f.middleCols(1, x.cols()) = x;
  f.col(x.cols() + 1) = x.col(x.cols() - 1).array().square();
  return f;
}

Mat misspecified_features(const Mat& x) {
  const auto n = x.rows();
  Mat f(n, 3);
  f.col(0).setOnes();
  f.col(1) = x.col(0);
  f.col(2) = x.col(0).array().square();
  return f;
}

NuisanceFit fit_initial_nuisances(const MissingDataset& data, WorkingSpec spec) {
  data.validate();
  const bool mu_correct = (spec == WorkingSpec::i || spec == WorkingSpec::ii);
  const bool pm_correct = (spec == WorkingSpec::i || spec == WorkingSpec::iii);
  const Mat fmu = mu_correct ? correct_features(data.x) : misspecified_features(data.x);
  const Mat fpm = pm_correct ? correct_features(data.x) : misspecified_features(data.x);

  // mu is fit on observed rows only
  const auto n = data.n();
  std::vector<Eigen::Index> obs;
  for (Eigen::Index i = 0; i < n; ++i)
    if (data.m[i] == 1) obs.push_back(i);
  Mat fmu_obs(static_cast<Eigen::Index>(obs.size()), fmu.cols());
  Vec y_obs(static_cast<Eigen::Index>(obs.size()));
  for (size_t r = 0; r < obs.size(); ++r) {
    fmu_obs.row(static_cast<Eigen::Index>(r)) = fmu.row(obs[r]);
    y_obs[static_cast<Eigen::Index>(r)] = data.y[obs[r]];
  }

  LogisticFit mu_fit = fit_logistic_irls(fmu_obs, y_obs);
  LogisticFit pm_fit = fit_logistic_irls(fpm, data.m.cast<double>());

  NuisanceFit nf;
  nf.spec = spec;
  nf.mu_coef = mu_fit.coefficients;
  nf.pm_coef = pm_fit.coefficients;
  nf.separation = mu_fit.separation || pm_fit.separation;
  nf.mu0.resize(n);
  nf.pm0.resize(n);
  const Vec eta_mu = fmu * mu_fit.coefficients;
  const Vec eta_pm = fpm * pm_fit.coefficients;
  for (Eigen::Index i = 0; i < n; ++i) {
    nf.mu0[i] = clamp_prob(expit(eta_mu[i]));
    nf.pm0[i] = clamp_prob(expit(eta_pm[i]));
  }
  return nf;
}

FiniteJointState FiniteJointState::from_nuisances(const NuisanceFit& nf) {
  const auto n = nf.mu0.size();
  FiniteJointState s;
  s.la0.resize(n);
  s.la10.resize(n);
  s.la11.resize(n);
  const double lw = -std::log(static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    s.la0[i] = lw + std::log1p(-nf.pm0[i]);
    s.la10[i] = lw + std::log(nf.pm0[i]) + std::log1p(-nf.mu0[i]);
    s.la11[i] = lw + std::log(nf.pm0[i]) + std::log(nf.mu0[i]);
  }
  s.decompose();
  return s;
}

void FiniteJointState::decompose() {
  const auto n = la0.size();
  w.resize(n);
  pm.resize(n);
  mu.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lobs = lse2(la10[i], la11[i]);
    const double lw = lse2(la0[i], lobs);
    w[i] = std::exp(lw);
    pm[i] = clamp_prob(std::exp(lobs - lw));
    mu[i] = clamp_prob(std::exp(la11[i] - lobs));
  }
}

void FiniteJointState::eif_atoms(double psi, Vec& d0, Vec& d10, Vec& d11) const {
  const auto n = la0.size();
  d0.resize(n);
  d10.resize(n);
  d11.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d0[i] = mu[i] - psi;
    d10[i] = (0.0 - mu[i]) / pm[i] + mu[i] - psi;
    d11[i] = (1.0 - mu[i]) / pm[i] + mu[i] - psi;
  }
}

FiniteJointState tilt_finite_joint(const FiniteJointState& state, double eps,
                                   TiltKind kind, double psi_ref) {
  Vec d0, d10, d11;
  state.eif_atoms(psi_ref, d0, d10, d11);
  FiniteJointState out = state;
  const auto n = state.la0.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    out.la0[i] += ltilt(kind, eps, d0[i]);
    out.la10[i] += ltilt(kind, eps, d10[i]);
    out.la11[i] += ltilt(kind, eps, d11[i]);
  }
  const double lz = lse3(out.la0, out.la10, out.la11);
  if (!std::isfinite(lz))
    throw NumericalError("tilt_finite_joint: all atoms numerically zero");
  out.la0.array() -= lz;
  out.la10.array() -= lz;
  out.la11.array() -= lz;
  out.decompose();
  return out;
}

double plugin_mean(const FiniteJointState& state) { return state.plugin_mean(); }

ConcaveObjective tilt_loglik_objective(const FiniteJointState& state,
                                       const MissingDataset& data,
                                       TiltKind kind) {
  const auto n = state.la0.size();
  const double psi = state.plugin_mean();
  auto d0 = std::make_shared<Vec>(), d10 = std::make_shared<Vec>(),
       d11 = std::make_shared<Vec>();
  state.eif_atoms(psi, *d0, *d10, *d11);

  // EIF value and base log-weight of each sample's own observed atom
  auto drow = std::make_shared<Vec>(n);
  auto larow = std::make_shared<Vec>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (data.m[i] == 0) {
      (*drow)[i] = (*d0)[i];
      (*larow)[i] = state.la0[i];
    } else if (data.y[i] == 1.0) {
      (*drow)[i] = (*d11)[i];
      (*larow)[i] = state.la11[i];
    } else {
      (*drow)[i] = (*d10)[i];
      (*larow)[i] = state.la10[i];
    }
  }
  auto la0 = std::make_shared<Vec>(state.la0);
  auto la10 = std::make_shared<Vec>(state.la10);
  auto la11 = std::make_shared<Vec>(state.la11);

  // Tilted-atom moments of ltilt' and ltilt'' at the current epsilon.
  auto moments = [=](double eps, double& lz, double& m1, double& m2,
                     double& e2) {
    Vec t0(n), t10(n), t11(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      t0[i] = (*la0)[i] + ltilt(kind, eps, (*d0)[i]);
      t10[i] = (*la10)[i] + ltilt(kind, eps, (*d10)[i]);
      t11[i] = (*la11)[i] + ltilt(kind, eps, (*d11)[i]);
    }
    lz = lse3(t0, t10, t11);
    m1 = m2 = e2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double q0 = std::exp(t0[i] - lz);
      const double q10 = std::exp(t10[i] - lz);
      const double q11 = std::exp(t11[i] - lz);
      const double g0 = ltilt_d1(kind, eps, (*d0)[i]);
      const double g10 = ltilt_d1(kind, eps, (*d10)[i]);
      const double g11 = ltilt_d1(kind, eps, (*d11)[i]);
      m1 += q0 * g0 + q10 * g10 + q11 * g11;
      m2 += q0 * g0 * g0 + q10 * g10 * g10 + q11 * g11 * g11;
      e2 += q0 * ltilt_d2(kind, eps, (*d0)[i]) +
            q10 * ltilt_d2(kind, eps, (*d10)[i]) +
            q11 * ltilt_d2(kind, eps, (*d11)[i]);
    }
  };

  ConcaveObjective obj;
  obj.value = [=](const Vec& e) {
    const double eps = e[0];
    double lz, m1, m2, e2;
    moments(eps, lz, m1, m2, e2);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      ll += (*larow)[i] + ltilt(kind, eps, (*drow)[i]);
    return ll - static_cast<double>(n) * lz;
  };
  obj.gradient = [=](const Vec& e) {
    const double eps = e[0];
    double lz, m1, m2, e2;
    moments(eps, lz, m1, m2, e2);
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      s += ltilt_d1(kind, eps, (*drow)[i]);
    Vec g(1);
    g[0] = s - static_cast<double>(n) * m1;
    return g;
  };
  obj.hessian = [=](const Vec& e) {
    const double eps = e[0];
    double lz, m1, m2, e2;
    moments(eps, lz, m1, m2, e2);
    double s2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      s2 += ltilt_d2(kind, eps, (*drow)[i]);
    Mat h(1, 1);
    h(0, 0) = s2 - static_cast<double>(n) * (e2 + (m2 - m1 * m1));
    return h;
  };
  return obj;
}

EstimateReport eif_variance_ci(const Vec& mu, const Vec& pm,
                               const MissingDataset& data, double psi,
                               TmleTrace trace) {
  const auto n = data.n();
  Vec d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::optional<double> yi =
        data.m[i] == 1 ? std::optional<double>(data.y[i]) : std::nullopt;
    d[i] = eif_missing_mean(mu[i], pm[i], data.m[i], yi, psi);
  }
  const double mean = d.mean();
  const double var = (d.array() - mean).square().sum() /
                     static_cast<double>(n - 1);
  EstimateReport rep;
  rep.psi_hat = Vec::Constant(1, psi);
  rep.variance_hat = Mat::Constant(1, 1, var / static_cast<double>(n));
  rep.trace = std::move(trace);
  finalize_wald_ci(rep);
  return rep;
}

namespace {

// Shared driver for implementations 1 and 2: per-iteration logistic
// fluctuation of mu with offset logit mu^k over observed rows.
EstimateReport tmle_logistic_fluct(const MissingDataset& data,
                                   const NuisanceFit& nf, bool weighted) {
  const auto n = data.n();
  std::vector<Eigen::Index> obs;
  for (Eigen::Index i = 0; i < n; ++i)
    if (data.m[i] == 1) obs.push_back(i);
  const auto no = static_cast<Eigen::Index>(obs.size());

  Vec mu_cur = nf.mu0;
  auto step = [&]() -> FluctuationStep {
    Mat design(no, 1);
    Vec y_obs(no), w_obs(no), offset(no);
    for (Eigen::Index r = 0; r < no; ++r) {
      const auto i = obs[r];
      design(r, 0) = weighted ? 1.0 : 1.0 / nf.pm0[i];
      w_obs[r] = weighted ? 1.0 / nf.pm0[i] : 1.0;
      y_obs[r] = data.y[i];
      offset[r] = logit(mu_cur[i]);
    }
    LogisticFit fit = fit_logistic_irls(design, y_obs, w_obs, offset);
    const double eps = fit.coefficients[0];
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = weighted ? 1.0 : 1.0 / nf.pm0[i];
      mu_cur[i] = clamp_prob(expit(logit(mu_cur[i]) + eps * h));
    }
    const double psi = mu_cur.mean();
    double ll = 0.0, mean_eif = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (data.m[i] == 1) {
        const double lmu = logit(mu_cur[i]);
        ll += data.y[i] * log_sigmoid(lmu) + (1.0 - data.y[i]) * log_sigmoid(-lmu);
      }
      std::optional<double> yi =
          data.m[i] == 1 ? std::optional<double>(data.y[i]) : std::nullopt;
      mean_eif += eif_missing_mean(mu_cur[i], nf.pm0[i], data.m[i], yi, psi);
    }
    mean_eif /= static_cast<double>(n);
    FluctuationStep r;
    r.epsilon_hat = Vec::Constant(1, eps);
    r.loglik = ll;
    r.mean_eif = Vec::Constant(1, mean_eif);
    return r;
  };

  TmleTrace trace = run_tmle(step);
  const double psi = mu_cur.mean();
  return eif_variance_ci(mu_cur, nf.pm0, data, psi, std::move(trace));
}

}  // namespace

EstimateReport tmle_clever_covariate(const MissingDataset& data,
                                     const NuisanceFit& nf) {
  return tmle_logistic_fluct(data, nf, /*weighted=*/false);
}

EstimateReport tmle_weighted_intercept(const MissingDataset& data,
                                       const NuisanceFit& nf) {
  return tmle_logistic_fluct(data, nf, /*weighted=*/true);
}

EstimateReport tmle_expfam(const MissingDataset& data, const NuisanceFit& nf,
                           TiltKind kind) {
  FiniteJointState state = FiniteJointState::from_nuisances(nf);
  const auto n = data.n();

  auto step = [&]() -> FluctuationStep {
    const double psi = state.plugin_mean();
    ConcaveObjective obj = tilt_loglik_objective(state, data, kind);
    Vec e0 = Vec::Zero(1);
    const double eps = maximize_concave(obj, e0)[0];
    state = tilt_finite_joint(state, eps, kind, psi);

    const double psi_new = state.plugin_mean();
    double mean_eif = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      std::optional<double> yi =
          data.m[i] == 1 ? std::optional<double>(data.y[i]) : std::nullopt;
      mean_eif += eif_missing_mean(state.mu[i], state.pm[i], data.m[i], yi, psi_new);
    }
    mean_eif /= static_cast<double>(n);

    FluctuationStep r;
    r.epsilon_hat = Vec::Constant(1, eps);
    r.loglik = obj.value(Vec::Constant(1, eps));
    r.mean_eif = Vec::Constant(1, mean_eif);
    return r;
  };

  TmleTrace trace = run_tmle(step);
  const double psi = state.plugin_mean();
  return eif_variance_ci(state.mu, state.pm, data, psi, std::move(trace));
}

EstimateReport run_implementation(int impl, const MissingDataset& data,
                                  const NuisanceFit& nf) {
  switch (impl) {
    case 1: return tmle_clever_covariate(data, nf);
    case 2: return tmle_weighted_intercept(data, nf);
    case 3: return tmle_expfam(data, nf, TiltKind::exp);
    case 4: return tmle_expfam(data, nf, TiltKind::sigmoid);
    default: throw UsageError("implementation must be 1, 2, 3, or 4");
  }
}

}  // namespace tmle::missing_mean
