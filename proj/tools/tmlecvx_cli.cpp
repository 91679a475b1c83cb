// Command-line front end: dataset generation, estimation, oracles, and the
// replicated simulation study. CSV in, JSON/CSV out, one manifest per output
// directory. Exit codes: 0 success, 1 numerical failure, 2 usage error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tmlecvx/errors.hpp"
#include "tmlecvx/io.hpp"
#include "tmlecvx/median_reg.hpp"
#include "tmlecvx/missing_mean.hpp"
#include "tmlecvx/shift_effect.hpp"
#include "tmlecvx/simulate.hpp"

namespace fs = std::filesystem;
using tmle::io::json;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

tmle::missing_mean::WorkingSpec parse_spec(const std::string& s) {
  if (s == "i") return tmle::missing_mean::WorkingSpec::i;
  if (s == "ii") return tmle::missing_mean::WorkingSpec::ii;
  if (s == "iii") return tmle::missing_mean::WorkingSpec::iii;
  if (s == "iv") return tmle::missing_mean::WorkingSpec::iv;
  throw tmle::UsageError("--spec must be one of i, ii, iii, iv");
}

tmle::simulate::Mechanism parse_mechanism(const std::string& s) {
  if (s == "D1") return tmle::simulate::Mechanism::D1;
  if (s == "D2") return tmle::simulate::Mechanism::D2;
  if (s == "D3") return tmle::simulate::Mechanism::D3;
  throw tmle::UsageError("--mechanism must be one of D1, D2, D3");
}

std::vector<int> parse_impls(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    if (tok.size() != 1 || tok[0] < '1' || tok[0] > '4')
      throw tmle::UsageError("--impl must be a comma list drawn from 1,2,3,4");
    out.push_back(tok[0] - '0');
  }
  if (out.empty()) throw tmle::UsageError("--impl selects no implementation");
  return out;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw tmle::UsageError(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

tmle::io::RunManifest make_manifest(const std::string& command) {
  tmle::io::RunManifest m;
  m.command = command;
  m.version = TMLECVX_VERSION;
  return m;
}

// Shared flags for commands that write into an output directory.
struct OutDir {
  std::string dir = ".";
  fs::path resolve(const std::string& name) const {
    fs::create_directories(dir);
    return fs::path(dir) / name;
  }
};

int cmd_estimate_missing(const std::string& data_path, const std::string& spec,
                         const std::string& impls, const OutDir& out) {
  Timer timer;
  const auto data = tmle::io::read_missing_csv(data_path);
  const auto wspec = parse_spec(spec);
  const auto nf = tmle::missing_mean::fit_initial_nuisances(data, wspec);
  json reports;
  for (int impl : parse_impls(impls)) {
    const auto rep = tmle::missing_mean::run_implementation(impl, data, nf);
    reports["impl" + std::to_string(impl)] = tmle::io::report_to_json(rep);
  }
  json j;
  j["problem"] = "missing_mean";
  j["spec"] = spec;
  j["n"] = data.n();
  j["implementations"] = reports;
  const auto report_path = out.resolve("report.json");
  write_json(report_path.string(), j);

  auto m = make_manifest("estimate-missing");
  m.config = {{"data", data_path}, {"spec", spec}, {"impl", impls}};
  m.wall_seconds = timer.seconds();
  m.add_output(report_path.string());
  m.write(out.resolve("manifest.json").string());
  return 0;
}

int cmd_estimate_median(const std::string& data_path, double tol, int max_iter,
                        const OutDir& out) {
  Timer timer;
  const auto data = tmle::io::read_median_csv(data_path);
  const auto fit = tmle::median_reg::tmle_median(data, tol, max_iter);
  json j;
  j["problem"] = "median_reg";
  j["n"] = data.n();
  json beta = json::array(), sub = json::array();
  for (Eigen::Index i = 0; i < fit.beta.beta.size(); ++i) {
    beta.push_back(fit.beta.beta[i]);
    sub.push_back(fit.substitution.beta[i]);
  }
  j["beta_tmle"] = beta;
  j["beta_substitution"] = sub;
  j["boundary_warning"] = fit.beta.boundary_warning;
  j["converged"] = fit.trace.converged;
  j["n_iter"] = fit.trace.n_iter();
  const auto report_path = out.resolve("report.json");
  write_json(report_path.string(), j);

  auto m = make_manifest("estimate-median");
  m.config = {{"data", data_path}, {"tol", std::to_string(tol)},
              {"max_iter", std::to_string(max_iter)}};
  m.wall_seconds = timer.seconds();
  m.add_output(report_path.string());
  m.write(out.resolve("manifest.json").string());
  return 0;
}

int cmd_estimate_shift(const std::string& data_path, double gamma, int bins,
                       const std::string& pa_model, bool shared_eps,
                       double a_min, double a_max, const OutDir& out) {
  Timer timer;
  const auto data = tmle::io::read_shift_csv(data_path, gamma, a_min, a_max);
  tmle::shift_effect::ShiftOptions opts;
  opts.n_bins = bins;
  opts.shared_scalar_epsilon = shared_eps;
  if (pa_model == "marginal")
    opts.pa_model = tmle::shift_effect::PaModel::marginal;
  else if (pa_model != "conditional")
    throw tmle::UsageError("--pa-model must be conditional or marginal");
  const auto rep = tmle::shift_effect::tmle_shift(data, opts);
  json j = tmle::io::report_to_json(rep);
  j["problem"] = "shift_effect";
  j["gamma"] = gamma;
  j["n"] = data.n();
  const auto report_path = out.resolve("report.json");
  write_json(report_path.string(), j);

  auto m = make_manifest("estimate-shift");
  m.config = {{"data", data_path},   {"gamma", std::to_string(gamma)},
              {"bins", std::to_string(bins)}, {"pa_model", pa_model},
              {"shared_epsilon", shared_eps ? "1" : "0"}};
  m.wall_seconds = timer.seconds();
  m.add_output(report_path.string());
  m.write(out.resolve("manifest.json").string());
  return 0;
}

int cmd_gen(const std::string& problem, const std::string& mechanism,
            const std::string& design, int n, std::uint64_t seed,
            const std::string& out_path, const std::string& curve_path) {
  Timer timer;
  std::vector<std::string> outputs;
  if (!curve_path.empty()) {
    // Mechanism/outcome curves on an x2 grid, for replotting.
    std::ofstream out(curve_path);
    if (!out) throw tmle::UsageError(curve_path + ": cannot open for writing");
    out << "x2,pm_D1,pm_D2,pm_D3,mu\n";
    for (int i = 0; i <= 800; ++i) {
      const double x = -4.0 + i * 0.01;
      out << x << "," << tmle::simulate::pm_true(tmle::simulate::Mechanism::D1, x)
          << "," << tmle::simulate::pm_true(tmle::simulate::Mechanism::D2, x)
          << "," << tmle::simulate::pm_true(tmle::simulate::Mechanism::D3, x)
          << "," << tmle::simulate::mu_true(x) << "\n";
    }
    outputs.push_back(curve_path);
  } else {
    if (n <= 0) throw tmle::UsageError("gen requires --n >= 1");
    if (problem == "missing") {
      const auto d =
          tmle::simulate::gen_missing(n, parse_mechanism(mechanism), seed);
      tmle::io::write_missing_csv(out_path, d);
    } else if (problem == "median") {
      const auto dd = design == "D2" ? tmle::simulate::MedianDesign::D2
                                     : tmle::simulate::MedianDesign::D1;
      if (design != "D1" && design != "D2")
        throw tmle::UsageError("--design must be D1 or D2");
      tmle::io::write_median_csv(out_path, tmle::simulate::gen_median(n, dd, seed));
    } else if (problem == "shift") {
      tmle::io::write_shift_csv(out_path, tmle::simulate::gen_shift(n, seed));
    } else {
      throw tmle::UsageError("--problem must be missing, median, or shift");
    }
    outputs.push_back(out_path);
  }

  auto m = make_manifest("gen");
  m.config = {{"problem", problem}, {"mechanism", mechanism},
              {"design", design},   {"n", std::to_string(n)}};
  m.seed = seed;
  m.seed_set = true;
  m.wall_seconds = timer.seconds();
  for (const auto& p : outputs) m.add_output(p);
  const fs::path dir = fs::path(outputs.front()).parent_path();
  m.write((dir.empty() ? fs::path(".") : dir) / "manifest.json");
  return 0;
}

int cmd_oracle(const std::string& bound, const std::string& truth, long reps,
               std::uint64_t seed, int workers, const OutDir& out) {
  Timer timer;
  json j;
  if (!bound.empty()) {
    const auto res = tmle::simulate::efficiency_bound_oracle(
        parse_mechanism(bound), reps, seed);
    j["kind"] = "efficiency_bound";
    j["mechanism"] = bound;
    j["value"] = res.value[0];
    j["se"] = res.se[0];
  } else if (!truth.empty()) {
    tmle::simulate::Problem prob;
    int mech_or_design = 1;
    if (truth == "missing") {
      prob = tmle::simulate::Problem::missing_mean;
    } else if (truth == "median-D1" || truth == "median-D2") {
      prob = tmle::simulate::Problem::median_reg;
      mech_or_design = truth.back() == '2' ? 2 : 1;
    } else if (truth == "shift") {
      prob = tmle::simulate::Problem::shift_effect;
    } else {
      throw tmle::UsageError(
          "--truth must be missing, median-D1, median-D2, or shift");
    }
    const auto res =
        tmle::simulate::true_value_oracle(prob, mech_or_design, reps, seed, workers);
    j = tmle::io::oracle_to_json(res);
    j["kind"] = "true_value";
    j["target"] = truth;
  } else {
    throw tmle::UsageError("oracle requires either --bound or --truth");
  }
  const auto report_path = out.resolve("oracle.json");
  write_json(report_path.string(), j);

  auto m = make_manifest("oracle");
  m.config = {{"bound", bound}, {"truth", truth}, {"reps", std::to_string(reps)}};
  m.seed = seed;
  m.seed_set = true;
  m.wall_seconds = timer.seconds();
  m.add_output(report_path.string());
  m.write(out.resolve("manifest.json").string());
  return 0;
}

int run_one_study(tmle::simulate::StudyConfig cfg, const OutDir& out,
                  const std::string& suffix) {
  const auto res = tmle::simulate::run_study(cfg);
  const auto csv_path = out.resolve("study" + suffix + ".csv");
  const auto json_path = out.resolve("study" + suffix + ".json");
  {
    std::ofstream c(csv_path);
    c << tmle::io::study_to_csv(res);
  }
  write_json(json_path.string(), tmle::io::study_to_json(res));
  for (const auto& e : res.estimators) {
    if (e.cell_unreliable)
      std::cerr << "CellUnreliableWarning: " << e.label << ": " << e.failures
                << "/" << cfg.replicates << " replicates failed\n";
  }
  return 0;
}

int cmd_study(const std::string& problem, const std::string& mechanism,
              const std::string& design, const std::string& spec,
              const std::string& impls, int n, int replicates,
              std::uint64_t seed, int workers, bool pa_misspec, double truth,
              double bound, long oracle_reps, bool full, const OutDir& out) {
  Timer timer;
  tmle::simulate::StudyConfig cfg;
  if (problem == "missing") {
    cfg.problem = tmle::simulate::Problem::missing_mean;
    cfg.mechanism = parse_mechanism(mechanism);
    cfg.spec = parse_spec(spec);
    cfg.implementations = parse_impls(impls);
  } else if (problem == "median") {
    cfg.problem = tmle::simulate::Problem::median_reg;
    if (design != "D1" && design != "D2")
      throw tmle::UsageError("--design must be D1 or D2");
    cfg.design = design == "D2" ? tmle::simulate::MedianDesign::D2
                                : tmle::simulate::MedianDesign::D1;
  } else if (problem == "shift") {
    cfg.problem = tmle::simulate::Problem::shift_effect;
    cfg.shift_pa_misspecified = pa_misspec;
  } else {
    throw tmle::UsageError("--problem must be missing, median, or shift");
  }
  cfg.n = n;
  cfg.replicates = replicates;
  cfg.seed = seed;
  cfg.workers = workers;
  cfg.true_value = truth;
  cfg.efficiency_bound = bound;
  cfg.oracle_reps = oracle_reps;

  auto m = make_manifest("study");
  m.config = {{"problem", problem},   {"mechanism", mechanism},
              {"design", design},     {"spec", spec},
              {"impl", impls},        {"n", std::to_string(n)},
              {"replicates", std::to_string(replicates)},
              {"workers", std::to_string(workers)},
              {"full", full ? "1" : "0"}};
  m.seed = seed;
  m.seed_set = true;

  if (full) {
    std::cerr << "warning: --full runs 10000 replicates at each of "
                 "n=200,500,1000,10000; this takes a long time\n";
    cfg.replicates = 10000;
    for (int nn : {200, 500, 1000, 10000}) {
      cfg.n = nn;
      run_one_study(cfg, out, "_n" + std::to_string(nn));
      m.add_output(out.resolve("study_n" + std::to_string(nn) + ".csv").string());
      m.add_output(out.resolve("study_n" + std::to_string(nn) + ".json").string());
    }
  } else {
    run_one_study(cfg, out, "");
    m.add_output(out.resolve("study.csv").string());
    m.add_output(out.resolve("study.json").string());
  }
  m.wall_seconds = timer.seconds();
  m.write(out.resolve("manifest.json").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TMLE with convex-log-likelihood submodels"};
  app.set_version_flag("--version", std::string(TMLECVX_VERSION));
  app.require_subcommand(1);

  // estimate-missing
  auto* em = app.add_subcommand("estimate-missing",
                                "Mean of an outcome missing at random");
  std::string em_data, em_spec = "i", em_impl = "1,2,3,4";
  OutDir em_out;
  em->add_option("--data", em_data, "input CSV (x1..xd,m,y)")->required();
  em->add_option("--spec", em_spec, "working-model spec: i|ii|iii|iv");
  em->add_option("--impl", em_impl, "comma list from 1,2,3,4");
  em->add_option("--out", em_out.dir, "output directory");

  // estimate-median
  auto* ed = app.add_subcommand("estimate-median",
                                "Nonparametric median regression");
  std::string ed_data;
  double ed_tol = tmle::kEpsilonTol;
  int ed_maxit = tmle::kMaxTmleIter;
  OutDir ed_out;
  ed->add_option("--data", ed_data, "input CSV (x1..xd,y)")->required();
  ed->add_option("--tol", ed_tol, "epsilon stopping tolerance");
  ed->add_option("--max-iter", ed_maxit, "iteration cap");
  ed->add_option("--out", ed_out.dir, "output directory");

  // estimate-shift
  auto* es = app.add_subcommand("estimate-shift",
                                "Effect of shifting a continuous exposure");
  std::string es_data, es_pa = "conditional";
  double es_gamma = 0.0;
  int es_bins = 20;
  bool es_shared = false;
  double es_amin = std::numeric_limits<double>::quiet_NaN();
  double es_amax = std::numeric_limits<double>::quiet_NaN();
  OutDir es_out;
  es->add_option("--data", es_data, "input CSV (w1..wd,a,y)")->required();
  es->add_option("--gamma", es_gamma, "additive exposure shift")->required();
  es->add_option("--bins", es_bins, "histogram bins for p(a|w)");
  es->add_option("--pa-model", es_pa, "conditional|marginal");
  es->add_flag("--shared-epsilon", es_shared,
               "one scalar epsilon for both fluctuations");
  es->add_option("--a-min", es_amin, "exposure lower bound (default: observed)");
  es->add_option("--a-max", es_amax, "exposure upper bound (default: observed)");
  es->add_option("--out", es_out.dir, "output directory");

  // gen
  auto* gg = app.add_subcommand("gen", "Generate a dataset CSV");
  std::string gg_problem = "missing", gg_mech = "D1", gg_design = "D1";
  std::string gg_out = "data.csv", gg_curve;
  int gg_n = 0;
  std::uint64_t gg_seed = 0;
  gg->add_option("--problem", gg_problem, "missing|median|shift");
  gg->add_option("--mechanism", gg_mech, "D1|D2|D3 (missing)");
  gg->add_option("--design", gg_design, "D1|D2 (median)");
  gg->add_option("--n", gg_n, "sample size");
  auto* gg_seed_opt = gg->add_option("--seed", gg_seed, "RNG seed (required)");
  gg->add_option("--out", gg_out, "output CSV path");
  gg->add_option("--curve", gg_curve,
                 "write mechanism/outcome curves to this CSV instead");

  // oracle
  auto* oo = app.add_subcommand("oracle", "Monte-Carlo reference quantities");
  std::string oo_bound, oo_truth;
  long oo_reps = 1'000'000;
  std::uint64_t oo_seed = 0;
  int oo_workers = 0;
  OutDir oo_out;
  oo->add_option("--bound", oo_bound, "efficiency bound: D1|D2|D3");
  oo->add_option("--truth", oo_truth, "missing|median-D1|median-D2|shift");
  oo->add_option("--reps", oo_reps, "Monte-Carlo repetitions");
  oo->add_option("--seed", oo_seed, "RNG seed")->required();
  oo->add_option("--workers", oo_workers, "worker threads (0 = auto)");
  oo->add_option("--out", oo_out.dir, "output directory");

  // study
  auto* ss = app.add_subcommand("study", "Replicated simulation study");
  std::string ss_problem = "missing", ss_mech = "D1", ss_design = "D1";
  std::string ss_spec = "i", ss_impl = "1,2,3,4";
  int ss_n = 200, ss_reps = 500, ss_workers = 0;
  std::uint64_t ss_seed = 0;
  bool ss_pa_mis = false, ss_full = false;
  double ss_truth = std::numeric_limits<double>::quiet_NaN();
  double ss_bound = std::numeric_limits<double>::quiet_NaN();
  long ss_oracle_reps = 2'000'000;
  OutDir ss_out;
  ss->add_option("--problem", ss_problem, "missing|median|shift");
  ss->add_option("--mechanism", ss_mech, "D1|D2|D3 (missing)");
  ss->add_option("--design", ss_design, "D1|D2 (median)");
  ss->add_option("--spec", ss_spec, "working-model spec i|ii|iii|iv (missing)");
  ss->add_option("--impl", ss_impl, "comma list from 1,2,3,4 (missing)");
  ss->add_option("--n", ss_n, "sample size per replicate");
  ss->add_option("--replicates", ss_reps, "number of replicates");
  auto* ss_seed_opt = ss->add_option("--seed", ss_seed, "base RNG seed (required)");
  ss->add_option("--workers", ss_workers, "worker threads (0 = auto)");
  ss->add_flag("--pa-misspecified", ss_pa_mis,
               "use the marginal exposure model (shift)");
  ss->add_option("--truth", ss_truth, "true parameter value override");
  ss->add_option("--bound", ss_bound, "efficiency bound override");
  ss->add_option("--oracle-reps", ss_oracle_reps,
                 "MC repetitions for internally computed references");
  ss->add_flag("--full", ss_full,
               "paper-scale grid: 10000 replicates at n=200,500,1000,10000");
  ss->add_option("--out", ss_out.dir, "output directory");

  // Each subcommand reads the same flat key=value config format; explicit
  // flags override file values.
  for (CLI::App* sc : {em, ed, es, gg, oo, ss})
    sc->set_config("--config", "", "flat key=value config file; flags override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*em) return cmd_estimate_missing(em_data, em_spec, em_impl, em_out);
    if (*ed) return cmd_estimate_median(ed_data, ed_tol, ed_maxit, ed_out);
    if (*es)
      return cmd_estimate_shift(es_data, es_gamma, es_bins, es_pa, es_shared,
                                es_amin, es_amax, es_out);
    if (*gg) {
      if (gg_seed_opt->count() == 0)
        throw tmle::UsageError("gen requires --seed; no silent nondeterminism");
      return cmd_gen(gg_problem, gg_mech, gg_design, gg_n, gg_seed, gg_out,
                     gg_curve);
    }
    if (*oo)
      return cmd_oracle(oo_bound, oo_truth, oo_reps, oo_seed, oo_workers, oo_out);
    if (*ss) {
      if (ss_seed_opt->count() == 0)
        throw tmle::UsageError("study requires --seed; no silent nondeterminism");
      return cmd_study(ss_problem, ss_mech, ss_design, ss_spec, ss_impl, ss_n,
                       ss_reps, ss_seed, ss_workers, ss_pa_mis, ss_truth,
                       ss_bound, ss_oracle_reps, ss_full, ss_out);
    }
  } catch (const tmle::UsageError& e) {
    json err{{"error", "usage"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    json err{{"error", "numerical"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 2;
}
