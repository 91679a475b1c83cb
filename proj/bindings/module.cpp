// Python bindings for the main operations: generators, estimators, oracles.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tmlecvx/median_reg.hpp"
#include "tmlecvx/missing_mean.hpp"
#include "tmlecvx/shift_effect.hpp"
#include "tmlecvx/simulate.hpp"

namespace py = pybind11;
using namespace tmle;

namespace {

py::dict report_to_dict(const EstimateReport& rep) {
  py::dict d;
  d["psi_hat"] = rep.psi_hat;
  d["ci_lower"] = rep.ci_lower;
  d["ci_upper"] = rep.ci_upper;
  d["variance_hat"] = rep.variance_hat;
  d["converged"] = rep.trace.converged;
  d["n_iter"] = rep.trace.n_iter();
  return d;
}

}  // namespace

PYBIND11_MODULE(_tmlecvx, m) {
  m.doc() = "TMLE with convex-log-likelihood parametric submodels";
  m.attr("__version__") = TMLECVX_VERSION;

  py::class_<missing_mean::MissingDataset>(m, "MissingDataset")
      .def(py::init<>())
      .def_readwrite("x", &missing_mean::MissingDataset::x)
      .def_readwrite("m", &missing_mean::MissingDataset::m)
      .def_readwrite("y", &missing_mean::MissingDataset::y);

  py::class_<median_reg::XYDataset>(m, "XYDataset")
      .def(py::init<>())
      .def_readwrite("x", &median_reg::XYDataset::x)
      .def_readwrite("y", &median_reg::XYDataset::y);

  py::class_<shift_effect::ShiftDataset>(m, "ShiftDataset")
      .def(py::init<>())
      .def_readwrite("w", &shift_effect::ShiftDataset::w)
      .def_readwrite("a", &shift_effect::ShiftDataset::a)
      .def_readwrite("y", &shift_effect::ShiftDataset::y)
      .def_readwrite("gamma", &shift_effect::ShiftDataset::gamma)
      .def_readwrite("a_min", &shift_effect::ShiftDataset::a_min)
      .def_readwrite("a_max", &shift_effect::ShiftDataset::a_max);

  m.def("gen_missing",
        [](int n, const std::string& mech, std::uint64_t seed) {
          simulate::Mechanism mm = mech == "D3"   ? simulate::Mechanism::D3
                                   : mech == "D2" ? simulate::Mechanism::D2
                                                  : simulate::Mechanism::D1;
          return simulate::gen_missing(n, mm, seed);
        },
        py::arg("n"), py::arg("mechanism"), py::arg("seed"));
  m.def("gen_median",
        [](int n, int design, std::uint64_t seed) {
          return simulate::gen_median(n,
                                      design == 2 ? simulate::MedianDesign::D2
                                                  : simulate::MedianDesign::D1,
                                      seed);
        },
        py::arg("n"), py::arg("design"), py::arg("seed"));
  m.def("gen_shift", &simulate::gen_shift, py::arg("n"), py::arg("seed"));

  m.def("estimate_missing",
        [](const missing_mean::MissingDataset& data, int impl,
           const std::string& spec) {
          missing_mean::WorkingSpec ws = spec == "iv"    ? missing_mean::WorkingSpec::iv
                                         : spec == "iii" ? missing_mean::WorkingSpec::iii
                                         : spec == "ii"  ? missing_mean::WorkingSpec::ii
                                                         : missing_mean::WorkingSpec::i;
          const auto nf = missing_mean::fit_initial_nuisances(data, ws);
          return report_to_dict(missing_mean::run_implementation(impl, data, nf));
        },
        py::arg("data"), py::arg("impl") = 1, py::arg("spec") = "i");

  m.def("estimate_median",
        [](const median_reg::XYDataset& data, double tol, int max_iter) {
          const auto fit = median_reg::tmle_median(data, tol, max_iter);
          py::dict d;
          d["beta_tmle"] = fit.beta.beta;
          d["beta_substitution"] = fit.substitution.beta;
          d["boundary_warning"] = fit.beta.boundary_warning;
          d["converged"] = fit.trace.converged;
          d["n_iter"] = fit.trace.n_iter();
          return d;
        },
        py::arg("data"), py::arg("tol") = kEpsilonTol,
        py::arg("max_iter") = kMaxTmleIter);

  m.def("estimate_shift",
        [](const shift_effect::ShiftDataset& data, int bins,
           const std::string& pa_model, bool shared_epsilon) {
          shift_effect::ShiftOptions opts;
          opts.n_bins = bins;
          opts.pa_model = pa_model == "marginal"
                              ? shift_effect::PaModel::marginal
                              : shift_effect::PaModel::conditional;
          opts.shared_scalar_epsilon = shared_epsilon;
          return report_to_dict(shift_effect::tmle_shift(data, opts));
        },
        py::arg("data"), py::arg("bins") = 20,
        py::arg("pa_model") = "conditional", py::arg("shared_epsilon") = false);

  m.def("efficiency_bound_oracle",
        [](const std::string& mech, long reps, std::uint64_t seed) {
          simulate::Mechanism mm = mech == "D3"   ? simulate::Mechanism::D3
                                   : mech == "D2" ? simulate::Mechanism::D2
                                                  : simulate::Mechanism::D1;
          const auto r = simulate::efficiency_bound_oracle(mm, reps, seed);
          return py::make_tuple(r.value[0], r.se[0]);
        },
        py::arg("mechanism"), py::arg("reps"), py::arg("seed"));

  m.def("missing_mean_truth", [] { return simulate::missing_mean_truth_quadrature(); });
  m.def("shift_true_value", &simulate::shift_true_value);
}
