#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "sgdstop/experiment.hpp"
#include "sgdstop/json_util.hpp"

namespace py = pybind11;
using namespace sgdstop;

namespace {

StepSizeSchedule make_schedule(const std::string& family, double q, double scale, double value,
                               const std::vector<double>& values, double p) {
  if (family == "power") return StepSizeSchedule::power(q, scale, p);
  if (family == "log_power") return StepSizeSchedule::log_power(q, scale, p);
  if (family == "constant") return StepSizeSchedule::constant(value, p);
  if (family == "table") return StepSizeSchedule::table(values, p);
  throw std::invalid_argument("unknown schedule family '" + family + "'");
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json to_json(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict records_to_numpy(const Trajectory& tr) {
  const auto n = static_cast<py::ssize_t>(tr.records.size());
  py::array_t<std::int64_t> t(n);
  py::array_t<double> eps(n), f(n), grad_norm(n), mart(n), g2(n);
  auto tt = t.mutable_unchecked<1>();
  auto e = eps.mutable_unchecked<1>();
  auto ff = f.mutable_unchecked<1>();
  auto gn = grad_norm.mutable_unchecked<1>();
  auto m = mart.mutable_unchecked<1>();
  auto gg = g2.mutable_unchecked<1>();
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto& r = tr.records[static_cast<std::size_t>(i)];
    tt(i) = r.t;
    e(i) = r.eps;
    ff(i) = r.f;
    gn(i) = r.grad_norm;
    m(i) = r.mart_inc;
    gg(i) = r.g_norm_sq;
  }
  py::dict d;
  d["t"] = t;
  d["eps"] = eps;
  d["f"] = f;
  d["grad_norm"] = grad_norm;
  d["mart_inc"] = mart;
  d["g_norm_sq"] = g2;
  d["final_point"] = tr.final_point;
  d["final_f"] = tr.final_f;
  d["diverged"] = tr.diverged;
  d["last_finite_step"] = tr.last_finite_step;
  return d;
}

}  // namespace

PYBIND11_MODULE(_sgdstop, m) {
  m.doc() = "SGD convergence diagnostics under relaxed step-size conditions.";
  m.attr("__version__") = SGDSTOP_VERSION;

  m.def(
      "classify",
      [](const std::string& family, double q, double scale, double value, const std::vector<double>& values,
         double p) {
        const auto c = make_schedule(family, q, scale, value, values, p).classify();
        py::dict d;
        d["robbins_monro"] = to_string(c.robbins_monro);
        d["relaxed"] = to_string(c.relaxed);
        d["test"] = c.governing_test;
        return d;
      },
      py::arg("family"), py::arg("q") = 0.5, py::arg("scale") = 1.0, py::arg("value") = 0.1,
      py::arg("values") = std::vector<double>{}, py::arg("p") = 3.0);

  m.def(
      "step_sizes",
      [](const py::object& schedule, std::int64_t T) {
        const auto s = StepSizeSchedule::from_json(to_json(schedule));
        std::vector<double> out(static_cast<std::size_t>(T));
        for (std::int64_t t = 1; t <= T; ++t) out[static_cast<std::size_t>(t - 1)] = s.step_size(t);
        return py::array_t<double>(static_cast<py::ssize_t>(out.size()), out.data());
      },
      py::arg("schedule"), py::arg("T"), "eps_1..eps_T for a schedule given as a config dict.");

  m.def(
      "run",
      [](const py::object& problem, const py::object& oracle, const py::object& schedule,
         const Eigen::VectorXd& theta1, std::int64_t T, std::uint64_t seed) {
        const auto p = problem_from_json(to_json(problem));
        const auto o = GradientOracle::from_json(to_json(oracle), p->dimension());
        const auto s = StepSizeSchedule::from_json(to_json(schedule));
        Trajectory tr;
        {
          py::gil_scoped_release release;
          tr = sgdstop::run(*p, o, s, theta1, T, seed);
        }
        return records_to_numpy(tr);
      },
      py::arg("problem"), py::arg("oracle"), py::arg("schedule"), py::arg("theta1"), py::arg("T"),
      py::arg("seed") = 0, "One SGD trajectory; per-step records as numpy arrays.");

  m.def(
      "count_upcrossings",
      [](const std::vector<double>& values, double e, double o) { return count_upcrossings(values, Interval(e, o)); },
      py::arg("values"), py::arg("e"), py::arg("o"));

  m.def(
      "ladder",
      [](const std::vector<double>& gaps, double h1, double h2) {
        return build_ladder(gaps, h1, h2, static_cast<std::int64_t>(gaps.size())).finite_times();
      },
      py::arg("gaps"), py::arg("h1"), py::arg("h2"), "Finite stopping times of the (h1, h2) ladder, 1-based.");

  m.def(
      "compute_c1_c2",
      [](double a, double b, int m_, double L, double G, double delta_ab, double eps1, double c_half_gap) {
        const auto k = compute_C1_C2(a, b, m_, L, G, delta_ab, eps1, c_half_gap);
        return py::make_tuple(k.c1, k.c2);
      },
      py::arg("a"), py::arg("b"), py::arg("m"), py::arg("L"), py::arg("G"), py::arg("delta_ab"), py::arg("eps1"),
      py::arg("c_half_gap"));

  m.def("compute_c_nu_bar", &compute_C_nu_bar, py::arg("nu"), py::arg("d_eta"), py::arg("L"), py::arg("p"));

  m.def(
      "counterexample_second_moment", [](std::int64_t n) { return counterexample_distribution(n).second_moment_exact; },
      py::arg("n"));

  m.def(
      "run_experiment",
      [](const std::string& config_path, const std::string& out_dir, unsigned threads) {
        RunOptions opt;
        opt.out_dir = out_dir;
        opt.threads = threads;
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_experiment_file(config_path, opt, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("config_path"), py::arg("out_dir"), py::arg("threads") = 0,
      "Run a config file; returns (exit_code, stdout_text, stderr_text).");

  m.def(
      "parse_config", [](const py::object& cfg) { return from_json(parse_config(to_json(cfg)).canonical()); },
      py::arg("config"), "Validate a config dict and return its canonical form.");

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
}
