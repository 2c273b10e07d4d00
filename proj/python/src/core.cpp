// Python bindings: random streams, the Kalman oracle, the resampling coupling,
// the FEM solver and the experiment harness.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mlmc/bip.hpp"
#include "mlmc/experiment.hpp"
#include "mlmc/kalman.hpp"
#include "mlmc/parallel.hpp"
#include "mlmc/particle_filter.hpp"
#include "mlmc/rng.hpp"

namespace py = pybind11;
using namespace mlmc;

namespace {

ExperimentConfig parse_or_throw(const std::string& text) {
    auto v = validate_config(text);
    if (!v.ok()) {
        std::string msg = "invalid config:";
        for (const auto& e : v.errors) msg += "\n  " + e;
        throw py::value_error(msg);
    }
    return *v.config;
}

py::dict summaries_to_dict(const ExperimentResult& r) {
    py::dict out;
    for (const auto& s : r.summaries) {
        py::dict d;
        d["epsilons"] = s.epsilons;
        d["mean_cost"] = s.mean_cost;
        d["mse"] = s.mse;
        d["cost_vs_eps_slope"] = s.cost_vs_eps_slope;
        d["cost_vs_mse_slope"] = s.cost_vs_mse_slope;
        out[py::str(s.method)] = d;
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multilevel Monte Carlo library core";

    py::class_<RngStream>(m, "RngStream")
        .def(py::init<std::uint64_t, std::uint64_t>(), py::arg("seed"), py::arg("stream_id") = 0)
        .def_property_readonly("seed", &RngStream::seed)
        .def_property_readonly("stream_id", &RngStream::stream_id)
        .def("split", &RngStream::split, py::arg("lane"))
        .def("next_u64", &RngStream::next_u64)
        .def("uniform", &RngStream::uniform)
        .def("normal", &RngStream::normal)
        .def("__copy__", [](const RngStream& s) { return s; });

    py::class_<ScalarLinearGaussian>(m, "ScalarLinearGaussian")
        .def(py::init<>())
        .def_readwrite("a", &ScalarLinearGaussian::a)
        .def_readwrite("q", &ScalarLinearGaussian::q)
        .def_readwrite("c", &ScalarLinearGaussian::c)
        .def_readwrite("r", &ScalarLinearGaussian::r)
        .def_readwrite("m0", &ScalarLinearGaussian::m0)
        .def_readwrite("p0", &ScalarLinearGaussian::p0);

    py::class_<KalmanResult>(m, "KalmanResult")
        .def_readonly("predicted_mean", &KalmanResult::predicted_mean)
        .def_readonly("predicted_var", &KalmanResult::predicted_var)
        .def_readonly("filtered_mean", &KalmanResult::filtered_mean)
        .def_readonly("filtered_var", &KalmanResult::filtered_var)
        .def_readonly("log_likelihood", &KalmanResult::log_likelihood);

    m.def("kalman_filter",
          [](const ScalarLinearGaussian& model, const std::vector<double>& ys) { return kalman_filter(model, ys); },
          py::arg("model"), py::arg("observations"));
    m.def("ou_exact_transition", &ou_exact_transition, py::arg("theta"), py::arg("sigma"));
    m.def("ou_euler_transition", &ou_euler_transition, py::arg("theta"), py::arg("sigma"), py::arg("level"));

    m.def(
        "coupling_probability",
        [](const std::vector<double>& f, const std::vector<double>& c) {
            return coupling_probability(ProbabilityVector::normalize(f), ProbabilityVector::normalize(c));
        },
        py::arg("fine"), py::arg("coarse"), "sum_j min(f_j, c_j) of the normalized weights");
    m.def(
        "maximal_coupling_resample",
        [](const std::vector<double>& f, const std::vector<double>& c, std::size_t n, RngStream& stream) {
            return maximal_coupling_resample(ProbabilityVector::normalize(f), ProbabilityVector::normalize(c), n,
                                             stream);
        },
        py::arg("fine"), py::arg("coarse"), py::arg("n"), py::arg("stream"),
        "n index pairs whose marginals are categorical(fine) and categorical(coarse)");

    m.def(
        "poisson_l2_error",
        [](int level) {
            auto model = make_default_elliptic_model();
            model.amplitudes = {0.0, 0.0};
            const auto p = fem_solve(model, Vector::Zero(2), level);
            return l2_error(p, [](double x) { return 0.5 * x * (1.0 - x); });
        },
        py::arg("level"), "L2 error of the FEM solution of -p'' = 1 with zero boundary values");

    m.def("set_thread_count", &set_thread_count, py::arg("threads"));
    m.def("thread_count", &thread_count);

    m.def(
        "validate_config",
        [](const std::string& text) {
            const auto v = validate_config(text);
            return py::make_tuple(v.ok(), v.errors);
        },
        py::arg("text"), "(ok, errors) for a JSON config");
    m.def(
        "canonical_config", [](const std::string& text) { return canonical_text(parse_or_throw(text)); },
        py::arg("text"));

    m.def(
        "run_experiment",
        [](const std::string& text, std::optional<std::uint64_t> seed) {
            auto cfg = parse_or_throw(text);
            if (seed) cfg.seed = *seed;
            ExperimentResult r;
            {
                py::gil_scoped_release release;
                r = cfg.kind == ExperimentKind::Rates ? run_rates(cfg) : run_experiment(cfg);
            }
            py::dict out;
            if (cfg.kind == ExperimentKind::Rates) {
                out["csv"] = format_level_csv(r.level_rows);
            } else {
                out["csv"] = format_csv(r.rows);
                out["steps_csv"] = r.step_rows.empty() ? std::string{} : format_step_csv(r.step_rows);
            }
            out["summary"] = summary_table(r);
            out["methods"] = summaries_to_dict(r);
            out["oracle_value"] = r.oracle_value;
            if (r.fitted_rates) {
                out["alpha_hat"] = r.fitted_rates->alpha;
                out["beta_hat"] = r.fitted_rates->beta;
            }
            return out;
        },
        py::arg("config_text"), py::arg("seed") = py::none(),
        "Run a JSON experiment config; returns CSV text and per-method summaries");
}
