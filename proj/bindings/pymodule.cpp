// Python surface of the library. Weights cross the boundary as lists of
// 2-d numpy arrays and datasets as (X, y) pairs; experiment configs and
// summaries cross as JSON strings so the schema stays in one place.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "marginflow/analysis.hpp"
#include "marginflow/datasets.hpp"
#include "marginflow/experiment.hpp"
#include "marginflow/net.hpp"
#include "marginflow/oracles.hpp"

namespace py = pybind11;
using namespace mf;

namespace {

NetworkParams net_from(const std::vector<Matrix>& weights) {
    NetworkParams p;
    p.w = weights;
    p.validate();
    return p;
}

Dataset dataset_from(const Matrix& x, const Vector& y) {
    Dataset d;
    d.x = x;
    d.y = y;
    d.validate();
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Gradient-flow dynamics of layered ReLU classifiers under "
              "exponential loss: forward/gradient kernels, flow runs, rate "
              "fits, and reference oracles.";

    m.def(
        "forward",
        [](const std::vector<Matrix>& weights, const Vector& x) {
            return forward(net_from(weights), x);
        },
        py::arg("weights"), py::arg("x"),
        "Network output f(W; x) for weights given as a list of 2-d arrays.");

    m.def(
        "grad_weights",
        [](const std::vector<Matrix>& weights, const Vector& x) {
            return grad_weights(net_from(weights), x);
        },
        py::arg("weights"), py::arg("x"),
        "Per-layer gradients df/dW_k at a fixed input, as a list of arrays.");

    m.def(
        "structural_residual",
        [](const std::vector<Matrix>& weights, const Vector& x) {
            return structural_residual(net_from(weights), x);
        },
        py::arg("weights"), py::arg("x"),
        "Per-layer |<W_k, df/dW_k> - f(W; x)|; zero for ReLU nets away from "
        "activation boundaries.");

    m.def(
        "init_network",
        [](const std::vector<int>& dims, std::uint64_t seed, double scale,
           const std::string& scheme) {
            return init_network(dims, seed, scale, init_scheme_from_string(scheme)).w;
        },
        py::arg("dims"), py::arg("seed"), py::arg("scale") = 1.0,
        py::arg("scheme") = "gaussian",
        "Seeded weight draw for layer widths dims = [d, h_1, ..., 1].");

    m.def(
        "make_dataset",
        [](const std::string& spec_json) {
            const Dataset d = make_dataset(parse_data_spec(Json::parse(spec_json)));
            return py::make_tuple(d.x, d.y);
        },
        py::arg("spec_json"),
        "Builds (X, y) from a dataset spec given as a JSON string (the same "
        "schema as the \"data\" section of a run config).");

    m.def(
        "run_config",
        [](const std::string& config_json) {
            const RunResult r = run_experiment(parse_config(Json::parse(config_json)));
            return r.summary.dump(2);
        },
        py::arg("config_json"),
        "Runs an experiment config (JSON string) and returns the summary as "
        "a JSON string; nothing is written to disk.");

    m.def(
        "run_config_to",
        [](const std::string& config_json, const std::string& out_dir) {
            const RunResult r = run_experiment(parse_config(Json::parse(config_json)));
            write_outputs(r, out_dir);
            return r.passed;
        },
        py::arg("config_json"), py::arg("out_dir"),
        "Runs a config and writes series/summary/dataset files under out_dir; "
        "returns whether every gated analysis passed.");

    m.def(
        "verify",
        [](const std::string& suite) {
            std::ostringstream os;
            const bool ok = verify_suite(suite, os);
            return py::make_tuple(ok, os.str());
        },
        py::arg("suite"),
        "Runs a named verification suite; returns (passed, report_text).");

    m.def(
        "fit_rate",
        [](const std::vector<double>& t, const std::vector<double>& v,
           const std::string& family) {
            const RateFit f = fit_rate(t, v, rate_family_from_string(family));
            py::dict d;
            d["family"] = to_string(f.family);
            d["a"] = f.a;
            d["b"] = f.b;
            d["c"] = f.c;
            d["r2"] = f.r2;
            d["points"] = f.points;
            d["t_lo"] = f.t_lo;
            d["t_hi"] = f.t_hi;
            return d;
        },
        py::arg("t"), py::arg("v"), py::arg("family"),
        "Fits a rate law (c_log_t, a_over_log_t, pow_neg_b_log_t, pow_neg_c) "
        "to a series and returns the coefficients and r2.");

    m.def(
        "hard_margin_direction",
        [](const Matrix& x, const Vector& y) {
            const oracle::MaxMarginSolution s =
                oracle::hard_margin_direction(dataset_from(x, y));
            return py::make_tuple(s.direction, s.margin, s.support);
        },
        py::arg("x"), py::arg("y"),
        "Exact hard-margin separator by support-subset enumeration "
        "(desk-scale: d <= 4, n <= 50); returns (direction, margin, support).");

    m.def(
        "closed_form_1d",
        [](double x1, double x2) {
            const oracle::Equilibrium1d eq = oracle::closed_form_1d(x1, x2);
            py::dict d;
            d["w_star"] = eq.w_star;
            d["field_derivative"] = eq.field_derivative;
            d["stable"] = eq.stable;
            return d;
        },
        py::arg("x1"), py::arg("x2"),
        "Closed-form equilibrium of the one-dimensional two-point flow.");

    m.def("li", &oracle::li, py::arg("z"),
          "Logarithmic integral li(z), z > 1 (principal value).");
    m.def("li_inverse", &oracle::li_inverse, py::arg("y"),
          "Inverse of li on (1, inf).");
}
