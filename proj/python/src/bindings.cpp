#include "dkf/harness.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace dkf;

namespace {

py::dict stability_dict(const StabilityReport& rep) {
    py::list nodes;
    for (const auto& ns : rep.nodes) {
        py::dict d;
        d["node"] = ns.node + 1;
        d["delay"] = ns.d;
        d["lmi"] = to_string(ns.lmi.verdict);
        d["lmi_margin"] = ns.lmi.margin;
        d["exact_ms_radius"] = ns.exact_ms_radius;
        d["rho_open_loop"] = ns.rho106;
        if (ns.has_a105_b105) {
            d["a105"] = ns.ab.a105;
            d["b105"] = ns.ab.b105;
            d["b105_lambda"] = ns.ab.b105_lambda;
        }
        nodes.append(d);
    }
    py::dict out;
    out["nodes"] = nodes;
    out["stable"] = rep.overall_theorem3;
    out["text"] = rep.text();
    return out;
}

py::dict trace_dict(const Trace& tr) {
    const long rows = static_cast<long>(tr.rows.size());
    const long n = rows ? tr.rows[0].x.size() : 0;
    Mat x(rows, n), xhat(rows, n);
    Vec t(rows), trP(rows);
    for (long k = 0; k < rows; ++k) {
        x.row(k) = tr.rows[k].x.transpose();
        xhat.row(k) = tr.rows[k].xhat.transpose();
        t(k) = static_cast<double>(tr.rows[k].t);
        trP(k) = tr.rows[k].P.trace();
    }
    py::dict d;
    d["t"] = t;
    d["x"] = x;
    d["xhat"] = xhat;
    d["trP"] = trP;
    d["seconds_per_tick"] = tr.seconds_per_tick;
    return d;
}

}  // namespace

PYBIND11_MODULE(pydkf, m) {
    m.doc() = "Distributed Kalman fusion with dimensionality reduction and delays";

    static py::exception<ValidationError> validation(m, "ValidationError", PyExc_ValueError);
    static py::exception<NumericError> numeric(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ValidationError& e) {
            py::set_error(validation, e.what());
        } catch (const NumericError& e) {
            py::set_error(numeric, e.what());
        } catch (const ContractError& e) {
            py::set_error(PyExc_ValueError, e.what());
        }
    });

    py::class_<Scenario>(m, "Scenario")
        .def_readonly("name", &Scenario::name)
        .def_readonly("delays", &Scenario::delays)
        .def_readonly("horizon", &Scenario::horizon)
        .def_readonly("seed", &Scenario::seed)
        .def_readonly("P0", &Scenario::P0)
        .def_property_readonly("A", [](const Scenario& s) { return s.model.A; })
        .def_property_readonly("Qw", [](const Scenario& s) { return s.model.Qw; })
        .def_property_readonly("nodes", &Scenario::nodes)
        .def_property_readonly("n", [](const Scenario& s) { return s.model.n(); })
        .def_property_readonly("probs",
                               [](const Scenario& s) {
                                   std::vector<Vec> p;
                                   for (const auto& sch : s.schemes) p.push_back(sch.probs);
                                   return p;
                               })
        .def("with_probs", [](const Scenario& s, int node, const Vec& p) { return with_probs(s, node - 1, p); },
             py::arg("node"), py::arg("probs"), "Copy with the selection probabilities of a 1-based node replaced.")
        .def("__repr__", [](const Scenario& s) {
            return "<Scenario " + s.name + ": n=" + std::to_string(s.model.n()) + ", nodes=" + std::to_string(s.nodes()) +
                   ">";
        });

    m.def("load_scenario", &load_scenario, py::arg("path"));
    m.def("parse_scenario", &parse_scenario, py::arg("text"), py::arg("origin") = "<string>");
    m.def("bundled_scenario", &bundled_scenario, py::arg("name"));

    m.def(
        "steady_weights",
        [](const Scenario& sc) {
            SteadyWeights w = compute_steady_weights(sc);
            py::dict d;
            d["weights"] = w.weights;
            d["P"] = w.P;
            d["iterations"] = w.iterations;
            return d;
        },
        py::arg("scenario"));

    m.def(
        "stability", [](const Scenario& sc) { return stability_dict(check_theorem3(sc.model, sc.schemes, sc.delays)); },
        py::arg("scenario"));

    m.def("table1", []() {
        py::list rows;
        for (const auto& r : reproduce_table1()) {
            py::dict d;
            d["gamma"] = r.gamma;
            d["a105"] = r.a105;
            d["b105"] = r.b105;
            d["b105_lambda"] = r.b105_lambda;
            d["exact_ms_radius"] = r.radius;
            rows.append(d);
        }
        return rows;
    });

    m.def(
        "simulate",
        [](const Scenario& sc, std::uint64_t seed, std::uint64_t replica, long horizon, bool steady) {
            RunOptions o;
            o.seed = seed;
            o.replica = replica;
            o.horizon = horizon;
            if (steady) return trace_dict(run_sdkfe(sc, compute_steady_weights(sc), o));
            return trace_dict(run_dkfe(sc, o));
        },
        py::arg("scenario"), py::arg("seed") = 1, py::arg("replica") = 0, py::arg("horizon") = -1,
        py::arg("steady") = false, "One DKFE (or SDKFE with steady=True) run; arrays indexed by tick.");

    m.def(
        "oracle",
        [](const Scenario& sc, const std::string& mode, long replicas, long horizon, std::uint64_t seed) {
            OracleConfig c;
            c.mode = mode == "mc" ? OracleMode::MonteCarlo : OracleMode::Enumeration;
            c.replicas = replicas;
            c.horizon = horizon;
            c.seed = seed;
            OracleReport r = run_oracle(sc, c);
            py::dict d;
            d["pass"] = r.pass();
            d["samples"] = r.samples;
            py::dict rows;
            for (const auto& q : r.rows) rows[py::str(q.quantity)] = py::make_tuple(q.entries, q.max_abs, q.violations);
            d["rows"] = rows;
            return d;
        },
        py::arg("scenario"), py::arg("mode") = "enumeration", py::arg("replicas") = 100000, py::arg("horizon") = -1,
        py::arg("seed") = 1);

    m.def(
        "select_probs",
        [](const Scenario& sc, int node, const std::string& criterion, double grid_step) {
            SelectOptions o;
            o.grid_step = grid_step;
            const int i = node - 1;
            if (i < 0 || i >= sc.nodes()) throw ContractError("node out of range");
            auto found = select_probabilities(sc.model, sc.schemes[i], sc.delays[i],
                                              criterion == "c2" ? ProbCriterion::C2 : ProbCriterion::C1, o);
            py::list out;
            for (const auto& c : found) {
                py::dict d;
                d["probs"] = c.probs;
                d["margin"] = c.margin;
                d["exact_ms_radius"] = c.radius;
                d["rho_open_loop"] = c.rho106;
                d["refined"] = c.refined;
                out.append(d);
            }
            return out;
        },
        py::arg("scenario"), py::arg("node"), py::arg("criterion") = "c1", py::arg("grid_step") = 0.1);
}
