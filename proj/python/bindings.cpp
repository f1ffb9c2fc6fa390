#include "hetpeer/bootstrap.hpp"
#include "hetpeer/classo.hpp"
#include "hetpeer/error.hpp"
#include "hetpeer/npl.hpp"
#include "hetpeer/panel_io.hpp"
#include "hetpeer/pipeline.hpp"
#include "hetpeer/simulation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace hetpeer;

namespace {

// Hand JSON documents to Python through its own json module.
py::object to_python(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

py::dict fit_to_dict(const NplFit& fit) {
    py::dict d;
    d["peer_effect"] = fit.slope.peer_effect;
    d["covariate_slopes"] = fit.slope.covariate_slopes;
    d["fixed_effects"] = fit.fixed_effects;
    d["ccp"] = fit.ccp;
    d["outer_iterations"] = fit.outer_iterations;
    d["converged"] = fit.converged;
    d["final_nll"] = fit.final_nll;
    d["mu_at_bound"] = fit.mu_at_bound;
    d["peer_at_bound"] = fit.peer_at_bound;
    return d;
}

PipelineConfig pipeline_config(int k_max, std::optional<int> k, std::optional<double> lambda,
                               std::optional<double> rho, double rho_scale, int boot_reps, double alpha,
                               std::uint64_t seed, int threads) {
    PipelineConfig c;
    c.k_max = k_max;
    c.fixed_k = k;
    c.lambda = lambda;
    c.rho = rho;
    c.rho_scale = rho_scale;
    c.boot_reps = boot_reps;
    c.alpha = alpha;
    c.seed = seed;
    c.threads = threads;
    return c;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Heterogeneous peer effects in binary games";

    auto base = py::register_exception<Error>(m, "HetpeerError");
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    py::class_<GroupData>(m, "Group")
        .def(py::init<std::string, std::vector<std::string>, Eigen::VectorXd, Eigen::MatrixXd, Network>(),
             py::arg("group_id"), py::arg("individual_ids"), py::arg("y"), py::arg("x"), py::arg("influencers"))
        .def_property_readonly("id", &GroupData::id)
        .def_property_readonly("individual_ids", &GroupData::individual_ids)
        .def_property_readonly("y", &GroupData::y)
        .def_property_readonly("x", &GroupData::x)
        .def_property_readonly("influencers", &GroupData::influencers)
        .def("__len__", &GroupData::size);

    py::class_<Panel>(m, "Panel")
        .def(py::init<std::vector<GroupData>, int>(), py::arg("groups"), py::arg("covariate_dim") = 0)
        .def("__len__", &Panel::size)
        .def("__getitem__",
             [](const Panel& p, std::size_t g) {
                 if (g >= p.size()) throw py::index_error();
                 return p.group(g);
             })
        .def_property_readonly("covariate_dim", &Panel::covariate_dim)
        .def_property_readonly("total_individuals", &Panel::total_individuals)
        .def("subset", &Panel::subset, py::arg("indices"));

    m.def("load_panel",
          py::overload_cast<const std::filesystem::path&, const std::filesystem::path&>(&load_panel),
          py::arg("nodes"), py::arg("edges"));
    m.def("save_panel",
          py::overload_cast<const Panel&, const std::filesystem::path&, const std::filesystem::path&>(
              &save_panel),
          py::arg("panel"), py::arg("nodes"), py::arg("edges"));

    m.def(
        "simulate",
        [](int groups, int n, int max_friends, std::uint64_t seed, int threads) {
            DgpConfig d;
            d.groups = groups;
            d.group_size = n;
            d.max_friends = max_friends;
            d.seed = seed;
            auto sim = generate_panel(d, seed, threads);
            py::dict truth;
            truth["cluster_of_group"] = sim.truth.cluster_of_group;
            truth["coefficients"] = sim.truth.coefficients;
            truth["fixed_effects"] = sim.truth.fixed_effects;
            return py::make_tuple(std::move(sim.panel), truth);
        },
        py::arg("groups") = 100, py::arg("n") = 100, py::arg("max_friends") = 5, py::arg("seed") = 0,
        py::arg("threads") = 1, "Draw a panel from the three-cluster design; returns (panel, truth).");

    m.def(
        "npl_fit",
        [](const Panel& panel, double ccp_tol, int max_outer, double mu_bound) {
            NplConfig c;
            c.outer_tol = ccp_tol;
            c.max_outer = max_outer;
            c.mu_bound = mu_bound;
            return fit_to_dict(npl_fit(panel, c));
        },
        py::arg("panel"), py::arg("ccp_tol") = 1e-5, py::arg("max_outer") = 500, py::arg("mu_bound") = 10.0,
        "Pooled NPL fit with one slope and group fixed effects.");

    m.def(
        "run_pipeline",
        [](const Panel& panel, int k_max, std::optional<int> k, std::optional<double> lambda,
           std::optional<double> rho, double rho_scale, int boot_reps, double alpha, std::uint64_t seed,
           int threads) {
            const auto config = pipeline_config(k_max, k, lambda, rho, rho_scale, boot_reps, alpha, seed, threads);
            PipelineReport report;
            {
                py::gil_scoped_release release;
                report = run_pipeline(panel, config);
            }
            return to_python(report_to_json(panel, report, config));
        },
        py::arg("panel"), py::arg("k_max") = 4, py::arg("k") = py::none(), py::arg("lambda_") = py::none(),
        py::arg("rho") = py::none(), py::arg("rho_scale") = 0.5, py::arg("boot_reps") = 500,
        py::arg("alpha") = 0.05, py::arg("seed") = 0, py::arg("threads") = 1,
        "Full estimation; returns the report as a dict in the CLI JSON layout.");

    m.def("empirical_quantile", &empirical_quantile, py::arg("draws"), py::arg("q"));
    m.def("weighted_geometric_median", &weighted_geometric_median, py::arg("points"), py::arg("weights"), py::arg("start"),
          py::arg("max_iter") = 500, py::arg("tol") = 1e-12);
    m.def("classification_accuracy", &classification_accuracy, py::arg("estimated"), py::arg("truth"));
    m.attr("FORMAT_VERSION") = kFormatVersion;
}
