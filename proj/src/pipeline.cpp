#include "hetpeer/pipeline.hpp"

#include "hetpeer/error.hpp"
#include "hetpeer/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace hetpeer {

namespace {

template <class F>
auto staged(const char* stage, F&& body) {
    try {
        return body();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string(stage) + ": " + e.what());
    } catch (const ConvergenceError& e) {
        throw ConvergenceError(std::string(stage) + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(std::string(stage) + ": " + e.what());
    }
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

nlohmann::json number(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

} // namespace

void PipelineConfig::validate() const {
    if (k_max < 1) throw ValidationError("k-max must be at least 1");
    if (fixed_k && *fixed_k < 1) throw ValidationError("fixed K must be at least 1");
    if (lambda && !(*lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
    if (rho && !(*rho >= 0.0)) throw ValidationError("rho must be >= 0");
    if (!(rho_scale >= 0.0)) throw ValidationError("rho-scale must be >= 0");
    if (!(ccp_tol > 0.0)) throw ValidationError("ccp-tol must be positive");
    if (!(eq_tol > 0.0)) throw ValidationError("eq-tol must be positive");
    if (max_outer < 1) throw ValidationError("max-outer must be at least 1");
    if (boot_reps < 0 || boot_reps == 1) throw ValidationError("boot-reps must be 0 or at least 2");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
    if (!(mu_bound > 0.0)) throw ValidationError("mu-bound must be positive");
    if (threads < 1) throw ValidationError("threads must be at least 1");
}

NplConfig PipelineConfig::npl() const {
    NplConfig c;
    c.outer_tol = ccp_tol;
    c.max_outer = max_outer;
    c.mu_bound = mu_bound;
    c.polish_tol = eq_tol;
    c.threads = threads;
    return c;
}

ClassoConfig PipelineConfig::classo() const {
    ClassoConfig c;
    c.rho = rho;
    c.rho_scale = rho_scale;
    c.seed = seed;
    c.mu_bound = mu_bound;
    c.threads = threads;
    return c;
}

BootstrapConfig PipelineConfig::bootstrap(int cluster) const {
    BootstrapConfig c;
    c.replications = boot_reps;
    c.alpha = alpha;
    c.seed = mix64(mix64(seed) + static_cast<std::uint64_t>(cluster) + 1);
    c.threads = threads;
    c.refit = npl();
    c.refit.polish = false;
    return c;
}

PipelineReport run_pipeline(const Panel& panel, const PipelineConfig& config) {
    config.validate();
    if (panel.empty()) throw ValidationError("pipeline: the panel has no groups");
    PipelineReport report;

    NplConfig group_config = config.npl();
    report.first_step = staged("first step", [&] { return npl_fit_per_group(panel, group_config); });
    for (std::size_t g = 0; g < panel.size(); ++g) {
        if (!report.first_step.usable(g)) {
            report.warnings.push_back("group " + panel.group(g).id() + " excluded from classification: " +
                                      (report.first_step.failures[g].empty()
                                           ? std::string("first-step fit did not converge")
                                           : report.first_step.failures[g]));
        }
    }

    SelectionConfig selection;
    selection.k_max = config.fixed_k ? *config.fixed_k : config.k_max;
    selection.lambda = config.lambda;
    selection.classo = config.classo();
    selection.npl = config.npl();
    report.ic = staged("model selection", [&] {
        if (!config.fixed_k) return select_k(panel, report.first_step, selection);
        IcTable table;
        table.lambda = config.lambda ? *config.lambda : default_ic_lambda(panel.mean_group_size());
        table.slope_dim = 1 + panel.covariate_dim();
        table.records.push_back(evaluate_k(panel, report.first_step, *config.fixed_k, table.lambda, selection));
        table.selected_k = argmin_ic(table.records);
        if (table.selected_k == 0) {
            throw ConvergenceError("K = " + std::to_string(*config.fixed_k) + ": " + table.records[0].failure);
        }
        return table;
    });
    for (const auto& r : report.ic.records) {
        if (!r.ok()) report.warnings.push_back("K = " + std::to_string(r.k) + " failed: " + r.failure);
    }

    const auto& chosen = report.ic.selected();
    report.selected_k = chosen.k;
    report.membership = chosen.solution.membership;
    for (int c = 0; c < chosen.k; ++c) {
        ClusterReport cr;
        cr.cluster = c;
        cr.groups = chosen.solution.members(c);
        cr.fit = chosen.post_fits[static_cast<std::size_t>(c)];
        if (!cr.fit) {
            cr.failure = "empty cluster";
        } else if (!cr.fit->converged) {
            cr.failure = "post-classification fit did not converge";
        } else if (config.boot_reps > 0) {
            try {
                cr.inference = bootstrap_coordinates(panel.subset(cr.groups), *cr.fit, config.bootstrap(c));
                if (!cr.inference.empty() && !cr.inference.front().reliable) {
                    report.warnings.push_back("cluster " + std::to_string(c) +
                                              ": more than 10% of bootstrap replicates failed");
                }
            } catch (const Error& e) {
                cr.failure = std::string("bootstrap: ") + e.what();
            }
        }
        if (!cr.failure.empty()) report.warnings.push_back("cluster " + std::to_string(c) + ": " + cr.failure);
        report.clusters.push_back(std::move(cr));
    }
    return report;
}

nlohmann::json config_to_json(const PipelineConfig& config) {
    nlohmann::json j;
    j["k_max"] = config.k_max;
    j["fixed_k"] = config.fixed_k ? nlohmann::json(*config.fixed_k) : nlohmann::json(nullptr);
    j["lambda"] = config.lambda ? nlohmann::json(*config.lambda) : nlohmann::json("auto");
    j["rho"] = config.rho ? nlohmann::json(*config.rho) : nlohmann::json("auto");
    j["rho_scale"] = config.rho_scale;
    j["ccp_tol"] = config.ccp_tol;
    j["eq_tol"] = config.eq_tol;
    j["max_outer"] = config.max_outer;
    j["boot_reps"] = config.boot_reps;
    j["alpha"] = config.alpha;
    j["mu_bound"] = config.mu_bound;
    j["seed"] = config.seed;
    return j;
}

nlohmann::json report_to_json(const Panel& panel, const PipelineReport& report,
                              const PipelineConfig& config) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["config"] = config_to_json(config);
    j["data"] = {{"groups", panel.size()},
                 {"individuals", panel.total_individuals()},
                 {"covariates", panel.covariate_dim()},
                 {"mean_group_size", panel.mean_group_size()}};

    nlohmann::json first = nlohmann::json::array();
    for (std::size_t g = 0; g < panel.size(); ++g) {
        const auto& f = report.first_step.fits[g];
        nlohmann::json e;
        e["group_id"] = panel.group(g).id();
        e["usable"] = report.first_step.usable(g);
        if (!report.first_step.failures[g].empty()) {
            e["failure"] = report.first_step.failures[g];
        } else {
            e["slope"] = vector_json(f.slope.to_vector());
            e["fixed_effect"] = number(f.fixed_effects.empty() ? NAN : f.fixed_effects[0]);
            e["fixed_effect_at_bound"] = !f.mu_at_bound.empty() && f.mu_at_bound[0];
            e["outer_iterations"] = f.outer_iterations;
        }
        first.push_back(std::move(e));
    }
    j["first_step"] = std::move(first);

    nlohmann::json ic = nlohmann::json::array();
    for (const auto& r : report.ic.records) {
        nlohmann::json e;
        e["k"] = r.k;
        if (!r.ok()) {
            e["failure"] = r.failure;
        } else {
            e["ic"] = r.ic;
            e["fit_term"] = r.fit_term;
            e["penalty"] = r.penalty;
            e["rho"] = r.solution.rho;
            e["sweeps"] = r.solution.sweeps;
            e["converged"] = r.solution.converged;
            e["empty_clusters"] = std::count(r.solution.empty_clusters.begin(), r.solution.empty_clusters.end(), true);
            nlohmann::json centers = nlohmann::json::array();
            for (const auto& c : r.solution.centers) centers.push_back(vector_json(c));
            e["centers"] = std::move(centers);
        }
        ic.push_back(std::move(e));
    }
    j["model_selection"] = {{"lambda", report.ic.lambda},
                            {"slope_dim", report.ic.slope_dim},
                            {"selected_k", report.selected_k},
                            {"table", std::move(ic)}};

    nlohmann::json membership = nlohmann::json::object();
    for (std::size_t g = 0; g < panel.size(); ++g) {
        membership[panel.group(g).id()] = report.membership[g];
    }
    j["membership"] = std::move(membership);

    nlohmann::json clusters = nlohmann::json::array();
    for (const auto& cr : report.clusters) {
        nlohmann::json e;
        e["cluster"] = cr.cluster;
        nlohmann::json ids = nlohmann::json::array();
        for (auto g : cr.groups) ids.push_back(panel.group(g).id());
        e["groups"] = std::move(ids);
        if (cr.fit) {
            e["estimate"] = vector_json(cr.fit->slope.to_vector());
            e["converged"] = cr.fit->converged;
            e["outer_iterations"] = cr.fit->outer_iterations;
            e["peer_effect_at_bound"] = cr.fit->peer_at_bound;
            e["rank_deficient"] = cr.fit->rank_deficient;
            e["nll"] = cr.fit->final_nll;
        }
        nlohmann::json inference = nlohmann::json::array();
        for (const auto& rep : cr.inference) {
            std::vector<double> sorted = rep.bootstrap_draws;
            std::sort(sorted.begin(), sorted.end());
            double mean = 0.0;
            for (double d : sorted) mean += d / static_cast<double>(sorted.size());
            inference.push_back({{"contrast", vector_json(rep.contrast)},
                                 {"point", rep.point},
                                 {"debiased", rep.debiased},
                                 {"ci", {rep.ci_lower, rep.ci_upper}},
                                 {"alpha", rep.alpha},
                                 {"B", rep.replications},
                                 {"failures", rep.failures},
                                 {"reliable", rep.reliable},
                                 {"draws_summary",
                                  {{"count", sorted.size()},
                                   {"mean", mean},
                                   {"min", sorted.front()},
                                   {"median", empirical_quantile(sorted, 0.5)},
                                   {"max", sorted.back()}}}});
        }
        e["inference"] = std::move(inference);
        if (!cr.failure.empty()) e["failure"] = cr.failure;
        clusters.push_back(std::move(e));
    }
    j["clusters"] = std::move(clusters);
    j["warnings"] = report.warnings;
    return j;
}

void write_text_report(std::ostream& out, const Panel& panel, const PipelineReport& report) {
    const int p = panel.covariate_dim();
    out << "groups " << panel.size() << ", individuals " << panel.total_individuals()
        << ", selected K = " << report.selected_k << "\n\n";
    out << std::setw(4) << "K" << std::setw(16) << "IC" << std::setw(16) << "fit" << std::setw(16)
        << "penalty" << '\n';
    for (const auto& r : report.ic.records) {
        out << std::setw(4) << r.k;
        if (r.ok()) {
            out << std::setw(16) << std::setprecision(8) << r.ic << std::setw(16) << r.fit_term
                << std::setw(16) << r.penalty;
        } else {
            out << "  failed: " << r.failure;
        }
        out << '\n';
    }
    out << '\n'
        << std::setw(8) << "cluster" << std::setw(8) << "groups" << std::setw(12) << "coef"
        << std::setw(12) << "estimate" << std::setw(12) << "debiased" << std::setw(12) << "ci_lo"
        << std::setw(12) << "ci_hi" << '\n';
    out << std::fixed << std::setprecision(4);
    for (const auto& cr : report.clusters) {
        if (!cr.fit) continue;
        const auto est = cr.fit->slope.to_vector();
        for (int j = 0; j <= p; ++j) {
            const std::string name = j == 0 ? "peer" : "x_" + std::to_string(j);
            out << std::setw(8) << cr.cluster << std::setw(8) << cr.groups.size() << std::setw(12)
                << name << std::setw(12) << est[j];
            if (static_cast<std::size_t>(j) < cr.inference.size()) {
                const auto& inf = cr.inference[static_cast<std::size_t>(j)];
                out << std::setw(12) << inf.debiased << std::setw(12) << inf.ci_lower
                    << std::setw(12) << inf.ci_upper;
            }
            out << '\n';
        }
    }
    out.unsetf(std::ios::floatfield);
    for (const auto& w : report.warnings) out << "warning: " << w << '\n';
}

} // namespace hetpeer
