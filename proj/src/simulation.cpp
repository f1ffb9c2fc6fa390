#include "hetpeer/simulation.hpp"

#include "hetpeer/bootstrap.hpp"
#include "hetpeer/error.hpp"
#include "hetpeer/panel_io.hpp"
#include "hetpeer/parallel.hpp"
#include "hetpeer/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace hetpeer {

std::vector<ClusterCoefficients> default_cluster_coefficients() {
    return {{1.5, Eigen::VectorXd::Constant(1, -1.0), -0.5},
            {0.75, Eigen::VectorXd::Constant(1, 0.0), -0.25},
            {0.0, Eigen::VectorXd::Constant(1, 1.0), 0.0}};
}

void DgpConfig::validate() const {
    if (groups < 1) throw ValidationError("DGP: G must be at least 1");
    if (group_size < 1) throw ValidationError("DGP: n must be at least 1");
    if (max_friends < 0) throw ValidationError("DGP: max friends must be >= 0");
    if (cluster_proportions.empty() || cluster_proportions.size() != cluster_coefficients.size()) {
        throw ValidationError("DGP: one proportion per cluster is required");
    }
    double total = 0.0;
    for (double p : cluster_proportions) {
        if (!(p >= 0.0)) throw ValidationError("DGP: proportions must be non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("DGP: proportions must sum to 1");
    const auto p = cluster_coefficients.front().covariate_slopes.size();
    for (const auto& c : cluster_coefficients) {
        if (!(std::abs(c.peer_effect) < kPeerEffectLimit)) {
            throw ValidationError("DGP: every peer effect must satisfy |peer| < 4");
        }
        if (c.covariate_slopes.size() != p) {
            throw ValidationError("DGP: clusters must share the covariate dimension");
        }
    }
    if (!(mu_sd >= 0.0) || !std::isfinite(x_loading)) throw ValidationError("DGP: invalid fixed-effect law");
    if (!(eq_tol > 0.0)) throw ValidationError("DGP: eq-tol must be positive");
}

std::vector<int> cluster_sizes(int groups, const std::vector<double>& proportions) {
    const auto K = proportions.size();
    std::vector<int> sizes(K);
    std::vector<double> remainder(K);
    int assigned = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const double exact = groups * proportions[k];
        sizes[k] = static_cast<int>(std::floor(exact + 1e-9));
        remainder[k] = exact - sizes[k];
        assigned += sizes[k];
    }
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < groups; ++i, ++assigned) ++sizes[order[i % K]];
    return sizes;
}

SimulatedPanel generate_panel(const DgpConfig& config, std::uint64_t rep_seed, int threads) {
    config.validate();
    const auto sizes = cluster_sizes(config.groups, config.cluster_proportions);
    const auto G = static_cast<std::size_t>(config.groups);
    const int n = config.group_size;
    const auto p = config.cluster_coefficients.front().covariate_slopes.size();
    const int width = static_cast<int>(std::to_string(config.groups - 1).size());

    DgpTruth truth;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        truth.cluster_of_group.insert(truth.cluster_of_group.end(), static_cast<std::size_t>(sizes[k]),
                                      static_cast<int>(k));
        const auto& c = config.cluster_coefficients[k];
        Eigen::VectorXd coef(1 + p);
        coef << c.peer_effect, c.covariate_slopes;
        truth.coefficients.push_back(coef);
    }
    truth.fixed_effects.resize(G);
    truth.equilibrium_ccp.resize(G);

    std::vector<std::optional<GroupData>> groups(G);
    parallel_for(G, threads, [&](std::size_t g) {
        Rng rng = make_stream(rep_seed, g);
        std::normal_distribution<double> normal;
        const auto& coef = config.cluster_coefficients[static_cast<std::size_t>(truth.cluster_of_group[g])];
        const double mu0 = config.mu_sd * normal(rng);
        Eigen::MatrixXd x(n, static_cast<Eigen::Index>(p));
        for (int i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = config.x_loading * mu0 + normal(rng);
        }
        Network net(static_cast<std::size_t>(n));
        std::vector<int> pool(static_cast<std::size_t>(n > 0 ? n - 1 : 0));
        std::uniform_int_distribution<int> count_law(0, config.max_friends);
        for (int i = 0; i < n; ++i) {
            const int want = std::min(count_law(rng), n - 1);
            for (int j = 0, slot = 0; j < n; ++j) {
                if (j != i) pool[static_cast<std::size_t>(slot++)] = j;
            }
            // partial Fisher-Yates: the first `want` slots are a uniform sample
            for (int s = 0; s < want; ++s) {
                const int pick = std::uniform_int_distribution<int>(s, n - 2)(rng);
                std::swap(pool[static_cast<std::size_t>(s)], pool[static_cast<std::size_t>(pick)]);
            }
            net[static_cast<std::size_t>(i)].assign(pool.begin(), pool.begin() + want);
        }
        std::string id = std::to_string(g);
        id = "g" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) ids.push_back("i" + std::to_string(i));
        GroupData draft(id, std::move(ids), Eigen::VectorXd::Zero(n), std::move(x), std::move(net));
        const GroupParams params{coef.intercept + mu0, SlopeParams{coef.peer_effect, coef.covariate_slopes}};
        EquilibriumOptions eq;
        eq.tol = config.eq_tol;
        const auto solved = solve_equilibrium(draft, params, std::nullopt, eq);
        truth.fixed_effects[g] = params.fixed_effect;
        truth.equilibrium_ccp[g] = solved.values;
        groups[g] = draft.with_outcomes(simulate_outcomes(draft, params, solved.values, rng));
    });
    std::vector<GroupData> out;
    out.reserve(G);
    for (auto& g : groups) out.push_back(std::move(*g));
    return {Panel(std::move(out), static_cast<int>(p)), std::move(truth)};
}

double classification_accuracy(const std::vector<int>& estimated, const std::vector<int>& truth) {
    if (estimated.size() != truth.size() || truth.empty()) {
        throw ValidationError("classification_accuracy: label vectors must match and be nonempty");
    }
    int m = 0;
    for (std::size_t g = 0; g < truth.size(); ++g) m = std::max({m, estimated[g] + 1, truth[g] + 1});
    if (m > 8) throw ValidationError("classification_accuracy: at most 8 labels");
    std::vector<std::vector<int>> counts(static_cast<std::size_t>(m), std::vector<int>(static_cast<std::size_t>(m), 0));
    for (std::size_t g = 0; g < truth.size(); ++g) {
        if (estimated[g] >= 0 && truth[g] >= 0) {
            ++counts[static_cast<std::size_t>(estimated[g])][static_cast<std::size_t>(truth[g])];
        }
    }
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    int best = 0;
    do {
        int agree = 0;
        for (int e = 0; e < m; ++e) agree += counts[static_cast<std::size_t>(e)][static_cast<std::size_t>(perm[static_cast<std::size_t>(e)])];
        best = std::max(best, agree);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(truth.size());
}

std::vector<int> match_clusters(const std::vector<Eigen::VectorXd>& estimated,
                                const std::vector<Eigen::VectorXd>& truth) {
    const auto E = estimated.size();
    const auto T = truth.size();
    const auto m = std::max(E, T);
    if (m > 8) throw ValidationError("match_clusters: at most 8 clusters");
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best(T, -1);
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double cost = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            if (perm[t] < E) cost += (estimated[perm[t]] - truth[t]).norm();
        }
        if (cost < best_cost) {
            best_cost = cost;
            for (std::size_t t = 0; t < T; ++t) best[t] = perm[t] < E ? static_cast<int>(perm[t]) : -1;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

CoefficientStats coefficient_stats(const std::vector<double>& errors) {
    CoefficientStats s;
    s.samples = static_cast<int>(errors.size());
    if (errors.empty()) {
        s.median_bias = s.rmse = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    s.median_bias = empirical_quantile(errors, 0.5);
    double sq = 0.0;
    for (double e : errors) sq += e * e;
    s.rmse = std::sqrt(sq / static_cast<double>(errors.size()));
    return s;
}

namespace {

std::uint64_t replication_seed(std::uint64_t seed, int r) {
    return make_stream(seed, static_cast<std::uint64_t>(r))();
}

// Estimates and inference for one cluster, aligned to true cluster t.
void record_cluster(ReplicationRecord& rec, std::size_t t, const NplFit& fit,
                    const std::vector<InferenceReport>& inference, const Eigen::VectorXd& truth) {
    rec.original[t] = fit.slope.to_vector();
    if (inference.empty()) return;
    Eigen::VectorXd deb(truth.size());
    std::vector<bool> cov(static_cast<std::size_t>(truth.size()));
    for (Eigen::Index j = 0; j < truth.size(); ++j) {
        const auto& inf = inference[static_cast<std::size_t>(j)];
        deb[j] = inf.debiased;
        cov[static_cast<std::size_t>(j)] = inf.ci_lower <= truth[j] && truth[j] <= inf.ci_upper;
    }
    rec.debiased[t] = deb;
    rec.covered[t] = cov;
}

McSummary aggregate(const McConfig& config, std::vector<ReplicationRecord> records,
                    const std::vector<Eigen::VectorXd>& truth, int k_max) {
    McSummary s;
    s.study = config.study;
    s.groups = config.dgp.groups;
    s.group_size = config.dgp.group_size;
    s.replications = config.replications;
    s.k_max = k_max;
    s.true_k = static_cast<int>(truth.size());
    s.true_coefficients = truth;
    s.k_frequency.assign(static_cast<std::size_t>(std::max(k_max, 0)), 0.0);
    int ok = 0;
    double acc = 0.0;
    for (const auto& r : records) {
        if (!r.failure.empty()) {
            ++s.failures;
            continue;
        }
        ++ok;
        if (r.selected_k >= 1 && r.selected_k <= k_max) s.k_frequency[static_cast<std::size_t>(r.selected_k - 1)] += 1.0;
        if (r.accuracy) {
            acc += *r.accuracy;
            ++s.accuracy_samples;
        }
    }
    for (auto& f : s.k_frequency) f = ok > 0 ? f / ok : 0.0;
    s.accuracy = s.accuracy_samples > 0 ? acc / s.accuracy_samples : std::numeric_limits<double>::quiet_NaN();

    const auto d = truth.empty() ? 0 : static_cast<std::size_t>(truth.front().size());
    for (std::size_t t = 0; t < truth.size(); ++t) {
        ClusterStudyStats cs;
        for (std::size_t j = 0; j < d; ++j) {
            std::vector<double> orig, deb, pooled;
            int covered = 0, cov_n = 0;
            for (const auto& r : records) {
                if (!r.failure.empty()) continue;
                if (r.pooled.size() > 0) pooled.push_back(r.pooled[static_cast<Eigen::Index>(j)] - truth[t][static_cast<Eigen::Index>(j)]);
                if (t >= r.original.size() || r.original[t].size() == 0) continue;
                orig.push_back(r.original[t][static_cast<Eigen::Index>(j)] - truth[t][static_cast<Eigen::Index>(j)]);
                if (r.debiased[t].size() > 0) {
                    deb.push_back(r.debiased[t][static_cast<Eigen::Index>(j)] - truth[t][static_cast<Eigen::Index>(j)]);
                    covered += r.covered[t][j] ? 1 : 0;
                    ++cov_n;
                }
            }
            cs.original.push_back(coefficient_stats(orig));
            cs.debiased.push_back(coefficient_stats(deb));
            cs.pooled.push_back(coefficient_stats(pooled));
            cs.coverage.push_back(cov_n > 0 ? covered / static_cast<double>(cov_n)
                                            : std::numeric_limits<double>::quiet_NaN());
        }
        s.clusters.push_back(std::move(cs));
    }
    s.records = std::move(records);
    return s;
}

void check_mc_config(const McConfig& config) {
    config.dgp.validate();
    config.pipeline.validate();
    if (config.replications < 1) throw ValidationError("Monte Carlo: reps must be at least 1");
    if (config.threads < 1) throw ValidationError("Monte Carlo: threads must be at least 1");
}

} // namespace

McSummary run_monte_carlo(const McConfig& config) {
    check_mc_config(config);
    const auto start = std::chrono::steady_clock::now();
    const auto R = static_cast<std::size_t>(config.replications);
    std::vector<ReplicationRecord> records(R);
    std::vector<Eigen::VectorXd> truth_coef;
    for (const auto& c : config.dgp.cluster_coefficients) {
        Eigen::VectorXd v(1 + c.covariate_slopes.size());
        v << c.peer_effect, c.covariate_slopes;
        truth_coef.push_back(v);
    }
    const auto true_k = static_cast<int>(truth_coef.size());

    parallel_for(R, config.threads, [&](std::size_t r) {
        auto& rec = records[r];
        rec.seed = replication_seed(config.dgp.seed, static_cast<int>(r));
        try {
            const auto sim = generate_panel(config.dgp, rec.seed);
            PipelineConfig pc = config.pipeline;
            pc.seed = rec.seed;
            const auto report = run_pipeline(sim.panel, pc);
            rec.selected_k = report.selected_k;
            for (const auto& ic : report.ic.records) {
                if (ic.k == true_k && ic.ok()) {
                    rec.accuracy = classification_accuracy(ic.solution.membership, sim.truth.cluster_of_group);
                }
            }
            rec.pooled = npl_fit(sim.panel, pc.npl()).slope.to_vector();
            rec.original.assign(truth_coef.size(), Eigen::VectorXd());
            rec.debiased.assign(truth_coef.size(), Eigen::VectorXd());
            rec.covered.assign(truth_coef.size(), {});
            if (report.selected_k == true_k) {
                std::vector<Eigen::VectorXd> estimates;
                std::vector<std::size_t> source;
                for (std::size_t c = 0; c < report.clusters.size(); ++c) {
                    if (report.clusters[c].fit && report.clusters[c].fit->converged) {
                        estimates.push_back(report.clusters[c].fit->slope.to_vector());
                        source.push_back(c);
                    }
                }
                const auto match = match_clusters(estimates, truth_coef);
                for (std::size_t t = 0; t < truth_coef.size(); ++t) {
                    if (match[t] < 0) continue;
                    const auto& cr = report.clusters[source[static_cast<std::size_t>(match[t])]];
                    record_cluster(rec, t, *cr.fit, cr.inference, truth_coef[t]);
                }
            }
        } catch (const Error& e) {
            rec.failure = e.what();
        }
    });

    auto summary = aggregate(config, std::move(records), truth_coef,
                             config.pipeline.fixed_k ? *config.pipeline.fixed_k : config.pipeline.k_max);
    summary.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return summary;
}

McSummary run_oracle_study(const McConfig& config) {
    check_mc_config(config);
    const auto start = std::chrono::steady_clock::now();
    const auto R = static_cast<std::size_t>(config.replications);
    std::vector<ReplicationRecord> records(R);
    std::vector<Eigen::VectorXd> truth_coef;
    for (const auto& c : config.dgp.cluster_coefficients) {
        Eigen::VectorXd v(1 + c.covariate_slopes.size());
        v << c.peer_effect, c.covariate_slopes;
        truth_coef.push_back(v);
    }

    parallel_for(R, config.threads, [&](std::size_t r) {
        auto& rec = records[r];
        rec.seed = replication_seed(config.dgp.seed, static_cast<int>(r));
        try {
            const auto sim = generate_panel(config.dgp, rec.seed);
            PipelineConfig pc = config.pipeline;
            pc.seed = rec.seed;
            rec.selected_k = static_cast<int>(truth_coef.size());
            rec.accuracy = 1.0;
            rec.original.assign(truth_coef.size(), Eigen::VectorXd());
            rec.debiased.assign(truth_coef.size(), Eigen::VectorXd());
            rec.covered.assign(truth_coef.size(), {});
            for (std::size_t t = 0; t < truth_coef.size(); ++t) {
                std::vector<std::size_t> members;
                for (std::size_t g = 0; g < sim.panel.size(); ++g) {
                    if (sim.truth.cluster_of_group[g] == static_cast<int>(t)) members.push_back(g);
                }
                if (members.empty()) continue;
                const auto scope = sim.panel.subset(members);
                const auto fit = npl_fit(scope, pc.npl());
                if (!fit.converged) throw ConvergenceError("oracle fit did not converge");
                std::vector<InferenceReport> inference;
                if (pc.boot_reps > 0) {
                    inference = bootstrap_coordinates(scope, fit, pc.bootstrap(static_cast<int>(t)));
                }
                record_cluster(rec, t, fit, inference, truth_coef[t]);
            }
        } catch (const Error& e) {
            rec.failure = e.what();
        }
    });

    auto summary = aggregate(config, std::move(records), truth_coef, static_cast<int>(truth_coef.size()));
    summary.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return summary;
}

namespace {

nlohmann::json stat_json(const CoefficientStats& s) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"samples", s.samples}, {"median_bias", num(s.median_bias)}, {"rmse", num(s.rmse)}};
}

std::string coef_name(std::size_t j) { return j == 0 ? "peer" : "x_" + std::to_string(j); }

std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

} // namespace

nlohmann::json summary_to_json(const McSummary& s, bool include_runtime) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["study"] = s.study;
    j["G"] = s.groups;
    j["n"] = s.group_size;
    j["replications"] = s.replications;
    j["failures"] = s.failures;
    j["k_max"] = s.k_max;
    j["true_k"] = s.true_k;
    j["k_frequency"] = s.k_frequency;
    j["accuracy"] = std::isfinite(s.accuracy) ? nlohmann::json(s.accuracy) : nlohmann::json(nullptr);
    j["accuracy_samples"] = s.accuracy_samples;
    nlohmann::json clusters = nlohmann::json::array();
    for (std::size_t t = 0; t < s.clusters.size(); ++t) {
        const auto& cs = s.clusters[t];
        nlohmann::json coefs = nlohmann::json::array();
        for (std::size_t c = 0; c < cs.original.size(); ++c) {
            coefs.push_back({{"name", coef_name(c)},
                             {"truth", s.true_coefficients[t][static_cast<Eigen::Index>(c)]},
                             {"pooled", stat_json(cs.pooled[c])},
                             {"original", stat_json(cs.original[c])},
                             {"debiased", stat_json(cs.debiased[c])},
                             {"coverage", std::isfinite(cs.coverage[c]) ? nlohmann::json(cs.coverage[c])
                                                                       : nlohmann::json(nullptr)}});
        }
        clusters.push_back({{"cluster", t + 1}, {"coefficients", std::move(coefs)}});
    }
    j["clusters"] = std::move(clusters);
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& r : s.records) {
        nlohmann::json e{{"seed", r.seed}, {"selected_k", r.selected_k}};
        if (r.accuracy) e["accuracy"] = *r.accuracy;
        if (!r.failure.empty()) e["failure"] = r.failure;
        reps.push_back(std::move(e));
    }
    j["replication_records"] = std::move(reps);
    if (include_runtime) j["runtime_seconds"] = s.runtime_seconds;
    return j;
}

void write_selection_csv(std::ostream& out, const McSummary& s) {
    out << "G,n,reps,failures";
    for (std::size_t k = 0; k < s.k_frequency.size(); ++k) out << ",k" << k + 1;
    out << ",accuracy,format_version\n";
    out << s.groups << ',' << s.group_size << ',' << s.replications << ',' << s.failures;
    for (double f : s.k_frequency) out << ',' << format_double(f);
    out << ',' << csv_number(s.accuracy) << ',' << kFormatVersion << '\n';
}

void write_estimates_csv(std::ostream& out, const McSummary& s) {
    out << "G,n,cluster,coefficient,truth,pooled_bias,pooled_rmse,original_bias,original_rmse,"
           "debiased_bias,debiased_rmse,coverage,samples,format_version\n";
    for (std::size_t t = 0; t < s.clusters.size(); ++t) {
        const auto& cs = s.clusters[t];
        for (std::size_t c = 0; c < cs.original.size(); ++c) {
            out << s.groups << ',' << s.group_size << ',' << t + 1 << ',' << coef_name(c) << ','
                << format_double(s.true_coefficients[t][static_cast<Eigen::Index>(c)]) << ','
                << csv_number(cs.pooled[c].median_bias) << ',' << csv_number(cs.pooled[c].rmse) << ','
                << csv_number(cs.original[c].median_bias) << ',' << csv_number(cs.original[c].rmse) << ','
                << csv_number(cs.debiased[c].median_bias) << ',' << csv_number(cs.debiased[c].rmse) << ','
                << csv_number(cs.coverage[c]) << ',' << cs.original[c].samples << ','
                << kFormatVersion << '\n';
        }
    }
}

void write_truth_json(std::ostream& out, const Panel& panel, const DgpTruth& truth,
                      const DgpConfig& config, std::uint64_t seed) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["seed"] = seed;
    j["G"] = config.groups;
    j["n"] = config.group_size;
    j["max_friends"] = config.max_friends;
    j["cluster_proportions"] = config.cluster_proportions;
    nlohmann::json clusters = nlohmann::json::array();
    for (const auto& c : config.cluster_coefficients) {
        clusters.push_back({{"peer_effect", c.peer_effect},
                            {"covariate_slopes", std::vector<double>(c.covariate_slopes.data(),
                                                                     c.covariate_slopes.data() + c.covariate_slopes.size())},
                            {"intercept", c.intercept}});
    }
    j["clusters"] = std::move(clusters);
    nlohmann::json groups = nlohmann::json::array();
    for (std::size_t g = 0; g < panel.size(); ++g) {
        groups.push_back({{"group_id", panel.group(g).id()},
                          {"cluster", truth.cluster_of_group[g]},
                          {"fixed_effect", truth.fixed_effects[g]}});
    }
    j["groups"] = std::move(groups);
    out << j.dump(2) << '\n';
}

} // namespace hetpeer
