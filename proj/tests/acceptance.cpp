// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 on any failure.
#include "hetpeer/classo.hpp"
#include "hetpeer/equilibrium.hpp"
#include "hetpeer/logit.hpp"
#include "hetpeer/npl.hpp"
#include "hetpeer/pipeline.hpp"
#include "hetpeer/simulation.hpp"
#include "test_support.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>

using namespace hetpeer;

namespace {

// Tolerances, pinned.
constexpr double kDerivRelTol = 1e-6;
constexpr double kEqResidual = 1e-10;
constexpr double kEqAgreement = 1e-8;
constexpr double kContractionSlack = 1e-12;
constexpr double kOracleTol = 1e-6;
constexpr double kReductionTol = 1e-6;
constexpr double kTraceSlack = 1e-12;
constexpr double kSelectFreq = 0.90;
constexpr double kAccuracy = 0.85;
constexpr double kMedianBias = 0.02;
constexpr double kCoverFullLo = 0.91, kCoverFullHi = 0.97;
constexpr double kCoverFastLo = 0.88, kCoverFastHi = 0.99;
constexpr double kPooledRatio = 5.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

double max_peer(Rng& rng) { return 3.9 * (2.0 * uniform_open(rng) - 1.0); }

// ---------------------------------------------------------------- criterion 1

Outcome derivatives() {
    Rng rng(101);
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        const int n = 2 + static_cast<int>(rng() % 49);
        const int p = static_cast<int>(rng() % 5);
        const auto group = testing::random_group(n, p, rng);
        const Eigen::VectorXd ccp = testing::random_ccp(n, rng);
        std::normal_distribution<double> normal;
        GroupParams params;
        params.fixed_effect = normal(rng);
        params.slope.peer_effect = max_peer(rng);
        params.slope.covariate_slopes.resize(p);
        for (int k = 0; k < p; ++k) params.slope.covariate_slopes[k] = normal(rng);

        const auto flat = [&](const Eigen::VectorXd& v) {
            GroupParams q;
            q.fixed_effect = v[0];
            q.slope = SlopeParams::from_vector(v.tail(v.size() - 1));
            return q;
        };
        Eigen::VectorXd v(2 + p);
        v << params.fixed_effect, params.slope.to_vector();
        const auto gh = group_nll_grad_hess(group, params, ccp);
        const double h = 1e-5;
        Eigen::VectorXd fd_grad(v.size());
        Eigen::MatrixXd fd_hess(v.size(), v.size());
        for (Eigen::Index j = 0; j < v.size(); ++j) {
            Eigen::VectorXd up = v, down = v;
            up[j] += h;
            down[j] -= h;
            fd_grad[j] = (group_nll(group, flat(up), ccp) - group_nll(group, flat(down), ccp)) / (2 * h);
            fd_hess.col(j) = (group_nll_grad_hess(group, flat(up), ccp).gradient -
                              group_nll_grad_hess(group, flat(down), ccp).gradient) /
                             (2 * h);
        }
        const double ge = (gh.gradient - fd_grad).lpNorm<Eigen::Infinity>() /
                          std::max(fd_grad.lpNorm<Eigen::Infinity>(), 1e-2);
        const double he = (gh.hessian - fd_hess).lpNorm<Eigen::Infinity>() /
                          std::max(fd_hess.lpNorm<Eigen::Infinity>(), 1e-2);
        worst = std::max({worst, ge, he});
    }
    return {worst < kDerivRelTol, "100 instances, max relative error " + fmt(worst) + " (< " + fmt(kDerivRelTol) + ")"};
}

// ---------------------------------------------------------------- criterion 2

// Best response written out from the model definition.
Eigen::VectorXd best_response(const GroupData& g, const GroupParams& params, const Eigen::VectorXd& ccp) {
    Eigen::VectorXd out(g.size());
    for (int i = 0; i < g.size(); ++i) {
        const auto& friends = g.influencers()[static_cast<std::size_t>(i)];
        double belief = 0.0;
        for (int j : friends) belief += ccp[j];
        if (!friends.empty()) belief /= static_cast<double>(friends.size());
        double index = params.fixed_effect + params.slope.peer_effect * belief;
        for (int k = 0; k < g.covariate_dim(); ++k) index += g.x()(i, k) * params.slope.covariate_slopes[k];
        out[i] = 1.0 / (1.0 + std::exp(-index));
    }
    return out;
}

Outcome equilibrium() {
    Rng rng(202);
    double worst_residual = 0.0, worst_spread = 0.0, worst_excess = -1.0;
    std::normal_distribution<double> normal;
    for (int inst = 0; inst < 100; ++inst) {
        const int n = 2 + static_cast<int>(rng() % 99);
        const int p = static_cast<int>(rng() % 4);
        const auto group = testing::random_group(n, p, rng, "g", 8);
        GroupParams params;
        params.fixed_effect = normal(rng);
        params.slope.peer_effect = max_peer(rng);
        params.slope.covariate_slopes.resize(p);
        for (int k = 0; k < p; ++k) params.slope.covariate_slopes[k] = normal(rng);

        const auto base = solve_equilibrium(group, params);
        worst_residual = std::max(worst_residual,
                                  (best_response(group, params, base.values) - base.values).lpNorm<Eigen::Infinity>());
        for (int s = 0; s < 10; ++s) {
            const auto other = solve_equilibrium(group, params, testing::random_ccp(n, rng));
            worst_spread = std::max(worst_spread, (other.values - base.values).lpNorm<Eigen::Infinity>());
        }

        // observed contraction along a Picard path from a random start
        Eigen::VectorXd prev = testing::random_ccp(n, rng);
        Eigen::VectorXd cur = best_response(group, params, prev);
        const double bound = std::abs(params.slope.peer_effect) / 4.0 + kContractionSlack;
        for (int it = 0; it < 200; ++it) {
            const double step = (cur - prev).lpNorm<Eigen::Infinity>();
            if (step < 1e-8) break;
            Eigen::VectorXd next = best_response(group, params, cur);
            worst_excess = std::max(worst_excess, (next - cur).lpNorm<Eigen::Infinity>() / step - bound);
            prev = std::move(cur);
            cur = std::move(next);
        }
    }
    const bool pass = worst_residual < kEqResidual && worst_spread < kEqAgreement && worst_excess <= 0.0;
    return {pass, "max residual " + fmt(worst_residual) + " (< " + fmt(kEqResidual) + "), max start spread " +
                      fmt(worst_spread) + " (< " + fmt(kEqAgreement) + "), max contraction excess over |peer|/4 " +
                      fmt(worst_excess) + " (<= " + fmt(kContractionSlack) + " slack)"};
}

// ---------------------------------------------------------------- criterion 3

Outcome oracle_equivalence() {
    double worst = 0.0;
    bool converged = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = make_stream(303, seed);
        const int groups = 2 + static_cast<int>(rng() % 5);
        const int p = 1 + static_cast<int>(rng() % 3);
        std::normal_distribution<double> normal;
        Eigen::VectorXd beta(p);
        for (int k = 0; k < p; ++k) beta[k] = normal(rng);
        std::vector<GroupData> gs;
        for (int g = 0; g < groups; ++g) {
            const int n = 20 + static_cast<int>(rng() % 40);
            Eigen::MatrixXd x(n, p);
            Eigen::VectorXd y(n);
            const double mu = normal(rng);
            for (int i = 0; i < n; ++i) {
                for (int k = 0; k < p; ++k) x(i, k) = normal(rng);
                y[i] = mu + x.row(i).dot(beta) > logistic_draw(rng) ? 1.0 : 0.0;
            }
            gs.push_back(testing::group_without_network("g" + std::to_string(g), y, x));
        }
        const Panel panel(std::move(gs));
        NplConfig config;
        config.fixed_peer_effect = 0.0;
        const auto fit = npl_fit(panel, config);
        const auto oracle = testing::fe_logit_oracle(panel);
        converged = converged && fit.converged;
        worst = std::max(worst, (fit.slope.covariate_slopes - oracle.beta).lpNorm<Eigen::Infinity>());
        for (std::size_t g = 0; g < panel.size(); ++g) {
            worst = std::max(worst, std::abs(fit.fixed_effects[g] - oracle.mu[g]));
        }
    }
    return {converged && worst < kOracleTol,
            "20 panels, max |npl - oracle| " + fmt(worst) + " (< " + fmt(kOracleTol) + ")"};
}

// ---------------------------------------------------------------- criterion 4

Outcome classo_reduction() {
    double worst_gap = 0.0, worst_rise = 0.0;
    int instances = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        DgpConfig d;
        d.groups = 30;
        d.group_size = 100;
        const auto sim = generate_panel(d, 400 + seed);
        const auto first = npl_fit_per_group(sim.panel);
        for (int k = 1; k <= 4; ++k) {
            ClassoConfig zero;
            zero.rho = 0.0;
            zero.seed = seed;
            const auto flat = classo_fit(sim.panel, first, k, zero);
            for (std::size_t g = 0; g < sim.panel.size(); ++g) {
                if (!first.usable(g)) continue;
                worst_gap = std::max(worst_gap,
                                     (flat.per_group_slopes[g] - first.fits[g].slope.to_vector()).norm());
            }
            ClassoConfig penalized;
            penalized.seed = seed;
            for (const auto& sol : {flat, classo_fit(sim.panel, first, k, penalized)}) {
                ++instances;
                for (std::size_t s = 1; s < sol.objective_trace.size(); ++s) {
                    const double prev = sol.objective_trace[s - 1];
                    worst_rise = std::max(worst_rise, (sol.objective_trace[s] - prev) / std::max(std::abs(prev), 1e-300));
                }
            }
        }
    }
    return {worst_gap < kReductionTol && worst_rise <= kTraceSlack,
            "max ||theta(rho=0) - theta_npl|| " + fmt(worst_gap) + " (< " + fmt(kReductionTol) +
                "), max relative trace increase " + fmt(worst_rise) + " over " + std::to_string(instances) +
                " runs (<= " + fmt(kTraceSlack) + ")"};
}

// ---------------------------------------------------------------- criteria 5 and 7

McSummary table1_study(int reps, int threads) {
    McConfig c;
    c.study = "table1";
    c.replications = reps;
    c.pipeline.k_max = 4;
    c.pipeline.boot_reps = 0;
    c.threads = threads;
    return run_monte_carlo(c);
}

Outcome selection(const McSummary& s) {
    const double freq = s.k_frequency.size() >= 3 ? s.k_frequency[2] : 0.0;
    return {freq >= kSelectFreq && s.accuracy >= kAccuracy,
            std::to_string(s.replications) + " reps (" + std::to_string(s.failures) + " failed), K=3 frequency " +
                fmt(freq) + " (>= " + fmt(kSelectFreq) + "), mean accuracy " + fmt(s.accuracy) + " (>= " +
                fmt(kAccuracy) + ")"};
}

Outcome pooled_bias(const McSummary& s) {
    if (s.clusters.empty() || s.clusters[0].original.empty() || s.clusters[0].original[0].samples == 0) {
        return {false, "no replication selected K = 3"};
    }
    const double pooled = s.clusters[0].pooled[0].median_bias;
    const double post = s.clusters[0].original[0].median_bias;
    const double ratio = std::abs(pooled) / std::abs(post);
    return {ratio >= kPooledRatio, "cluster 1 peer effect median bias: pooled " + fmt(pooled) +
                                       ", post-classification " + fmt(post) + ", ratio " + fmt(ratio) + " (>= " +
                                       fmt(kPooledRatio) + ", " + std::to_string(s.clusters[0].original[0].samples) +
                                       " reps)"};
}

// ---------------------------------------------------------------- criterion 6

Outcome oracle_inference(bool full, int threads) {
    McConfig c;
    c.study = "table2-oracle";
    c.replications = full ? 200 : 50;
    c.pipeline.boot_reps = full ? 200 : 100;
    c.threads = threads;
    const auto s = run_oracle_study(c);
    const double lo = full ? kCoverFullLo : kCoverFastLo;
    const double hi = full ? kCoverFullHi : kCoverFastHi;
    bool pass = s.clusters.size() == 3;
    std::string detail = std::string(full ? "full" : "fast") + " tier, " + std::to_string(s.replications) +
                         " reps x B=" + std::to_string(c.pipeline.boot_reps) + ";";
    for (std::size_t k = 0; k < s.clusters.size(); ++k) {
        const auto& cs = s.clusters[k];
        for (std::size_t j = 0; j < cs.debiased.size(); ++j) {
            const double bias = cs.debiased[j].median_bias;
            const double cover = cs.coverage[j];
            pass = pass && cs.debiased[j].samples > 0 && std::abs(bias) <= kMedianBias && cover >= lo && cover <= hi;
            detail += " c" + std::to_string(k + 1) + (j == 0 ? " peer" : " x" + std::to_string(j)) + " bias " +
                      fmt(bias, 3) + " cover " + fmt(cover, 3) + ";";
        }
    }
    detail += " limits |bias| <= " + fmt(kMedianBias) + ", cover in [" + fmt(lo) + ", " + fmt(hi) + "]";
    return {pass, detail};
}

// ---------------------------------------------------------------- criterion 8

Outcome determinism() {
    DgpConfig d;
    d.groups = 60;
    d.group_size = 100;
    const auto sim = generate_panel(d, 808);
    PipelineConfig c;
    c.boot_reps = 99;
    c.seed = 8;
    std::set<std::string> outputs;
    std::string sizes;
    for (int threads : {1, 4, 8, 1}) {
        c.threads = threads;
        const auto text = report_to_json(sim.panel, run_pipeline(sim.panel, c), c).dump(2);
        outputs.insert(text);
        sizes += std::to_string(threads) + ":" + std::to_string(text.size()) + " ";
    }
    return {outputs.size() == 1, "report bytes per worker count " + sizes + "(" + std::to_string(outputs.size()) +
                                     " distinct)"};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string tier = "full";
    int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::vector<int> only;
    std::vector<int> known;
    std::string report_path;
    app.add_option("--tier", tier, "full or fast (fast shortens the oracle inference study)")
        ->check(CLI::IsMember({"full", "fast"}))
        ->capture_default_str();
    app.add_option("--threads", threads, "worker threads for the replication studies")->capture_default_str();
    app.add_option("--only", only, "run only these criteria");
    app.add_option("--known-failures", known,
                   "criteria whose FAIL is reported but does not set the exit status");
    app.add_option("--report", report_path, "also write the result lines to this file");
    CLI11_PARSE(app, argc, argv);

    std::ostringstream lines;

    const auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
    std::optional<McSummary> table1;
    const auto study = [&]() -> const McSummary& {
        if (!table1) table1 = table1_study(100, threads);
        return *table1;
    };

    const std::vector<std::pair<int, std::function<Outcome()>>> checks{
        {1, derivatives},
        {2, equilibrium},
        {3, oracle_equivalence},
        {4, classo_reduction},
        {5, [&] { return selection(study()); }},
        {6, [&] { return oracle_inference(tier == "full", threads); }},
        {7, [&] { return pooled_bias(study()); }},
        {8, determinism},
    };
    const auto is_known = [&](int k) { return std::find(known.begin(), known.end(), k) != known.end(); };
    int passed = 0, failed = 0, excused = 0;
    for (const auto& [id, check] : checks) {
        if (!wanted(id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = check();
        } catch (const std::exception& e) {
            out = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (out.pass) {
            ++passed;
        } else if (is_known(id)) {
            ++excused;
        } else {
            ++failed;
        }
        std::ostringstream line;
        line << "criterion " << id << ": " << (out.pass ? "PASS" : "FAIL")
             << (!out.pass && is_known(id) ? " (known failure)" : "") << "  " << out.detail << "  [" << fmt(secs, 3)
             << " s]\n";
        std::cout << line.str() << std::flush;
        lines << line.str();
    }
    std::ostringstream summary;
    summary << "summary: " << passed << " passed, " << failed + excused << " failed";
    if (excused > 0) summary << " (" << excused << " known)";
    summary << '\n';
    std::cout << summary.str();
    lines << summary.str();
    if (!report_path.empty()) {
        std::ofstream file(report_path);
        file << lines.str();
        if (!file) {
            std::cerr << "cannot write " << report_path << '\n';
            return 1;
        }
    }
    return failed == 0 ? 0 : 1;
}
