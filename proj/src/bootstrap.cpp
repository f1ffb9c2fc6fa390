#include "hetpeer/bootstrap.hpp"

#include "hetpeer/error.hpp"
#include "hetpeer/parallel.hpp"
#include "hetpeer/rng.hpp"

#include <algorithm>
#include <cmath>

namespace hetpeer {

double empirical_quantile(std::vector<double> draws, double q) {
    if (draws.empty()) throw ValidationError("empirical_quantile: no draws");
    if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("empirical_quantile: q outside [0, 1]");
    std::sort(draws.begin(), draws.end());
    const double pos = (static_cast<double>(draws.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, draws.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0) return draws[lo];
    return draws[lo] + frac * (draws[hi] - draws[lo]);
}

Panel simulate_from_fit(const Panel& panel, const NplFit& fit, Rng& rng) {
    if (fit.ccp.size() != panel.size() || fit.fixed_effects.size() != panel.size()) {
        throw ValidationError("bootstrap: fit does not match the panel");
    }
    std::vector<GroupData> groups;
    groups.reserve(panel.size());
    for (std::size_t g = 0; g < panel.size(); ++g) {
        const auto& group = panel.group(g);
        const Eigen::VectorXd pbar = mean_peer_belief(group, fit.ccp[g]);
        Eigen::VectorXd y(group.size());
        for (int i = 0; i < group.size(); ++i) {
            const double index = pbar[i] * fit.slope.peer_effect +
                                 group.x().row(i).dot(fit.slope.covariate_slopes) +
                                 fit.fixed_effects[g];
            y[i] = index > logistic_draw(rng) ? 1.0 : 0.0;
        }
        groups.push_back(group.with_outcomes(std::move(y)));
    }
    return Panel(std::move(groups), panel.covariate_dim());
}

BootstrapDraws bootstrap_draws(const Panel& panel, const NplFit& fit,
                               const BootstrapConfig& config) {
    if (config.replications < 2) throw ValidationError("bootstrap: need at least 2 replications");
    if (!(config.alpha > 0.0 && config.alpha < 1.0)) {
        throw ValidationError("bootstrap: alpha must lie in (0, 1)");
    }
    if (!fit.converged) throw ValidationError("bootstrap: the fit did not converge");

    const auto B = static_cast<std::size_t>(config.replications);
    std::vector<std::optional<Eigen::VectorXd>> results(B);
    NplConfig refit = config.refit;
    refit.threads = 1;
    NplStart start;
    start.ccp = fit.ccp;
    start.slope = fit.slope;
    start.fixed_effects = fit.fixed_effects;
    const Eigen::VectorXd estimate = fit.slope.to_vector();

    parallel_for(B, config.threads, [&](std::size_t b) {
        Rng rng = make_stream(config.seed, b);
        try {
            const auto synthetic = simulate_from_fit(panel, fit, rng);
            const auto refitted = npl_fit(synthetic, refit, start);
            if (refitted.converged) results[b] = refitted.slope.to_vector() - estimate;
        } catch (const Error&) {
            // counted as a failed replicate below
        }
    });

    BootstrapDraws out;
    out.estimate = estimate;
    out.replications = config.replications;
    for (auto& r : results) {
        if (r) {
            out.deltas.push_back(std::move(*r));
        } else {
            ++out.failures;
        }
    }
    return out;
}

InferenceReport summarize_contrast(const BootstrapDraws& draws, const Eigen::VectorXd& contrast,
                                   double alpha, double max_failure_share) {
    if (contrast.size() != draws.estimate.size()) {
        throw ValidationError("bootstrap: contrast has the wrong dimension");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("bootstrap: alpha must lie in (0, 1)");
    if (draws.deltas.empty()) throw ConvergenceError("bootstrap: every replicate failed");
    InferenceReport rep;
    rep.contrast = contrast;
    rep.alpha = alpha;
    rep.replications = draws.replications;
    rep.failures = draws.failures;
    rep.reliable = draws.failures <= max_failure_share * draws.replications;
    rep.point = contrast.dot(draws.estimate);
    for (const auto& d : draws.deltas) rep.bootstrap_draws.push_back(contrast.dot(d));
    rep.debiased = rep.point - empirical_quantile(rep.bootstrap_draws, 0.5);
    rep.ci_lower = rep.point - empirical_quantile(rep.bootstrap_draws, 1.0 - alpha / 2.0);
    rep.ci_upper = rep.point - empirical_quantile(rep.bootstrap_draws, alpha / 2.0);
    return rep;
}

InferenceReport bootstrap_contrast(const Panel& panel, const NplFit& fit,
                                   const Eigen::VectorXd& contrast,
                                   const BootstrapConfig& config) {
    if (contrast.size() != fit.slope.dim()) {
        throw ValidationError("bootstrap: contrast has the wrong dimension");
    }
    if (contrast.isZero(0.0)) throw ValidationError("bootstrap: contrast must be nonzero");
    return summarize_contrast(bootstrap_draws(panel, fit, config), contrast, config.alpha,
                              config.max_failure_share);
}

std::vector<InferenceReport> summarize_coordinates(const BootstrapDraws& draws, double alpha,
                                                   double max_failure_share) {
    std::vector<InferenceReport> out;
    const auto d = draws.estimate.size();
    for (Eigen::Index j = 0; j < d; ++j) {
        out.push_back(summarize_contrast(draws, Eigen::VectorXd::Unit(d, j), alpha,
                                         max_failure_share));
    }
    return out;
}

std::vector<InferenceReport> bootstrap_coordinates(const Panel& panel, const NplFit& fit,
                                                   const BootstrapConfig& config) {
    return summarize_coordinates(bootstrap_draws(panel, fit, config), config.alpha,
                                 config.max_failure_share);
}

} // namespace hetpeer
