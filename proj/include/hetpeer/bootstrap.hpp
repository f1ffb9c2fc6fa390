#pragma once
#include "hetpeer/npl.hpp"
#include "hetpeer/rng.hpp"

#include <cstdint>
#include <vector>

namespace hetpeer {

/// Quantile with linear interpolation between order statistics, at
/// position (m - 1) q for m draws (zero based).
double empirical_quantile(std::vector<double> draws, double q);

struct BootstrapConfig {
    int replications = 500;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    int threads = 1;
    /// Refit settings; refits warm-start from the original estimate.
    NplConfig refit = [] {
        NplConfig c;
        c.polish = false;
        return c;
    }();
    /// Share of failed replicates above which a report is flagged unreliable.
    double max_failure_share = 0.10;
};

/// theta^b - theta_hat for every successful replicate, in replicate order.
struct BootstrapDraws {
    Eigen::VectorXd estimate;
    std::vector<Eigen::VectorXd> deltas;
    int replications = 0;
    int failures = 0;
};

struct InferenceReport {
    Eigen::VectorXd contrast;
    double point = 0.0;
    double debiased = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double alpha = 0.05;
    int replications = 0;
    int failures = 0;
    bool reliable = true;
    /// c'(theta^b - theta_hat) per successful replicate.
    std::vector<double> bootstrap_draws;
};

/// Outcomes simulated from the fitted index with the fitted beliefs held
/// fixed; `ccp` and `fixed_effects` are per group of `panel`.
Panel simulate_from_fit(const Panel& panel, const NplFit& fit, Rng& rng);

/// Parametric bootstrap: draw outcomes from the fit, refit, collect deltas.
/// Replicate b uses the stream make_stream(seed, b), so the result does not
/// depend on the worker count.
BootstrapDraws bootstrap_draws(const Panel& panel, const NplFit& fit,
                               const BootstrapConfig& config = {});

/// Debiased point c'theta - Q(1/2) and interval
/// [c'theta - Q(1 - alpha/2), c'theta - Q(alpha/2)].
InferenceReport summarize_contrast(const BootstrapDraws& draws, const Eigen::VectorXd& contrast,
                                   double alpha, double max_failure_share = 0.10);

InferenceReport bootstrap_contrast(const Panel& panel, const NplFit& fit,
                                   const Eigen::VectorXd& contrast,
                                   const BootstrapConfig& config = {});

/// One report per slope coordinate (peer effect first) from a single set of replicates.
std::vector<InferenceReport> bootstrap_coordinates(const Panel& panel, const NplFit& fit,
                                                   const BootstrapConfig& config = {});
std::vector<InferenceReport> summarize_coordinates(const BootstrapDraws& draws, double alpha,
                                                   double max_failure_share = 0.10);

} // namespace hetpeer
