#pragma once
#include "hetpeer/equilibrium.hpp"
#include "hetpeer/panel.hpp"
#include "hetpeer/pipeline.hpp"

#include <cstdint>
#include <iosfwd>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace hetpeer {

struct ClusterCoefficients {
    double peer_effect = 0.0;
    Eigen::VectorXd covariate_slopes;
    /// Cluster-specific shift added to every member's fixed effect.
    double intercept = 0.0;
};

std::vector<ClusterCoefficients> default_cluster_coefficients();

struct DgpConfig {
    int groups = 100;
    int group_size = 100;
    int max_friends = 5;
    std::vector<double> cluster_proportions{0.3, 0.3, 0.4};
    std::vector<ClusterCoefficients> cluster_coefficients = default_cluster_coefficients();
    double mu_sd = 1.0;
    double x_loading = 0.1;
    double eq_tol = 1e-10;
    std::uint64_t seed = 0;

    /// Throws ValidationError.
    void validate() const;
};

/// Largest-remainder rounding of groups * proportions; ties to the lower index.
std::vector<int> cluster_sizes(int groups, const std::vector<double>& proportions);

struct SimulatedPanel {
    Panel panel;
    DgpTruth truth;
};

/// Clusters occupy consecutive blocks of groups. Every group draws from its
/// own stream keyed by (rep_seed, group), so the result is schedule free.
SimulatedPanel generate_panel(const DgpConfig& config, std::uint64_t rep_seed, int threads = 1);

/// Share of groups whose label agrees with the truth under the best
/// injective relabeling of the estimated clusters; -1 labels never agree.
double classification_accuracy(const std::vector<int>& estimated, const std::vector<int>& truth);

/// For each true cluster, the estimated cluster minimizing the summed
/// Euclidean distance over all injective matchings (-1 when there are
/// fewer estimates than true clusters).
std::vector<int> match_clusters(const std::vector<Eigen::VectorXd>& estimated,
                                const std::vector<Eigen::VectorXd>& truth);

struct CoefficientStats {
    int samples = 0;
    double median_bias = 0.0;
    double rmse = 0.0;
};

struct ClusterStudyStats {
    /// Indexed by slope coordinate, peer effect first.
    std::vector<CoefficientStats> original;
    std::vector<CoefficientStats> debiased;
    std::vector<double> coverage;
    std::vector<CoefficientStats> pooled;
};

struct ReplicationRecord {
    std::uint64_t seed = 0;
    int selected_k = 0;
    std::optional<double> accuracy;
    std::string failure;
    /// Per true cluster, estimates aligned to the truth (empty when unmatched).
    std::vector<Eigen::VectorXd> original;
    std::vector<Eigen::VectorXd> debiased;
    std::vector<std::vector<bool>> covered;
    Eigen::VectorXd pooled;
};

struct McConfig {
    std::string study = "table1";
    DgpConfig dgp;
    int replications = 100;
    PipelineConfig pipeline;
    int threads = 1;
};

struct McSummary {
    std::string study;
    int groups = 0;
    int group_size = 0;
    int replications = 0;
    int failures = 0;
    int k_max = 0;
    int true_k = 0;
    /// Share of successful replications selecting K = index + 1.
    std::vector<double> k_frequency;
    /// Mean accuracy of the K = true_k classification.
    double accuracy = 0.0;
    int accuracy_samples = 0;
    std::vector<Eigen::VectorXd> true_coefficients;
    std::vector<ClusterStudyStats> clusters;
    std::vector<ReplicationRecord> records;
    double runtime_seconds = 0.0;
};

/// Full pipeline per replication; cluster statistics use the replications
/// that select the true K.
McSummary run_monte_carlo(const McConfig& config);

/// Per-cluster NPL plus bootstrap on the true membership.
McSummary run_oracle_study(const McConfig& config);

/// Statistics over replications; exposed for testing.
CoefficientStats coefficient_stats(const std::vector<double>& errors);

nlohmann::json summary_to_json(const McSummary& summary, bool include_runtime = true);
/// One row: `G,n,reps,failures,k1..kK,accuracy,format_version`.
void write_selection_csv(std::ostream& out, const McSummary& summary);
/// One row per cluster and coefficient with bias, RMSE and coverage columns.
void write_estimates_csv(std::ostream& out, const McSummary& summary);
void write_truth_json(std::ostream& out, const Panel& panel, const DgpTruth& truth,
                      const DgpConfig& config, std::uint64_t seed);

} // namespace hetpeer
