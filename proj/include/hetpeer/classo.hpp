#pragma once
#include "hetpeer/npl.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace hetpeer {

struct ClassoConfig {
    /// Penalty level; when unset, rho_scale * dispersion * mean_n^(-1/3).
    std::optional<double> rho;
    double rho_scale = 0.5;
    int max_sweeps = 200;
    /// Stop when the relative change of the penalized objective drops below this.
    double rel_tol = 1e-8;
    int kmeans_restarts = 20;
    int kmeans_max_iter = 100;
    std::uint64_t seed = 0;
    double mu_bound = 10.0;
    double peer_bound = 3.99;
    int newton_max_iter = 50;
    double newton_tol = 1e-10;
    int weiszfeld_max_iter = 500;
    double weiszfeld_tol = 1e-12;
    int threads = 1;
};

/// C-Lasso output. Vectors indexed by panel group; groups whose first-step
/// fit was unusable carry membership -1 and an empty slope.
struct ClusterSolution {
    int k = 0;
    std::vector<Eigen::VectorXd> per_group_slopes;
    std::vector<Eigen::VectorXd> centers;
    std::vector<int> membership;
    double rho = 0.0;
    std::vector<double> objective_trace;
    bool converged = false;
    int sweeps = 0;
    std::vector<bool> empty_clusters;

    std::vector<std::size_t> members(int cluster) const;
    bool any_empty() const;
};

/// Nearest center in Euclidean distance; ties go to the lowest index.
int nearest_center(const Eigen::VectorXd& slope, const std::vector<Eigen::VectorXd>& centers);
std::vector<int> assign_clusters(const std::vector<Eigen::VectorXd>& slopes,
                                 const std::vector<Eigen::VectorXd>& centers);

/// rho_scale * sqrt(trace of the sample covariance of `slopes`) * mean_n^(-1/3).
double default_rho(const std::vector<Eigen::VectorXd>& slopes, double mean_group_size,
                   double rho_scale);

struct KMeansResult {
    std::vector<Eigen::VectorXd> centers;
    std::vector<int> labels;
    double inertia = 0.0;
};

/// Lloyd iterations from k-means++ seeds, best inertia over `restarts`.
KMeansResult kmeans(const std::vector<Eigen::VectorXd>& points, int k, int restarts,
                    std::uint64_t seed, int max_iter = 100);

/// argmin_c sum_i w_i ||x_i - c||, by Weiszfeld iteration with the
/// Vardi-Zhang correction at data points.
Eigen::VectorXd weighted_geometric_median(const std::vector<Eigen::VectorXd>& points,
                                          const std::vector<double>& weights,
                                          const Eigen::VectorXd& start, int max_iter = 500,
                                          double tol = 1e-12);

/// Penalized objective mean_g[Q_g(theta_g) + rho prod_k ||theta_g - center_k||]
/// over the groups with a slope; `profiles` is indexed like the slopes.
double classo_objective(const std::vector<ProfileLikelihood>& profiles,
                        const std::vector<std::size_t>& groups,
                        const std::vector<Eigen::VectorXd>& slopes,
                        const std::vector<Eigen::VectorXd>& centers, double rho);

/// Penalized classification of the per-group slopes into `k` clusters with
/// the first-step belief profiles held fixed.
ClusterSolution classo_fit(const Panel& panel, const PerGroupFits& first_step, int k,
                           const ClassoConfig& config = {});

/// Pooled NPL per cluster over its member groups, warm-started from the
/// first-step beliefs; nullopt for empty clusters.
std::vector<std::optional<NplFit>> post_classification_fit(const Panel& panel,
                                                           const std::vector<int>& membership,
                                                           int k, const NplConfig& config = {},
                                                           const PerGroupFits* first_step = nullptr);

} // namespace hetpeer
