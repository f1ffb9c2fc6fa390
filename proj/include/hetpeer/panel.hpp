#pragma once
#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace hetpeer {

/// Row-indexed influence lists: `influencers[i]` holds every j with F_ij = 1,
/// i.e. every individual that i is influenced by.
using Network = std::vector<std::vector<int>>;

/// One group: binary outcomes, covariates and a directed influence network.
///
/// The covariates and network are shared between copies, so swapping in a
/// new outcome vector (bootstrap, simulation) does not copy the design.
/// Construction validates every invariant; instances are immutable.
class GroupData {
public:
    GroupData(std::string group_id, std::vector<std::string> individual_ids,
              Eigen::VectorXd y, Eigen::MatrixXd x, Network influencers);

    const std::string& id() const { return design_->group_id; }
    const std::vector<std::string>& individual_ids() const { return design_->individual_ids; }
    int size() const { return static_cast<int>(y_.size()); }
    int covariate_dim() const { return static_cast<int>(design_->x.cols()); }

    const Eigen::VectorXd& y() const { return y_; }
    const Eigen::MatrixXd& x() const { return design_->x; }
    const Network& influencers() const { return design_->influencers; }
    int degree(int i) const { return design_->degree[static_cast<std::size_t>(i)]; }
    const std::vector<int>& degrees() const { return design_->degree; }

    /// Same design, different outcomes.
    GroupData with_outcomes(Eigen::VectorXd y) const;

private:
    struct Design {
        std::string group_id;
        std::vector<std::string> individual_ids;
        Eigen::MatrixXd x;
        Network influencers;
        std::vector<int> degree;
    };

    GroupData(std::shared_ptr<const Design> design, Eigen::VectorXd y);
    static void check_outcomes(const Eigen::VectorXd& y, const std::string& group_id);

    std::shared_ptr<const Design> design_;
    Eigen::VectorXd y_;
};

/// Ordered collection of groups sharing a covariate dimension.
class Panel {
public:
    Panel() = default;
    /// `covariate_dim` is only consulted when `groups` is empty.
    explicit Panel(std::vector<GroupData> groups, int covariate_dim = 0);

    const std::vector<GroupData>& groups() const { return groups_; }
    const GroupData& group(std::size_t g) const { return groups_[g]; }
    std::size_t size() const { return groups_.size(); }
    bool empty() const { return groups_.empty(); }
    int covariate_dim() const { return covariate_dim_; }

    std::size_t total_individuals() const;
    double mean_group_size() const;

    /// Sub-panel of the listed groups, in the given order.
    Panel subset(const std::vector<std::size_t>& indices) const;

private:
    std::vector<GroupData> groups_;
    int covariate_dim_ = 0;
};

/// Known truth behind a simulated panel.
struct DgpTruth {
    std::vector<int> cluster_of_group;
    /// Per-cluster slope (peer effect first, then covariate slopes).
    std::vector<Eigen::VectorXd> coefficients;
    /// Composite fixed effect per group (cluster intercept included).
    std::vector<double> fixed_effects;
    std::vector<Eigen::VectorXd> equilibrium_ccp;
};

/// Mean belief over each individual's influencers; exactly 0 without any.
Eigen::VectorXd mean_peer_belief(const GroupData& group, const Eigen::VectorXd& ccp);

} // namespace hetpeer
