#include "hetpeer/panel.hpp"

#include "hetpeer/error.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

namespace hetpeer {

GroupData::GroupData(std::string group_id, std::vector<std::string> individual_ids,
                     Eigen::VectorXd y, Eigen::MatrixXd x, Network influencers) {
    const auto n = static_cast<std::size_t>(y.size());
    if (individual_ids.size() != n || static_cast<std::size_t>(x.rows()) != n ||
        influencers.size() != n) {
        throw ValidationError("group " + group_id + ": inconsistent sizes");
    }
    check_outcomes(y, group_id);
    if (!x.allFinite()) throw ValidationError("group " + group_id + ": non-finite covariate");

    std::unordered_set<std::string> seen;
    for (const auto& id : individual_ids) {
        if (!seen.insert(id).second) {
            throw ValidationError("group " + group_id + ": duplicate individual id " + id);
        }
    }

    std::vector<int> degree(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& row = influencers[i];
        std::unordered_set<int> row_seen;
        for (int j : row) {
            if (j < 0 || static_cast<std::size_t>(j) >= n) {
                throw ValidationError("group " + group_id + ": influencer index out of range");
            }
            if (static_cast<std::size_t>(j) == i) {
                throw ValidationError("group " + group_id + ": self-link for individual " +
                                      individual_ids[i]);
            }
            if (!row_seen.insert(j).second) {
                throw ValidationError("group " + group_id + ": duplicate edge from " +
                                      individual_ids[i]);
            }
        }
        degree[i] = static_cast<int>(row.size());
    }

    design_ = std::make_shared<const Design>(Design{std::move(group_id), std::move(individual_ids),
                                                    std::move(x), std::move(influencers),
                                                    std::move(degree)});
    y_ = std::move(y);
}

GroupData::GroupData(std::shared_ptr<const Design> design, Eigen::VectorXd y)
    : design_(std::move(design)), y_(std::move(y)) {}

void GroupData::check_outcomes(const Eigen::VectorXd& y, const std::string& group_id) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) {
            throw ValidationError("group " + group_id + ": outcome must be 0 or 1");
        }
    }
}

GroupData GroupData::with_outcomes(Eigen::VectorXd y) const {
    if (y.size() != y_.size()) throw ValidationError("group " + id() + ": outcome length mismatch");
    check_outcomes(y, id());
    return GroupData(design_, std::move(y));
}

Panel::Panel(std::vector<GroupData> groups, int covariate_dim)
    : groups_(std::move(groups)), covariate_dim_(covariate_dim) {
    if (!groups_.empty()) covariate_dim_ = groups_.front().covariate_dim();
    std::unordered_set<std::string> ids;
    for (const auto& g : groups_) {
        if (g.covariate_dim() != covariate_dim_) {
            throw ValidationError("group " + g.id() + ": covariate dimension differs from panel");
        }
        if (!ids.insert(g.id()).second) throw ValidationError("duplicate group id " + g.id());
    }
}

std::size_t Panel::total_individuals() const {
    return std::accumulate(groups_.begin(), groups_.end(), std::size_t{0},
                           [](std::size_t acc, const GroupData& g) {
                               return acc + static_cast<std::size_t>(g.size());
                           });
}

double Panel::mean_group_size() const {
    if (groups_.empty()) return 0.0;
    return static_cast<double>(total_individuals()) / static_cast<double>(groups_.size());
}

Panel Panel::subset(const std::vector<std::size_t>& indices) const {
    std::vector<GroupData> out;
    out.reserve(indices.size());
    for (auto g : indices) out.push_back(groups_.at(g));
    return Panel(std::move(out), covariate_dim_);
}

Eigen::VectorXd mean_peer_belief(const GroupData& group, const Eigen::VectorXd& ccp) {
    if (ccp.size() != group.size()) {
        throw ValidationError("group " + group.id() + ": belief vector length mismatch");
    }
    const auto& net = group.influencers();
    Eigen::VectorXd out(group.size());
    for (int i = 0; i < group.size(); ++i) {
        const auto& row = net[static_cast<std::size_t>(i)];
        if (row.empty()) {
            out[i] = 0.0;
            continue;
        }
        double sum = 0.0;
        for (int j : row) sum += ccp[j];
        out[i] = sum / static_cast<double>(row.size());
    }
    return out;
}

} // namespace hetpeer
