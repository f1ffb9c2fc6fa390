#include "hetpeer/logit.hpp"

#include "hetpeer/error.hpp"

#include <cmath>

namespace hetpeer {

Eigen::VectorXd SlopeParams::to_vector() const {
    Eigen::VectorXd theta(dim());
    theta[0] = peer_effect;
    theta.tail(covariate_slopes.size()) = covariate_slopes;
    return theta;
}

SlopeParams SlopeParams::from_vector(const Eigen::VectorXd& theta) {
    if (theta.size() < 1) throw ValidationError("slope vector must hold the peer effect");
    return SlopeParams{theta[0], theta.tail(theta.size() - 1)};
}

SlopeParams SlopeParams::zero(int covariate_dim) {
    return SlopeParams{0.0, Eigen::VectorXd::Zero(covariate_dim)};
}

double logistic_cdf(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log1p_exp(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double nll_individual(double y, double index) {
    return log1p_exp(index) - y * index;
}

namespace {

void check_dims(const GroupData& group, const GroupParams& params, const Eigen::VectorXd& ccp) {
    if (params.slope.covariate_slopes.size() != group.covariate_dim()) {
        throw ValidationError("group " + group.id() + ": slope dimension mismatch");
    }
    if (ccp.size() != group.size()) {
        throw ValidationError("group " + group.id() + ": belief vector length mismatch");
    }
}

} // namespace

Eigen::VectorXd utility_index(const GroupData& group, const GroupParams& params,
                              const Eigen::VectorXd& ccp) {
    check_dims(group, params, ccp);
    const Eigen::VectorXd pbar = mean_peer_belief(group, ccp);
    Eigen::VectorXd index = group.x() * params.slope.covariate_slopes;
    index.array() += params.fixed_effect;
    index += params.slope.peer_effect * pbar;
    return index;
}

double group_nll(const GroupData& group, const GroupParams& params, const Eigen::VectorXd& ccp) {
    const Eigen::VectorXd index = utility_index(group, params, ccp);
    if (group.size() == 0) return 0.0;
    double total = 0.0;
    for (int i = 0; i < group.size(); ++i) total += nll_individual(group.y()[i], index[i]);
    return total / group.size();
}

GradHess group_nll_grad_hess(const GroupData& group, const GroupParams& params,
                             const Eigen::VectorXd& ccp) {
    const Eigen::VectorXd index = utility_index(group, params, ccp);
    const Eigen::VectorXd pbar = mean_peer_belief(group, ccp);
    const int p = group.covariate_dim();
    const int d = 2 + p;
    GradHess out{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
    if (group.size() == 0) return out;

    Eigen::VectorXd z(d);
    for (int i = 0; i < group.size(); ++i) {
        z[0] = 1.0;
        z[1] = pbar[i];
        z.tail(p) = group.x().row(i).transpose();
        const double prob = logistic_cdf(index[i]);
        out.gradient -= (group.y()[i] - prob) * z;
        out.hessian.selfadjointView<Eigen::Lower>().rankUpdate(z, prob * (1.0 - prob));
    }
    out.hessian = out.hessian.selfadjointView<Eigen::Lower>();
    out.gradient /= group.size();
    out.hessian /= group.size();
    return out;
}

double panel_nll(const Panel& panel, const std::vector<GroupParams>& params,
                 const std::vector<Eigen::VectorXd>& ccp) {
    if (params.size() != panel.size() || ccp.size() != panel.size()) {
        throw ValidationError("panel_nll: per-group inputs do not match the panel size");
    }
    if (panel.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t g = 0; g < panel.size(); ++g) {
        total += group_nll(panel.group(g), params[g], ccp[g]);
    }
    return total / static_cast<double>(panel.size());
}

} // namespace hetpeer
