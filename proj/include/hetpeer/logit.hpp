#pragma once
#include "hetpeer/panel.hpp"

#include <Eigen/Dense>

#include <vector>

namespace hetpeer {

/// Slope vector theta = (peer effect, covariate slopes...).
struct SlopeParams {
    double peer_effect = 0.0;
    Eigen::VectorXd covariate_slopes;

    int dim() const { return 1 + static_cast<int>(covariate_slopes.size()); }
    Eigen::VectorXd to_vector() const;
    static SlopeParams from_vector(const Eigen::VectorXd& theta);
    static SlopeParams zero(int covariate_dim);
};

struct GroupParams {
    double fixed_effect = 0.0;
    SlopeParams slope;
};

/// Gradient and Hessian over (fixed effect, peer effect, covariate slopes).
struct GradHess {
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

double logistic_cdf(double x);

/// log(1 + exp(x)) without overflow.
double log1p_exp(double x);

/// -y log L(t) - (1-y) log(1 - L(t)) for index t.
double nll_individual(double y, double index);

/// Utility index mu + pbar * peer + x' beta for every individual.
Eigen::VectorXd utility_index(const GroupData& group, const GroupParams& params,
                              const Eigen::VectorXd& ccp);

/// Average negative log-likelihood of one group, beliefs held as data.
double group_nll(const GroupData& group, const GroupParams& params, const Eigen::VectorXd& ccp);

/// Analytic derivatives of group_nll with the belief profile held fixed.
GradHess group_nll_grad_hess(const GroupData& group, const GroupParams& params,
                             const Eigen::VectorXd& ccp);

/// Mean of group_nll over groups.
double panel_nll(const Panel& panel, const std::vector<GroupParams>& params,
                 const std::vector<Eigen::VectorXd>& ccp);

} // namespace hetpeer
