#include "hetpeer/equilibrium.hpp"

#include "hetpeer/error.hpp"

#include <cmath>

namespace hetpeer {

Eigen::VectorXd gamma_map(const GroupData& group, const GroupParams& params,
                          const Eigen::VectorXd& ccp) {
    return utility_index(group, params, ccp).unaryExpr([](double t) { return logistic_cdf(t); });
}

CcpProfile solve_equilibrium(const GroupData& group, const GroupParams& params,
                             const std::optional<Eigen::VectorXd>& init,
                             const EquilibriumOptions& options) {
    if (!(std::abs(params.slope.peer_effect) < kPeerEffectLimit)) {
        throw ValidationError("equilibrium: |peer effect| must be below 4 for a unique solution");
    }
    if (!(options.tol > 0.0)) throw ValidationError("equilibrium: tolerance must be positive");

    CcpProfile out;
    out.values = init ? *init : Eigen::VectorXd::Constant(group.size(), 0.5);
    if (out.values.size() != group.size()) {
        throw ValidationError("equilibrium: initial profile length mismatch");
    }
    for (int it = 0; it <= options.max_iter; ++it) {
        Eigen::VectorXd next = gamma_map(group, params, out.values);
        out.residual = group.size() == 0 ? 0.0 : (next - out.values).lpNorm<Eigen::Infinity>();
        if (out.residual <= options.tol) return out;
        if (it == options.max_iter) break;
        out.values = std::move(next);
        out.iterations = it + 1;
    }
    throw ConvergenceError("equilibrium: no convergence in " + std::to_string(options.max_iter) +
                           " iterations for group " + group.id());
}

Eigen::VectorXd simulate_outcomes(const GroupData& group, const GroupParams& params,
                                  const Eigen::VectorXd& equilibrium_ccp, Rng& rng) {
    const Eigen::VectorXd index = utility_index(group, params, equilibrium_ccp);
    Eigen::VectorXd y(group.size());
    for (int i = 0; i < group.size(); ++i) y[i] = index[i] > logistic_draw(rng) ? 1.0 : 0.0;
    return y;
}

} // namespace hetpeer
