#pragma once
#include "hetpeer/logit.hpp"
#include "hetpeer/rng.hpp"

#include <optional>

namespace hetpeer {

/// Moderate-interaction bound: the best-response map contracts with modulus
/// |peer effect| / 4, so a unique equilibrium exists below this value.
inline constexpr double kPeerEffectLimit = 4.0;

struct CcpProfile {
    Eigen::VectorXd values;
    /// sup-norm distance between `values` and its image under the best response.
    double residual = 0.0;
    int iterations = 0;
};

struct EquilibriumOptions {
    double tol = 1e-10;
    int max_iter = 10000;
};

/// One application of the best-response map P -> L(pbar(P) peer + x'beta + mu).
Eigen::VectorXd gamma_map(const GroupData& group, const GroupParams& params,
                          const Eigen::VectorXd& ccp);

/// Picard iteration to the equilibrium belief profile (default start 0.5).
/// Throws ValidationError for |peer effect| >= 4 and ConvergenceError when
/// max_iter is exhausted.
CcpProfile solve_equilibrium(const GroupData& group, const GroupParams& params,
                             const std::optional<Eigen::VectorXd>& init = std::nullopt,
                             const EquilibriumOptions& options = {});

/// Independent Bernoulli outcomes via the latent logistic threshold rule.
Eigen::VectorXd simulate_outcomes(const GroupData& group, const GroupParams& params,
                                  const Eigen::VectorXd& equilibrium_ccp, Rng& rng);

} // namespace hetpeer
