#pragma once
#include "hetpeer/logit.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hetpeer {

struct NplConfig {
    /// Stop when max |P(t) - P(t-1)| falls to this level.
    double outer_tol = 1e-5;
    int max_outer = 500;
    /// Box [-mu_bound, mu_bound] for every fixed effect.
    double mu_bound = 10.0;
    /// |peer effect| is projected onto [-peer_bound, peer_bound].
    double peer_bound = 3.99;
    /// When set, the peer effect is held at this value and not estimated.
    std::optional<double> fixed_peer_effect;
    /// Keep iterating after convergence until the belief change reaches
    /// polish_tol, so the reported profile is an equilibrium at the estimate.
    bool polish = true;
    double polish_tol = 1e-10;
    int max_polish = 500;
    /// Newton stopping rule on the free-coordinate gradient.
    double inner_tol = 1e-10;
    int max_inner = 100;
    int threads = 1;
};

/// Optional warm start; empty fields fall back to the defaults.
struct NplStart {
    std::optional<std::vector<Eigen::VectorXd>> ccp;
    std::optional<SlopeParams> slope;
    std::optional<std::vector<double>> fixed_effects;
};

struct NplFit {
    SlopeParams slope;
    std::vector<double> fixed_effects;
    std::vector<Eigen::VectorXd> ccp;
    int outer_iterations = 0;
    bool converged = false;
    bool polished = false;
    double final_nll = 0.0;
    double last_ccp_change = 0.0;
    /// Groups whose fixed effect sits on the box boundary (separation).
    std::vector<bool> mu_at_bound;
    bool peer_at_bound = false;
    bool rank_deficient = false;

    std::vector<std::size_t> bounded_groups() const;
};

/// Smoothed group frequency (sum y + 0.5) / (n + 1), clipped to [0.02, 0.98].
Eigen::VectorXd default_initial_ccp(const GroupData& group);

/// Profile likelihood of one group in its slope, with the belief profile
/// frozen and the fixed effect concentrated out. Keeps a reference to
/// `group`, which must outlive this object.
class ProfileLikelihood {
public:
    ProfileLikelihood(const GroupData& group, const Eigen::VectorXd& ccp, double mu_bound);

    struct Evaluation {
        double value = 0.0;
        double fixed_effect = 0.0;
        bool at_bound = false;
        /// Envelope gradient and Schur-complement Hessian in theta.
        Eigen::VectorXd gradient;
        Eigen::MatrixXd hessian;
        /// Fitted choice probabilities at (fixed_effect, theta).
        Eigen::VectorXd fitted;
    };

    Evaluation evaluate(const Eigen::VectorXd& theta, bool derivatives,
                        double mu_start = 0.0) const;
    double value(const Eigen::VectorXd& theta) const { return evaluate(theta, false).value; }

    const GroupData& group() const { return *group_; }
    const Eigen::VectorXd& peer_belief() const { return pbar_; }
    double mu_bound() const { return mu_bound_; }

private:
    const GroupData* group_;
    Eigen::VectorXd pbar_;
    double mu_bound_;
};

/// argmin over mu in [-mu_bound, mu_bound] of the group likelihood.
double profile_fixed_effect(const GroupData& group, const SlopeParams& slope,
                            const Eigen::VectorXd& ccp, double mu_bound = 10.0);

/// Group likelihood with the fixed effect concentrated out.
double profile_nll(const GroupData& group, const SlopeParams& slope, const Eigen::VectorXd& ccp,
                   double mu_bound = 10.0);

/// Sequential NPL estimation of every fixed effect and one common slope
/// over all groups of `panel`. Outer non-convergence is reported through
/// `converged`, never thrown.
NplFit npl_fit(const Panel& panel, const NplConfig& config = {}, const NplStart& start = {});

struct PerGroupFits {
    std::vector<NplFit> fits;
    /// Empty when the group's fit succeeded.
    std::vector<std::string> failures;

    bool usable(std::size_t g) const { return failures[g].empty() && fits[g].converged; }
    std::vector<std::size_t> usable_groups() const;
};

/// Independent NPL fit per group (heterogeneous slopes), parallel over groups.
PerGroupFits npl_fit_per_group(const Panel& panel, const NplConfig& config = {});

} // namespace hetpeer
