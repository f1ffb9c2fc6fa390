#include "hetpeer/npl.hpp"

#include "hetpeer/error.hpp"
#include "hetpeer/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hetpeer {

namespace {

struct FixedEffectSolution {
    double mu = 0.0;
    bool at_bound = false;
};

// Minimizes mean(log(1 + e^{b+mu}) - y (b+mu)) over mu in [-bound, bound].
// The derivative mean(L(b+mu)) - ybar is increasing, so Newton is run inside
// a shrinking bracket; the bounds are only evaluated when Newton points at them.
FixedEffectSolution solve_fixed_effect(const Eigen::VectorXd& base, double ybar, double start,
                                       double bound) {
    const auto n = static_cast<double>(base.size());
    auto derivs = [&](double mu) {
        double s = 0.0;
        double w = 0.0;
        for (Eigen::Index i = 0; i < base.size(); ++i) {
            const double prob = logistic_cdf(base[i] + mu);
            s += prob;
            w += prob * (1.0 - prob);
        }
        return std::pair{s / n - ybar, w / n};
    };

    double lo = -bound;
    double hi = bound;
    bool lo_excluded = false;  // derivative at -bound known to be negative
    bool hi_excluded = false;
    double mu = std::clamp(start, lo, hi);
    for (int it = 0; it < 200; ++it) {
        const auto [d, w] = derivs(mu);
        if (std::abs(d) <= 1e-14) return {mu, false};
        if (d > 0.0) {
            if (mu <= -bound) return {-bound, true};
            hi = mu;
            if (mu >= bound) hi_excluded = true;
        } else {
            if (mu >= bound) return {bound, true};
            lo = mu;
            if (mu <= -bound) lo_excluded = true;
        }
        double next = w > 0.0 ? mu - d / w : std::numeric_limits<double>::quiet_NaN();
        if (!(next > lo && next < hi)) {
            if (d > 0.0 && lo <= -bound && !lo_excluded) {
                next = -bound;
                lo_excluded = true;
            } else if (d < 0.0 && hi >= bound && !hi_excluded) {
                next = bound;
                hi_excluded = true;
            } else {
                next = 0.5 * (lo + hi);
            }
        }
        if (std::abs(next - mu) <= 1e-15 * (1.0 + std::abs(mu))) return {next, false};
        mu = next;
    }
    return {mu, false};
}

Eigen::MatrixXd slope_design(const GroupData& group, const Eigen::VectorXd& pbar) {
    Eigen::MatrixXd z(group.size(), 1 + group.covariate_dim());
    z.col(0) = pbar;
    z.rightCols(group.covariate_dim()) = group.x();
    return z;
}

} // namespace

std::vector<std::size_t> NplFit::bounded_groups() const {
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < mu_at_bound.size(); ++g) {
        if (mu_at_bound[g]) out.push_back(g);
    }
    return out;
}

Eigen::VectorXd default_initial_ccp(const GroupData& group) {
    const double freq = (group.y().sum() + 0.5) / (group.size() + 1.0);
    return Eigen::VectorXd::Constant(group.size(), std::clamp(freq, 0.02, 0.98));
}

ProfileLikelihood::ProfileLikelihood(const GroupData& group, const Eigen::VectorXd& ccp,
                                     double mu_bound)
    : group_(&group), pbar_(mean_peer_belief(group, ccp)), mu_bound_(mu_bound) {
    if (!(mu_bound > 0.0)) throw ValidationError("fixed-effect bound must be positive");
}

ProfileLikelihood::Evaluation ProfileLikelihood::evaluate(const Eigen::VectorXd& theta,
                                                          bool derivatives,
                                                          double mu_start) const {
    const auto& g = *group_;
    if (theta.size() != 1 + g.covariate_dim()) {
        throw ValidationError("group " + g.id() + ": slope dimension mismatch");
    }
    const int n = g.size();
    Evaluation out;
    if (n == 0) {
        out.gradient = Eigen::VectorXd::Zero(theta.size());
        out.hessian = Eigen::MatrixXd::Zero(theta.size(), theta.size());
        return out;
    }
    Eigen::VectorXd base = g.x() * theta.tail(theta.size() - 1);
    base += theta[0] * pbar_;
    const double ybar = g.y().mean();
    const auto sol = solve_fixed_effect(base, ybar, mu_start, mu_bound_);
    out.fixed_effect = sol.mu;
    out.at_bound = sol.at_bound;

    out.fitted.resize(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = base[i] + sol.mu;
        total += nll_individual(g.y()[i], t);
        out.fitted[i] = logistic_cdf(t);
    }
    out.value = total / n;

    if (derivatives) {
        const Eigen::MatrixXd z = slope_design(g, pbar_);
        const Eigen::ArrayXd w = out.fitted.array() * (1.0 - out.fitted.array());
        out.gradient = z.transpose() * (out.fitted - g.y()) / n;
        out.hessian = z.transpose() * (z.array().colwise() * w).matrix() / n;
        const double h_mm = w.sum() / n;
        if (!sol.at_bound && h_mm > 0.0) {
            const Eigen::VectorXd h_tm = z.transpose() * w.matrix() / n;
            out.hessian -= h_tm * h_tm.transpose() / h_mm;
        }
    }
    return out;
}

double profile_fixed_effect(const GroupData& group, const SlopeParams& slope,
                            const Eigen::VectorXd& ccp, double mu_bound) {
    return ProfileLikelihood(group, ccp, mu_bound).evaluate(slope.to_vector(), false).fixed_effect;
}

double profile_nll(const GroupData& group, const SlopeParams& slope, const Eigen::VectorXd& ccp,
                   double mu_bound) {
    return ProfileLikelihood(group, ccp, mu_bound).value(slope.to_vector());
}

namespace {

struct PooledEvaluation {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
    std::vector<ProfileLikelihood::Evaluation> groups;
};

class PooledProblem {
public:
    PooledProblem(const std::vector<ProfileLikelihood>& profiles, int threads)
        : profiles_(profiles), threads_(threads) {}

    PooledEvaluation evaluate(const Eigen::VectorXd& theta, bool derivatives,
                              const std::vector<double>& mu_start) const {
        PooledEvaluation out;
        out.groups.resize(profiles_.size());
        parallel_for(profiles_.size(), threads_, [&](std::size_t g) {
            out.groups[g] = profiles_[g].evaluate(theta, derivatives, mu_start[g]);
        });
        const auto count = static_cast<double>(profiles_.size());
        if (derivatives) {
            out.gradient = Eigen::VectorXd::Zero(theta.size());
            out.hessian = Eigen::MatrixXd::Zero(theta.size(), theta.size());
        }
        for (const auto& e : out.groups) {
            out.value += e.value;
            if (derivatives) {
                out.gradient += e.gradient;
                out.hessian += e.hessian;
            }
        }
        out.value /= count;
        if (derivatives) {
            out.gradient /= count;
            out.hessian /= count;
        }
        if (!std::isfinite(out.value)) {
            throw ConvergenceError("inner optimizer failure: non-finite objective");
        }
        return out;
    }

private:
    const std::vector<ProfileLikelihood>& profiles_;
    int threads_;
};

struct InnerResult {
    Eigen::VectorXd theta;
    PooledEvaluation eval;
    bool rank_deficient = false;
};

std::vector<double> fixed_effects_of(const PooledEvaluation& e) {
    std::vector<double> mu(e.groups.size());
    for (std::size_t g = 0; g < mu.size(); ++g) mu[g] = e.groups[g].fixed_effect;
    return mu;
}

// Newton on the profiled objective: the fixed effects are eliminated exactly
// per group, so only the (small) slope block is iterated. The peer effect is
// projected onto its box and dropped from the step while pinned there.
InnerResult minimize_pooled(const PooledProblem& problem, Eigen::VectorXd theta,
                            const std::vector<double>& mu_start, const NplConfig& config) {
    const auto project = [&](Eigen::VectorXd t) {
        if (config.fixed_peer_effect) {
            t[0] = *config.fixed_peer_effect;
        } else {
            t[0] = std::clamp(t[0], -config.peer_bound, config.peer_bound);
        }
        return t;
    };
    theta = project(std::move(theta));
    InnerResult out;
    out.eval = problem.evaluate(theta, true, mu_start);
    const int d = static_cast<int>(theta.size());

    for (int it = 0; it < config.max_inner; ++it) {
        std::vector<int> free;
        for (int j = 0; j < d; ++j) {
            if (j == 0) {
                if (config.fixed_peer_effect) continue;
                const bool pinned = std::abs(theta[0]) >= config.peer_bound - 1e-12 &&
                                    out.eval.gradient[0] * theta[0] < 0.0;
                if (pinned) continue;
            }
            free.push_back(j);
        }
        if (free.empty()) break;
        const auto nf = static_cast<Eigen::Index>(free.size());
        Eigen::VectorXd g_free(nf);
        Eigen::MatrixXd h_free(nf, nf);
        for (Eigen::Index a = 0; a < nf; ++a) {
            g_free[a] = out.eval.gradient[free[static_cast<std::size_t>(a)]];
            for (Eigen::Index b = 0; b < nf; ++b) {
                h_free(a, b) = out.eval.hessian(free[static_cast<std::size_t>(a)],
                                                free[static_cast<std::size_t>(b)]);
            }
        }
        // pseudo-inverse step; unidentified directions are left untouched
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h_free);
        const double lmax = std::max(eig.eigenvalues().maxCoeff(), 0.0);
        const double cutoff = std::max(1e-10 * lmax, 1e-14);
        if (eig.eigenvalues().minCoeff() <= cutoff) out.rank_deficient = true;
        if (g_free.lpNorm<Eigen::Infinity>() <= config.inner_tol) break;

        Eigen::VectorXd step_free = Eigen::VectorXd::Zero(nf);
        for (Eigen::Index k = 0; k < nf; ++k) {
            const double lam = eig.eigenvalues()[k];
            if (lam <= cutoff) continue;
            const auto v = eig.eigenvectors().col(k);
            step_free -= v * (v.dot(g_free) / lam);
        }
        if (step_free.lpNorm<Eigen::Infinity>() == 0.0) break;
        Eigen::VectorXd step = Eigen::VectorXd::Zero(d);
        for (Eigen::Index a = 0; a < nf; ++a) step[free[static_cast<std::size_t>(a)]] = step_free[a];

        const auto mu_now = fixed_effects_of(out.eval);
        bool accepted = false;
        double t = 1.0;
        for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
            Eigen::VectorXd candidate = project(theta + t * step);
            const double decrease = out.eval.gradient.dot(candidate - theta);
            auto trial = problem.evaluate(candidate, true, mu_now);
            if (trial.value <= out.eval.value + 1e-4 * decrease) {
                const double moved = (candidate - theta).lpNorm<Eigen::Infinity>();
                const double gained = out.eval.value - trial.value;
                theta = std::move(candidate);
                out.eval = std::move(trial);
                accepted = true;
                if (moved <= 1e-13 * (1.0 + theta.lpNorm<Eigen::Infinity>()) &&
                    gained <= 1e-16 * (1.0 + std::abs(out.eval.value))) {
                    it = config.max_inner;
                }
                break;
            }
        }
        if (!accepted) break;
    }
    out.theta = std::move(theta);
    return out;
}

void validate_scope(const Panel& panel, const NplConfig& config) {
    if (panel.empty()) throw ValidationError("npl_fit: empty panel");
    for (const auto& g : panel.groups()) {
        if (g.size() == 0) throw ValidationError("npl_fit: group " + g.id() + " is empty");
    }
    if (!(config.outer_tol > 0.0) || !(config.polish_tol > 0.0) || !(config.inner_tol > 0.0)) {
        throw ValidationError("npl_fit: tolerances must be positive");
    }
    if (config.max_outer < 1) throw ValidationError("npl_fit: max_outer must be at least 1");
    if (!(config.peer_bound > 0.0)) throw ValidationError("npl_fit: peer bound must be positive");
}

} // namespace

NplFit npl_fit(const Panel& panel, const NplConfig& config, const NplStart& start) {
    validate_scope(panel, config);
    const std::size_t G = panel.size();
    const int p = panel.covariate_dim();

    std::vector<Eigen::VectorXd> ccp;
    if (start.ccp) {
        ccp = *start.ccp;
        if (ccp.size() != G) throw ValidationError("npl_fit: initial beliefs do not match panel");
        for (std::size_t g = 0; g < G; ++g) {
            if (ccp[g].size() != panel.group(g).size()) {
                throw ValidationError("npl_fit: initial beliefs do not match group " +
                                      panel.group(g).id());
            }
        }
    } else {
        ccp.reserve(G);
        for (const auto& g : panel.groups()) ccp.push_back(default_initial_ccp(g));
    }
    Eigen::VectorXd theta =
        start.slope ? start.slope->to_vector() : SlopeParams::zero(p).to_vector();
    if (theta.size() != 1 + p) throw ValidationError("npl_fit: initial slope dimension mismatch");
    std::vector<double> mu = start.fixed_effects ? *start.fixed_effects : std::vector<double>(G, 0.0);
    if (mu.size() != G) throw ValidationError("npl_fit: initial fixed effects do not match panel");

    NplFit fit;
    int polish_steps = 0;
    for (int t = 1;; ++t) {
        std::vector<ProfileLikelihood> profiles;
        profiles.reserve(G);
        for (std::size_t g = 0; g < G; ++g) {
            profiles.emplace_back(panel.group(g), ccp[g], config.mu_bound);
        }
        PooledProblem problem(profiles, config.threads);
        auto inner = minimize_pooled(problem, theta, mu, config);
        fit.rank_deficient = fit.rank_deficient || inner.rank_deficient;
        theta = inner.theta;
        mu = fixed_effects_of(inner.eval);

        double change = 0.0;
        for (std::size_t g = 0; g < G; ++g) {
            auto& fitted = inner.eval.groups[g].fitted;
            change = std::max(change, (fitted - ccp[g]).lpNorm<Eigen::Infinity>());
            ccp[g] = std::move(fitted);
        }
        fit.outer_iterations = t;
        fit.last_ccp_change = change;
        fit.final_nll = inner.eval.value;
        fit.mu_at_bound.assign(G, false);
        for (std::size_t g = 0; g < G; ++g) fit.mu_at_bound[g] = inner.eval.groups[g].at_bound;

        if (!fit.converged && change <= config.outer_tol) fit.converged = true;
        if (fit.converged) {
            if (!config.polish) break;
            if (change <= config.polish_tol) {
                fit.polished = true;
                break;
            }
            if (++polish_steps >= config.max_polish) break;
        } else if (t >= config.max_outer) {
            break;
        }
    }
    fit.slope = SlopeParams::from_vector(theta);
    fit.peer_at_bound =
        !config.fixed_peer_effect && std::abs(theta[0]) >= config.peer_bound - 1e-12;
    fit.fixed_effects = std::move(mu);
    fit.ccp = std::move(ccp);
    return fit;
}

std::vector<std::size_t> PerGroupFits::usable_groups() const {
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < fits.size(); ++g) {
        if (usable(g)) out.push_back(g);
    }
    return out;
}

PerGroupFits npl_fit_per_group(const Panel& panel, const NplConfig& config) {
    PerGroupFits out;
    out.fits.resize(panel.size());
    out.failures.resize(panel.size());
    NplConfig single = config;
    single.threads = 1;
    parallel_for(panel.size(), config.threads, [&](std::size_t g) {
        try {
            out.fits[g] = npl_fit(panel.subset({g}), single);
            if (!out.fits[g].converged) {
                out.failures[g] = "group " + panel.group(g).id() + ": NPL did not converge";
            }
        } catch (const Error& e) {
            out.failures[g] = e.what();
        }
    });
    return out;
}

} // namespace hetpeer
