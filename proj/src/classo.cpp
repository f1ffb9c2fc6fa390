#include "hetpeer/classo.hpp"

#include "hetpeer/error.hpp"
#include "hetpeer/parallel.hpp"
#include "hetpeer/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hetpeer {

std::vector<std::size_t> ClusterSolution::members(int cluster) const {
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < membership.size(); ++g) {
        if (membership[g] == cluster) out.push_back(g);
    }
    return out;
}

bool ClusterSolution::any_empty() const {
    return std::any_of(empty_clusters.begin(), empty_clusters.end(), [](bool b) { return b; });
}

int nearest_center(const Eigen::VectorXd& slope, const std::vector<Eigen::VectorXd>& centers) {
    if (centers.empty()) throw ValidationError("assign_clusters: no centers");
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers.size(); ++k) {
        if (centers[k].size() != slope.size()) {
            throw ValidationError("assign_clusters: dimension mismatch");
        }
        const double dist = (slope - centers[k]).squaredNorm();
        if (dist < best_dist) {
            best_dist = dist;
            best = static_cast<int>(k);
        }
    }
    return best;
}

std::vector<int> assign_clusters(const std::vector<Eigen::VectorXd>& slopes,
                                 const std::vector<Eigen::VectorXd>& centers) {
    std::vector<int> out;
    out.reserve(slopes.size());
    for (const auto& s : slopes) out.push_back(nearest_center(s, centers));
    return out;
}

double default_rho(const std::vector<Eigen::VectorXd>& slopes, double mean_group_size,
                   double rho_scale) {
    if (slopes.size() < 2 || !(mean_group_size > 0.0)) return 0.0;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(slopes.front().size());
    for (const auto& s : slopes) mean += s;
    mean /= static_cast<double>(slopes.size());
    double trace = 0.0;
    for (const auto& s : slopes) trace += (s - mean).squaredNorm();
    trace /= static_cast<double>(slopes.size() - 1);
    return rho_scale * std::sqrt(trace) * std::pow(mean_group_size, -1.0 / 3.0);
}

KMeansResult kmeans(const std::vector<Eigen::VectorXd>& points, int k, int restarts,
                    std::uint64_t seed, int max_iter) {
    const auto n = points.size();
    if (k < 1 || static_cast<std::size_t>(k) > n) {
        throw ValidationError("kmeans: need 1 <= k <= number of points");
    }
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    std::vector<double> d2(n);
    for (int r = 0; r < std::max(restarts, 1); ++r) {
        Rng rng = make_stream(seed, static_cast<std::uint64_t>(r));
        std::vector<Eigen::VectorXd> centers;
        centers.push_back(points[rng() % n]);
        while (static_cast<int>(centers.size()) < k) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double m = std::numeric_limits<double>::infinity();
                for (const auto& c : centers) m = std::min(m, (points[i] - c).squaredNorm());
                d2[i] = m;
                total += m;
            }
            std::size_t pick = rng() % n;
            if (total > 0.0) {
                double target = uniform_open(rng) * total;
                for (std::size_t i = 0; i < n; ++i) {
                    target -= d2[i];
                    if (target <= 0.0 || i + 1 == n) {
                        pick = i;
                        break;
                    }
                }
            }
            centers.push_back(points[pick]);
        }

        std::vector<int> labels(n, -1);
        for (int it = 0; it < max_iter; ++it) {
            bool changed = false;
            for (std::size_t i = 0; i < n; ++i) {
                const int l = nearest_center(points[i], centers);
                if (l != labels[i]) {
                    labels[i] = l;
                    changed = true;
                }
            }
            if (!changed) break;
            for (int c = 0; c < k; ++c) {
                Eigen::VectorXd sum = Eigen::VectorXd::Zero(points.front().size());
                int count = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (labels[i] == c) {
                        sum += points[i];
                        ++count;
                    }
                }
                if (count > 0) centers[static_cast<std::size_t>(c)] = sum / count;
            }
        }
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            inertia += (points[i] - centers[static_cast<std::size_t>(labels[i])]).squaredNorm();
        }
        if (inertia < best.inertia) best = KMeansResult{centers, labels, inertia};
    }
    return best;
}

Eigen::VectorXd weighted_geometric_median(const std::vector<Eigen::VectorXd>& points,
                                          const std::vector<double>& weights,
                                          const Eigen::VectorXd& start, int max_iter,
                                          double tol) {
    if (points.size() != weights.size()) {
        throw ValidationError("weighted_geometric_median: weights do not match points");
    }
    Eigen::VectorXd y = start;
    if (std::all_of(weights.begin(), weights.end(), [](double w) { return w <= 0.0; })) return y;
    for (int it = 0; it < max_iter; ++it) {
        const double eps = 1e-14 * (1.0 + y.norm());
        double coincident = 0.0;
        double inv_sum = 0.0;
        Eigen::VectorXd weighted = Eigen::VectorXd::Zero(y.size());
        Eigen::VectorXd pull = Eigen::VectorXd::Zero(y.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            const double r = (points[i] - y).norm();
            if (r < eps) {
                coincident += weights[i];
                continue;
            }
            inv_sum += weights[i] / r;
            weighted += weights[i] / r * points[i];
            pull += weights[i] / r * (points[i] - y);
        }
        if (inv_sum == 0.0) break;
        const double pull_norm = pull.norm();
        // y is optimal when the pull of the other points cannot beat the mass at y
        if (pull_norm <= coincident) break;
        const Eigen::VectorXd t = weighted / inv_sum;
        const double gamma = coincident > 0.0 ? std::min(1.0, coincident / pull_norm) : 0.0;
        const Eigen::VectorXd next = (1.0 - gamma) * t + gamma * y;
        const double moved = (next - y).norm();
        y = next;
        if (moved <= tol * (1.0 + y.norm())) break;
    }
    return y;
}

namespace {

double penalty_product(const Eigen::VectorXd& theta, const std::vector<Eigen::VectorXd>& centers) {
    double prod = 1.0;
    for (const auto& c : centers) prod *= (theta - c).norm();
    return prod;
}

struct PenaltyDerivatives {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

// Derivatives of prod_k ||theta - c_k||, valid away from every center.
PenaltyDerivatives penalty_derivatives(const Eigen::VectorXd& theta,
                                       const std::vector<Eigen::VectorXd>& centers) {
    const auto d = theta.size();
    const auto K = centers.size();
    std::vector<double> r(K);
    std::vector<Eigen::VectorXd> u(K);
    PenaltyDerivatives out{1.0, Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
    for (std::size_t k = 0; k < K; ++k) {
        const Eigen::VectorXd diff = theta - centers[k];
        r[k] = diff.norm();
        u[k] = diff / r[k];
        out.value *= r[k];
    }
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    for (std::size_t k = 0; k < K; ++k) {
        const double others = out.value / r[k];
        out.gradient += others * u[k];
        out.hessian += others / r[k] * (eye - u[k] * u[k].transpose());
        for (std::size_t l = 0; l < K; ++l) {
            if (l == k) continue;
            out.hessian += out.value / (r[k] * r[l]) * u[k] * u[l].transpose();
        }
    }
    return out;
}

bool at_any_center(const Eigen::VectorXd& theta, const std::vector<Eigen::VectorXd>& centers) {
    return std::any_of(centers.begin(), centers.end(), [&](const Eigen::VectorXd& c) {
        return (theta - c).norm() <= 1e-12 * (1.0 + c.norm());
    });
}

struct BlockResult {
    Eigen::VectorXd theta;
    double value = 0.0;  // Q_g + rho * penalty
};

struct Smooth {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

// Projected damped Newton with eigenvalue-floored Hessian and Armijo
// backtracking; `eval(theta, derivatives)` returns the smooth objective and
// `stop(theta, step)` may end the search before a step is tried.
template <class Eval, class Stop>
BlockResult projected_newton(const Eval& eval, Eigen::VectorXd theta, const ClassoConfig& config,
                             const Stop& stop) {
    const auto project = [&](Eigen::VectorXd t) {
        t[0] = std::clamp(t[0], -config.peer_bound, config.peer_bound);
        return t;
    };
    theta = project(std::move(theta));
    double value = eval(theta, false).value;
    const auto d = theta.size();
    for (int it = 0; it < config.newton_max_iter; ++it) {
        Smooth e = eval(theta, true);
        if (!std::isfinite(e.value)) break;
        Eigen::VectorXd& grad = e.gradient;
        Eigen::MatrixXd& hess = e.hessian;
        const bool pinned = std::abs(theta[0]) >= config.peer_bound - 1e-12 && grad[0] * theta[0] < 0.0;
        if (pinned) {
            grad[0] = 0.0;
            hess.row(0).setZero();
            hess.col(0).setZero();
            hess(0, 0) = 1.0;
        }
        if (grad.lpNorm<Eigen::Infinity>() <= config.newton_tol) break;

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
        const double lmax = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-12);
        const double floor = 1e-8 * lmax;
        Eigen::VectorXd step = Eigen::VectorXd::Zero(d);
        for (Eigen::Index k = 0; k < d; ++k) {
            const double lam = std::max(eig.eigenvalues()[k], floor);
            const auto v = eig.eigenvectors().col(k);
            step -= v * (v.dot(grad) / lam);
        }
        if (pinned) step[0] = 0.0;
        if (stop(theta, step)) break;

        bool accepted = false;
        bool stalled = false;
        double t = 1.0;
        for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
            Eigen::VectorXd candidate = project(theta + t * step);
            const double trial = eval(candidate, false).value;
            if (trial <= value + 1e-4 * grad.dot(candidate - theta)) {
                // tiny steps or gains mean a kink or the optimum: stop
                stalled = (candidate - theta).lpNorm<Eigen::Infinity>() <= 1e-13 * (1.0 + theta.norm()) ||
                          value - trial <= 1e-14 * (1.0 + std::abs(value));
                theta = std::move(candidate);
                value = trial;
                accepted = true;
                break;
            }
        }
        if (!accepted || stalled) break;
    }
    return {theta, value};
}

// Minimizer of Q_g + rho * prod ||theta - c_k|| in the smooth region, from
// `start`. The search ends once a Newton step reaches a center flagged in
// `absorbing`: such a center is a local minimizer and is compared separately.
BlockResult smooth_block_minimizer(const ProfileLikelihood& profile, const Eigen::VectorXd& start,
                                   const std::vector<Eigen::VectorXd>& centers, double rho,
                                   const std::vector<bool>& absorbing, const ClassoConfig& config) {
    double mu = 0.0;
    auto eval = [&](const Eigen::VectorXd& t, bool derivatives) {
        Smooth out;
        if (rho > 0.0 && at_any_center(t, centers)) {
            out.value = profile.value(t);
            out.gradient = Eigen::VectorXd::Zero(t.size());
            out.hessian = Eigen::MatrixXd::Identity(t.size(), t.size());
            return out;
        }
        const auto e = profile.evaluate(t, derivatives, mu);
        out.value = e.value + rho * penalty_product(t, centers);
        if (derivatives) {
            mu = e.fixed_effect;
            out.gradient = e.gradient;
            out.hessian = e.hessian;
            if (rho > 0.0) {
                const auto pen = penalty_derivatives(t, centers);
                out.gradient += rho * pen.gradient;
                out.hessian += rho * pen.hessian;
            }
        }
        return out;
    };
    auto stop = [&](const Eigen::VectorXd& t, const Eigen::VectorXd& step) {
        const double reach = step.norm();
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if (absorbing[k] && (t - centers[k]).norm() <= reach) return true;
        }
        return false;
    };
    return projected_newton(eval, start, config, stop);
}

// Minimizer of sum_g Q_g over `members`, used to move a center together
// with the slopes fused to it.
Eigen::VectorXd pooled_minimizer(const std::vector<ProfileLikelihood>& profiles,
                                 const std::vector<std::size_t>& members,
                                 const Eigen::VectorXd& start, const ClassoConfig& config) {
    auto eval = [&](const Eigen::VectorXd& t, bool derivatives) {
        Smooth out;
        out.value = 0.0;
        if (derivatives) {
            out.gradient = Eigen::VectorXd::Zero(t.size());
            out.hessian = Eigen::MatrixXd::Zero(t.size(), t.size());
        }
        for (auto g : members) {
            const auto e = profiles[g].evaluate(t, derivatives);
            out.value += e.value;
            if (derivatives) {
                out.gradient += e.gradient;
                out.hessian += e.hessian;
            }
        }
        return out;
    };
    return projected_newton(eval, start, config,
                            [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return false; })
        .theta;
}

// Exact block step for one group: compare the current point, every center
// and the smooth-region minimizer, keeping the lowest objective.
BlockResult update_group_slope(const ProfileLikelihood& profile, const Eigen::VectorXd& current,
                               const Eigen::VectorXd& fallback_start,
                               const std::vector<Eigen::VectorXd>& centers, double rho,
                               const ClassoConfig& config) {
    BlockResult best{current, profile.value(current) + rho * penalty_product(current, centers)};
    // a center is a local minimizer when the likelihood slope there is
    // dominated by the penalty's kink: ||grad Q(c_k)|| <= rho prod_{l != k} ||c_k - c_l||
    std::vector<bool> absorbing(centers.size(), false);
    for (std::size_t k = 0; k < centers.size(); ++k) {
        const auto& c = centers[k];
        if (std::abs(c[0]) > config.peer_bound) continue;
        const auto e = profile.evaluate(c, rho > 0.0);
        if (e.value < best.value) best = {c, e.value};
        if (rho > 0.0) {
            double others = 1.0;
            for (std::size_t l = 0; l < centers.size(); ++l) {
                if (l != k) others *= (c - centers[l]).norm();
            }
            absorbing[k] = e.gradient.norm() <= rho * others;
        }
    }
    Eigen::VectorXd start = current;
    if (rho > 0.0 && at_any_center(start, centers)) start = fallback_start;
    if (rho == 0.0 || !at_any_center(start, centers)) {
        auto smooth = smooth_block_minimizer(profile, start, centers, rho, absorbing, config);
        if (smooth.value < best.value) best = std::move(smooth);
    }
    return best;
}

double center_objective(const std::vector<Eigen::VectorXd>& points,
                        const std::vector<double>& weights, const Eigen::VectorXd& c) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) total += weights[i] * (points[i] - c).norm();
    return total;
}

} // namespace

double classo_objective(const std::vector<ProfileLikelihood>& profiles,
                        const std::vector<std::size_t>& groups,
                        const std::vector<Eigen::VectorXd>& slopes,
                        const std::vector<Eigen::VectorXd>& centers, double rho) {
    double total = 0.0;
    for (auto g : groups) {
        total += profiles[g].value(slopes[g]) + rho * penalty_product(slopes[g], centers);
    }
    return total / static_cast<double>(groups.size());
}

ClusterSolution classo_fit(const Panel& panel, const PerGroupFits& first_step, int k,
                           const ClassoConfig& config) {
    if (panel.empty()) throw ValidationError("classo_fit: empty panel");
    if (first_step.fits.size() != panel.size()) {
        throw ValidationError("classo_fit: first-step fits do not match the panel");
    }
    if (k < 1) throw ValidationError("classo_fit: K must be at least 1");
    const auto groups = first_step.usable_groups();
    if (static_cast<std::size_t>(k) > groups.size()) {
        throw ValidationError("classo_fit: K exceeds the number of usable groups");
    }
    if (config.rho && !(*config.rho >= 0.0)) throw ValidationError("classo_fit: rho must be >= 0");

    const std::size_t G = panel.size();
    std::vector<ProfileLikelihood> profiles;
    profiles.reserve(G);
    std::vector<Eigen::VectorXd> initial(G);
    std::vector<Eigen::VectorXd> usable_slopes;
    for (std::size_t g = 0; g < G; ++g) {
        const auto& fit = first_step.fits[g];
        profiles.emplace_back(panel.group(g), fit.ccp.empty() ? default_initial_ccp(panel.group(g)) : fit.ccp[0],
                              config.mu_bound);
        if (first_step.usable(g)) {
            initial[g] = fit.slope.to_vector();
            usable_slopes.push_back(initial[g]);
        }
    }

    ClusterSolution sol;
    sol.k = k;
    sol.rho = config.rho ? *config.rho
                         : default_rho(usable_slopes, panel.mean_group_size(), config.rho_scale);
    sol.per_group_slopes = initial;
    sol.centers = kmeans(usable_slopes, k, config.kmeans_restarts, config.seed,
                         config.kmeans_max_iter).centers;

    auto& slopes = sol.per_group_slopes;
    auto& centers = sol.centers;
    double objective = classo_objective(profiles, groups, slopes, centers, sol.rho);
    sol.objective_trace.push_back(objective);

    for (int sweep = 1; sweep <= config.max_sweeps; ++sweep) {
        // (i) slopes given centers, independent across groups
        std::vector<Eigen::VectorXd> next(groups.size());
        parallel_for(groups.size(), config.threads, [&](std::size_t idx) {
            const auto g = groups[idx];
            next[idx] = update_group_slope(profiles[g], slopes[g], initial[g], centers, sol.rho,
                                           config).theta;
        });
        for (std::size_t idx = 0; idx < groups.size(); ++idx) slopes[groups[idx]] = next[idx];

        // (ii) centers. First move each center jointly with the slopes fused
        // to it toward their pooled minimizer; a geometric-median step alone
        // cannot move a center whose members all sit on it.
        double current = classo_objective(profiles, groups, slopes, centers, sol.rho);
        for (int c = 0; c < k; ++c) {
            auto& center = centers[static_cast<std::size_t>(c)];
            std::vector<std::size_t> fused;
            for (auto g : groups) {
                if ((slopes[g] - center).norm() <= 1e-12 * (1.0 + center.norm())) fused.push_back(g);
            }
            if (fused.empty()) continue;
            const Eigen::VectorXd target = pooled_minimizer(profiles, fused, center, config);
            double t = 1.0;
            for (int ls = 0; ls < 8; ++ls, t *= 0.5) {
                const Eigen::VectorXd moved = center + t * (target - center);
                auto trial_slopes = slopes;
                for (auto g : fused) trial_slopes[g] = moved;
                auto trial_centers = centers;
                trial_centers[static_cast<std::size_t>(c)] = moved;
                const double trial = classo_objective(profiles, groups, trial_slopes, trial_centers, sol.rho);
                if (trial < current) {
                    current = trial;
                    for (auto g : fused) slopes[g] = moved;
                    center = moved;
                    break;
                }
            }
        }

        // then one weighted geometric median step per center
        std::vector<Eigen::VectorXd> points;
        for (auto g : groups) points.push_back(slopes[g]);
        for (int c = 0; c < k; ++c) {
            std::vector<double> weights(points.size(), 1.0);
            for (std::size_t i = 0; i < points.size(); ++i) {
                for (int l = 0; l < k; ++l) {
                    if (l != c) weights[i] *= (points[i] - centers[static_cast<std::size_t>(l)]).norm();
                }
            }
            auto& center = centers[static_cast<std::size_t>(c)];
            const Eigen::VectorXd candidate = weighted_geometric_median(
                points, weights, center, config.weiszfeld_max_iter, config.weiszfeld_tol);
            if (center_objective(points, weights, candidate) <= center_objective(points, weights, center)) {
                center = candidate;
            }
        }

        double updated = classo_objective(profiles, groups, slopes, centers, sol.rho);

        // re-seed empty clusters at the slope farthest from every center,
        // kept only when the objective does not increase
        for (int c = 0; c < k; ++c) {
            bool empty = true;
            for (auto g : groups) {
                if (nearest_center(slopes[g], centers) == c) {
                    empty = false;
                    break;
                }
            }
            if (!empty) continue;
            std::size_t far = groups.front();
            double far_dist = -1.0;
            for (auto g : groups) {
                double m = std::numeric_limits<double>::infinity();
                for (const auto& ctr : centers) m = std::min(m, (slopes[g] - ctr).norm());
                if (m > far_dist) {
                    far_dist = m;
                    far = g;
                }
            }
            const Eigen::VectorXd saved = centers[static_cast<std::size_t>(c)];
            centers[static_cast<std::size_t>(c)] = slopes[far];
            const double reseeded = classo_objective(profiles, groups, slopes, centers, sol.rho);
            if (reseeded <= updated) {
                updated = reseeded;
            } else {
                centers[static_cast<std::size_t>(c)] = saved;
            }
        }

        sol.objective_trace.push_back(updated);
        sol.sweeps = sweep;
        const double change = std::abs(objective - updated) / std::max(std::abs(objective), 1e-300);
        objective = updated;
        if (change < config.rel_tol) {
            sol.converged = true;
            break;
        }
    }

    sol.membership.assign(G, -1);
    for (auto g : groups) sol.membership[g] = nearest_center(slopes[g], centers);
    sol.empty_clusters.assign(static_cast<std::size_t>(k), true);
    for (auto g : groups) sol.empty_clusters[static_cast<std::size_t>(sol.membership[g])] = false;
    return sol;
}

std::vector<std::optional<NplFit>> post_classification_fit(const Panel& panel,
                                                           const std::vector<int>& membership,
                                                           int k, const NplConfig& config,
                                                           const PerGroupFits* first_step) {
    if (membership.size() != panel.size()) {
        throw ValidationError("post_classification_fit: membership does not cover the panel");
    }
    std::vector<std::optional<NplFit>> out(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t g = 0; g < membership.size(); ++g) {
            if (membership[g] == c) members.push_back(g);
        }
        if (members.empty()) continue;
        NplStart start;
        if (first_step) {
            std::vector<Eigen::VectorXd> ccp;
            for (auto g : members) {
                const auto& f = first_step->fits[g];
                ccp.push_back(f.ccp.empty() ? default_initial_ccp(panel.group(g)) : f.ccp[0]);
            }
            start.ccp = std::move(ccp);
        }
        out[static_cast<std::size_t>(c)] = npl_fit(panel.subset(members), config, start);
    }
    return out;
}

} // namespace hetpeer
