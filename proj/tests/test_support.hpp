#pragma once
// Random instance generators shared by the unit and acceptance suites.
#include "hetpeer/panel.hpp"
#include "hetpeer/rng.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace hetpeer::testing {

inline Network random_network(int n, int max_degree, Rng& rng) {
    Network net(static_cast<std::size_t>(n));
    std::vector<int> others;
    for (int i = 0; i < n; ++i) {
        others.clear();
        for (int j = 0; j < n; ++j) {
            if (j != i) others.push_back(j);
        }
        const int cap = std::min<int>(max_degree, n - 1);
        const int k = std::uniform_int_distribution<int>(0, std::max(cap, 0))(rng);
        std::shuffle(others.begin(), others.end(), rng);
        net[static_cast<std::size_t>(i)].assign(others.begin(), others.begin() + k);
    }
    return net;
}

inline std::vector<std::string> sequential_ids(int n, const std::string& prefix = "i") {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
    return ids;
}

inline GroupData random_group(int n, int p, Rng& rng, const std::string& id = "g",
                              int max_degree = 5) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd x(n, p);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < p; ++k) x(i, k) = normal(rng);
    }
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y[i] = std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0;
    return GroupData(id, sequential_ids(n), std::move(y), std::move(x),
                     random_network(n, max_degree, rng));
}

inline GroupData group_without_network(const std::string& id, Eigen::VectorXd y,
                                       Eigen::MatrixXd x) {
    const int n = static_cast<int>(y.size());
    return GroupData(id, sequential_ids(n), std::move(y), std::move(x),
                     Network(static_cast<std::size_t>(n)));
}

inline Eigen::VectorXd random_ccp(int n, Rng& rng) {
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p[i] = 0.02 + 0.96 * uniform_open(rng);
    return p;
}

} // namespace hetpeer::testing

#include "hetpeer/equilibrium.hpp"
#include "hetpeer/logit.hpp"

namespace hetpeer::testing {

/// One group from the peer-effects DGP at equilibrium; x = 0.1 mu + N(0, 1).
inline GroupData dgp_group(const std::string& id, int n, double mu, const SlopeParams& slope,
                           Rng& rng) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd x(n, slope.covariate_slopes.size());
    for (int i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < x.cols(); ++k) x(i, k) = 0.1 * mu + normal(rng);
    }
    GroupData draft(id, sequential_ids(n), Eigen::VectorXd::Zero(n), x,
                    random_network(n, 5, rng));
    const GroupParams params{mu, slope};
    const auto eq = solve_equilibrium(draft, params);
    return draft.with_outcomes(simulate_outcomes(draft, params, eq.values, rng));
}

/// Panel from the peer-effects DGP with one common slope and standard
/// normal fixed effects.
inline Panel homogeneous_panel(int groups, int n, const SlopeParams& slope, std::uint64_t seed,
                               std::vector<double>* true_mu = nullptr) {
    std::vector<GroupData> gs;
    for (int g = 0; g < groups; ++g) {
        Rng rng = make_stream(seed, static_cast<std::uint64_t>(g));
        const double mu = std::normal_distribution<double>()(rng);
        gs.push_back(dgp_group("g" + std::to_string(g), n, mu, slope, rng));
        if (true_mu) true_mu->push_back(mu);
    }
    return Panel(std::move(gs));
}

/// Groups alternate between the slopes in `slopes`; label g % slopes.size().
inline Panel mixed_panel(int groups, int n, const std::vector<SlopeParams>& slopes,
                         std::uint64_t seed) {
    std::vector<GroupData> gs;
    for (int g = 0; g < groups; ++g) {
        Rng rng = make_stream(seed, static_cast<std::uint64_t>(g));
        const double mu = std::normal_distribution<double>()(rng);
        gs.push_back(dgp_group("g" + std::to_string(g), n, mu,
                               slopes[static_cast<std::size_t>(g) % slopes.size()], rng));
    }
    return Panel(std::move(gs));
}

/// Fixed-effects logit MLE by dense joint Newton over (mu_1..mu_G, beta),
/// for panels without peer terms. Objective: mean over groups of the mean
/// negative log-likelihood within each group.
struct FeLogitOracle {
    std::vector<double> mu;
    Eigen::VectorXd beta;
};

inline FeLogitOracle fe_logit_oracle(const Panel& panel) {
    const int G = static_cast<int>(panel.size());
    const int p = panel.covariate_dim();
    const int d = G + p;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    auto objective = [&](const Eigen::VectorXd& v) {
        double total = 0.0;
        for (int g = 0; g < G; ++g) {
            const auto& grp = panel.group(static_cast<std::size_t>(g));
            double s = 0.0;
            for (int i = 0; i < grp.size(); ++i) {
                const double t = v[g] + grp.x().row(i).dot(v.tail(p));
                s += std::log(1.0 + std::exp(t)) - grp.y()[i] * t;
            }
            total += s / grp.size();
        }
        return total / G;
    };
    for (int it = 0; it < 100; ++it) {
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(d);
        Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(d, d);
        for (int g = 0; g < G; ++g) {
            const auto& grp = panel.group(static_cast<std::size_t>(g));
            const double scale = 1.0 / (grp.size() * static_cast<double>(G));
            for (int i = 0; i < grp.size(); ++i) {
                Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
                z[g] = 1.0;
                z.tail(p) = grp.x().row(i).transpose();
                const double prob = 1.0 / (1.0 + std::exp(-z.dot(w)));
                grad += scale * (prob - grp.y()[i]) * z;
                hess += scale * prob * (1.0 - prob) * z * z.transpose();
            }
        }
        if (grad.lpNorm<Eigen::Infinity>() < 1e-13) break;
        const Eigen::VectorXd step = hess.ldlt().solve(-grad);
        double t = 1.0;
        const double f0 = objective(w);
        while (objective(w + t * step) > f0 && t > 1e-10) t *= 0.5;
        w += t * step;
    }
    return {std::vector<double>(w.data(), w.data() + G), w.tail(p)};
}

} // namespace hetpeer::testing
