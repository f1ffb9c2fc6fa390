#include "hetpeer/bootstrap.hpp"
#include "hetpeer/error.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace hetpeer;

namespace {

// Type-7 quantile by explicit sort and index arithmetic.
double quantile_oracle(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const auto j = static_cast<std::size_t>(h);
    if (j + 1 >= v.size()) return v.back();
    return v[j] + (h - static_cast<double>(j)) * (v[j + 1] - v[j]);
}

BootstrapDraws synthetic_draws(int m, int failures, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal;
    BootstrapDraws d;
    d.estimate = Eigen::Vector3d(0.5, -1.0, 2.0);
    d.replications = m + failures;
    d.failures = failures;
    for (int b = 0; b < m; ++b) d.deltas.push_back(Eigen::Vector3d(normal(rng), normal(rng), normal(rng)));
    return d;
}

} // namespace

TEST_CASE("empirical_quantile") {
    CHECK(empirical_quantile({-1.0, 0.0, 1.0}, 0.5) == 0.0);
    CHECK(empirical_quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
    CHECK(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 0.0) == 1.0);
    CHECK(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 1.0) == 4.0);
    CHECK(empirical_quantile({7.0}, 0.3) == 7.0);
    CHECK_THROWS_AS(empirical_quantile({}, 0.5), ValidationError);
    CHECK_THROWS_AS(empirical_quantile({1.0}, 1.5), ValidationError);

    Rng rng(3);
    std::normal_distribution<double> normal;
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> v(1 + rng() % 40);
        for (auto& x : v) x = normal(rng);
        for (double q : {0.0, 0.025, 0.1, 0.5, 0.77, 0.975, 1.0}) {
            CHECK(empirical_quantile(v, q) == quantile_oracle(v, q));
        }
    }
}

TEST_CASE("summarize_contrast") {
    SUBCASE("two symmetric draws leave the point unchanged") {
        BootstrapDraws d;
        d.estimate = Eigen::Vector2d(1.25, -0.5);
        d.replications = 2;
        d.deltas = {Eigen::Vector2d(-0.3, 0.1), Eigen::Vector2d(0.3, -0.1)};
        const auto rep = summarize_contrast(d, Eigen::Vector2d(1.0, 0.0), 0.05);
        CHECK(rep.point == 1.25);
        CHECK(rep.debiased == 1.25);
        CHECK(rep.ci_lower <= rep.ci_upper);
    }
    SUBCASE("definitions, ordering, equivariance and the batch API") {
        const auto d = synthetic_draws(199, 0, 11);
        const Eigen::Vector3d c(0.3, -1.0, 0.25);
        const auto rep = summarize_contrast(d, c, 0.1);
        std::vector<double> draws;
        for (const auto& delta : d.deltas) draws.push_back(c.dot(delta));
        CHECK(rep.bootstrap_draws == draws);
        CHECK(rep.point == c.dot(d.estimate));
        CHECK(rep.debiased == rep.point - quantile_oracle(draws, 0.5));
        CHECK(rep.ci_lower == rep.point - quantile_oracle(draws, 0.95));
        CHECK(rep.ci_upper == rep.point - quantile_oracle(draws, 0.05));
        CHECK(rep.ci_lower <= rep.debiased);
        CHECK(rep.debiased <= rep.ci_upper);

        for (double s : {2.0, 0.5}) {
            const auto scaled = summarize_contrast(d, s * c, 0.1);
            CHECK(scaled.point == s * rep.point);
            CHECK(scaled.debiased == s * rep.debiased);
            CHECK(scaled.ci_lower == s * rep.ci_lower);
            CHECK(scaled.ci_upper == s * rep.ci_upper);
        }

        const auto batch = summarize_coordinates(d, 0.1);
        REQUIRE(batch.size() == 3);
        for (int j = 0; j < 3; ++j) {
            const auto single = summarize_contrast(d, Eigen::Vector3d::Unit(j), 0.1);
            CHECK(batch[static_cast<std::size_t>(j)].debiased == single.debiased);
            CHECK(batch[static_cast<std::size_t>(j)].ci_lower == single.ci_lower);
            CHECK(batch[static_cast<std::size_t>(j)].ci_upper == single.ci_upper);
        }
    }
    SUBCASE("failure policy") {
        CHECK(summarize_contrast(synthetic_draws(90, 10, 1), Eigen::Vector3d::Unit(0), 0.05).reliable);
        const auto bad = summarize_contrast(synthetic_draws(89, 11, 1), Eigen::Vector3d::Unit(0), 0.05);
        CHECK_FALSE(bad.reliable);
        CHECK(bad.failures == 11);
        CHECK_THROWS_AS(summarize_contrast(synthetic_draws(0, 5, 1), Eigen::Vector3d::Unit(0), 0.05),
                        ConvergenceError);
        CHECK_THROWS_AS(summarize_contrast(synthetic_draws(5, 0, 1), Eigen::Vector2d::Unit(0), 0.05),
                        ValidationError);
    }
}

TEST_CASE("simulate_from_fit draws from the fitted index") {
    const auto panel = testing::homogeneous_panel(4, 50, SlopeParams{1.0, Eigen::VectorXd::Constant(1, 0.5)}, 8);
    const auto fit = npl_fit(panel);
    Eigen::VectorXd total = Eigen::VectorXd::Zero(200);
    Eigen::VectorXd prob(200);
    for (std::size_t g = 0; g < 4; ++g) {
        const Eigen::VectorXd pbar = mean_peer_belief(panel.group(g), fit.ccp[g]);
        for (int i = 0; i < 50; ++i) {
            prob[static_cast<Eigen::Index>(g) * 50 + i] = logistic_cdf(
                fit.fixed_effects[g] + fit.slope.peer_effect * pbar[i] +
                panel.group(g).x().row(i).dot(fit.slope.covariate_slopes));
        }
    }
    const int draws = 400;
    Rng rng(5);
    for (int r = 0; r < draws; ++r) {
        const auto sim = simulate_from_fit(panel, fit, rng);
        for (std::size_t g = 0; g < 4; ++g) total.segment(static_cast<Eigen::Index>(g) * 50, 50) += sim.group(g).y();
    }
    const double expected = prob.sum() * draws;
    const double sd = std::sqrt((prob.array() * (1.0 - prob.array())).sum() * draws);
    CHECK(std::abs(total.sum() - expected) < 3.0 * sd);
}

TEST_CASE("bootstrap_draws is reproducible and schedule free") {
    const auto panel = testing::homogeneous_panel(5, 40, SlopeParams{0.5, Eigen::VectorXd::Constant(1, 1.0)}, 9);
    const auto fit = npl_fit(panel);
    BootstrapConfig config;
    config.replications = 12;
    config.seed = 99;
    const auto a = bootstrap_draws(panel, fit, config);
    const auto b = bootstrap_draws(panel, fit, config);
    config.threads = 3;
    const auto c = bootstrap_draws(panel, fit, config);
    REQUIRE(a.deltas.size() == b.deltas.size());
    REQUIRE(a.deltas.size() == c.deltas.size());
    for (std::size_t i = 0; i < a.deltas.size(); ++i) {
        CHECK(a.deltas[i] == b.deltas[i]);
        CHECK(a.deltas[i] == c.deltas[i]);
    }
    CHECK(a.failures + static_cast<int>(a.deltas.size()) == 12);
    config.seed = 100;
    CHECK(bootstrap_draws(panel, fit, config).deltas[0] != a.deltas[0]);

    const auto rep = bootstrap_contrast(panel, fit, Eigen::Vector2d(0.0, 1.0), config);
    CHECK(rep.replications == 12);
    CHECK_THROWS_AS(bootstrap_contrast(panel, fit, Eigen::Vector2d::Zero(), config), ValidationError);
    config.replications = 1;
    CHECK_THROWS_AS(bootstrap_draws(panel, fit, config), ValidationError);
}

TEST_CASE("bootstrap intervals reach nominal coverage on a homogeneous design") {
    const SlopeParams truth{0.75, Eigen::VectorXd::Constant(1, 1.0)};
    const int reps = 200;
    int covered_peer = 0, covered_x = 0;
    for (int r = 0; r < reps; ++r) {
        const auto panel = testing::homogeneous_panel(10, 40, truth, 10'000 + static_cast<std::uint64_t>(r));
        const auto fit = npl_fit(panel);
        REQUIRE(fit.converged);
        BootstrapConfig config;
        config.replications = 99;
        config.seed = static_cast<std::uint64_t>(r);
        const auto reports = bootstrap_coordinates(panel, fit, config);
        covered_peer += reports[0].ci_lower <= 0.75 && 0.75 <= reports[0].ci_upper;
        covered_x += reports[1].ci_lower <= 1.0 && 1.0 <= reports[1].ci_upper;
    }
    const double peer = covered_peer / static_cast<double>(reps);
    const double x = covered_x / static_cast<double>(reps);
    MESSAGE("coverage peer " << peer << ", x " << x);
    CHECK(peer >= 0.90);
    CHECK(peer <= 0.98);
    CHECK(x >= 0.90);
    CHECK(x <= 0.98);
}
