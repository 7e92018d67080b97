#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedshift/ridge.hpp"

using namespace fedshift;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("weighted ridge solve: hand-checked systems") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd y(2);
    y << 1.0, 2.0;

    SECTION("identity weights reduce to ordinary ridge") {
        Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
        Eigen::VectorXd theta = weighted_ridge_solve(X, w, y, 1.0);
        REQUIRE_THAT(theta[0], WithinRel(0.5, 1e-14));
        REQUIRE_THAT(theta[1], WithinRel(1.0, 1e-14));
    }
    SECTION("nonuniform weights") {
        Eigen::VectorXd w(2);
        w << 2.0, 1.0;
        Eigen::VectorXd theta = weighted_ridge_solve(X, w, y, 1.0);
        REQUIRE_THAT(theta[0], WithinRel(2.0 / 3.0, 1e-14));
        REQUIRE_THAT(theta[1], WithinRel(1.0, 1e-14));
    }
    SECTION("rank-deficient system without regularization fails") {
        Eigen::MatrixXd Xd(2, 2);
        Xd << 1.0, 1.0, 1.0, 1.0;
        Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
        REQUIRE_THROWS_AS(weighted_ridge_solve(Xd, w, y, 0.0), std::runtime_error);
    }
}

TEST_CASE("fixed-design bias and variance: limiting cases") {
    auto rng = make_stream(3, "inst");
    RidgeInstance inst = sample_dense_instance(rng);

    SECTION("vanishing regularization kills the bias") {
        RidgeInstance weak = inst;
        weak.lambda_reg = 1e-8;
        auto [b, v] = bias_variance_fixed(weak);
        REQUIRE(b < 1e-10);
        REQUIRE(v > 0);
    }
    SECTION("zero noise kills the variance") {
        RidgeInstance quiet = inst;
        quiet.noise_var = 0.0;
        auto [b, v] = bias_variance_fixed(quiet);
        REQUIRE(v == 0.0);
        REQUIRE(b > 0);
    }
}

TEST_CASE("one-hot closed form: scalar hand example") {
    OneHotSpectrum spec;
    spec.mu = {10};
    spec.w = {1.0};
    spec.lambda_reg = 1.0;
    const double noise_var = 0.09;
    auto [b, v] = bias_variance_onehot(spec, {1.0}, noise_var, {0.5});
    REQUIRE_THAT(b, WithinRel(0.5 / 121.0, 1e-14));
    REQUIRE_THAT(v, WithinRel(noise_var * 5.0 / 121.0, 1e-14));

    RidgeInstance inst = onehot_instance(spec, {1.0}, noise_var, {0.5});
    auto [bm, vm] = bias_variance_fixed(inst);
    REQUIRE_THAT(b, WithinRel(bm, 1e-12));
    REQUIRE_THAT(v, WithinRel(vm, 1e-12));
}

TEST_CASE("one-hot closed form: unobserved coordinate and unit weights") {
    OneHotSpectrum spec;
    spec.mu = {0, 7};
    spec.w = {0.5, 1.3};
    spec.lambda_reg = 0.8;
    std::vector<double> theta = {2.0, -1.0};
    std::vector<double> lte = {0.6, 0.4};
    auto [b, v] = bias_variance_onehot(spec, theta, 0.25, lte);
    // coordinate with mu = 0 contributes theta^2 * lambda' to bias and nothing to variance
    const double expected_b0 = 4.0 * 0.6;
    const double d1 = 7.0 * 1.3 + 0.8;
    REQUIRE_THAT(b, WithinRel(expected_b0 + 0.64 * 1.0 * 0.4 / (d1 * d1), 1e-12));
    REQUIRE_THAT(v, WithinRel(0.25 * 0.4 * 7.0 * 1.69 / (d1 * d1), 1e-12));

    // w = 1 recovers the unweighted formulas
    OneHotSpectrum erm = spec;
    erm.w = {1.0, 1.0};
    auto [be, ve] = bias_variance_onehot(erm, theta, 0.25, lte);
    double expect_be = 0.64 * 4.0 * 0.6 / (0.8 * 0.8) + 0.64 * 1.0 * 0.4 / ((7.0 + 0.8) * (7.0 + 0.8));
    double expect_ve = 0.25 * (0.0 + 0.4 * 7.0 / ((7.0 + 0.8) * (7.0 + 0.8)));
    REQUIRE_THAT(be, WithinRel(expect_be, 1e-12));
    REQUIRE_THAT(ve, WithinRel(expect_ve, 1e-12));
}

TEST_CASE("closed form agrees with the matrix path on random one-hot instances") {
    auto rng = make_stream(17, "agree");
    for (int rep = 0; rep < 30; ++rep) {
        OneHotComparison inst = sample_theorem2_instance(rng);
        auto [b, v] = bias_variance_onehot(inst.spectrum, inst.theta_star, inst.noise_var,
                                           inst.test_spectrum);
        RidgeInstance mat = onehot_instance(inst.spectrum, inst.theta_star, inst.noise_var,
                                            inst.test_spectrum);
        auto [bm, vm] = bias_variance_fixed(mat);
        REQUIRE_THAT(b + v, WithinRel(bm + vm, 1e-10));
    }
}

TEST_CASE("one-hot risks depend on weights only through the per-coordinate aggregates") {
    // three rows on coordinate 0 with weights summing to 6 and squares to 14
    auto make = [&](std::vector<double> row_weights) {
        RidgeInstance inst;
        inst.X = Eigen::MatrixXd::Zero(5, 2);
        inst.weights = Eigen::VectorXd::Zero(5);
        for (int r = 0; r < 3; ++r) {
            inst.X(r, 0) = 1.0;
            inst.weights(r) = row_weights[static_cast<std::size_t>(r)];
        }
        for (int r = 3; r < 5; ++r) {
            inst.X(r, 1) = 1.0;
            inst.weights(r) = 0.7;
        }
        inst.lambda_reg = 0.9;
        inst.noise_var = 0.3;
        inst.theta_star = Eigen::Vector2d(1.0, -2.0);
        inst.test_spectrum = Eigen::Vector2d(0.5, 1.5);
        inst.y = inst.X * inst.theta_star;
        return inst;
    };
    auto [b1, v1] = bias_variance_fixed(make({1.0, 2.0, 3.0}));
    auto [b2, v2] = bias_variance_fixed(make({3.0, 1.0, 2.0}));  // permutation
    // non-permutation weights with the same sum and sum of squares:
    // w1 = 0.9, then w2 + w3 = 5.1 and w2*w3 = (5.1^2 - (14 - 0.81)) / 2
    const double disc = std::sqrt(5.1 * 5.1 - 4.0 * ((5.1 * 5.1 - 13.19) / 2.0));
    auto [b3, v3] = bias_variance_fixed(make({0.9, (5.1 + disc) / 2.0, (5.1 - disc) / 2.0}));
    REQUIRE_THAT(b1, WithinRel(b2, 1e-12));
    REQUIRE_THAT(v1, WithinRel(v2, 1e-12));
    REQUIRE_THAT(b1, WithinRel(b3, 1e-9));
    REQUIRE_THAT(v1, WithinRel(v3, 1e-9));
}

TEST_CASE("monte carlo excess risk") {
    OneHotSpectrum spec;
    spec.mu = {12, 7, 30};
    spec.w = {0.8, 1.1, 0.6};
    spec.lambda_reg = 2.0;
    std::vector<double> theta = {1.0, -0.5, 0.25};
    std::vector<double> lte = {0.5, 1.0, 0.2};

    SECTION("zero noise reproduces the bias exactly") {
        RidgeInstance inst = onehot_instance(spec, theta, 0.0, lte);
        auto mc = excess_risk_mc(inst, 100, 5);
        auto [b, v] = bias_variance_onehot(spec, theta, 0.0, lte);
        REQUIRE(v == 0.0);
        REQUIRE_THAT(mc.mean, WithinRel(b, 1e-12));
        REQUIRE(mc.std_error <= 1e-14);
    }
    SECTION("mc mean matches bias plus variance within three standard errors") {
        RidgeInstance inst = onehot_instance(spec, theta, 0.36, lte);
        auto mc = excess_risk_mc(inst, 10000, 6);
        auto [b, v] = bias_variance_onehot(spec, theta, 0.36, lte);
        REQUIRE(std::abs(mc.mean - (b + v)) <= 3.0 * mc.std_error);
    }
    SECTION("all-zero weights give the null estimator") {
        OneHotSpectrum zero = spec;
        zero.w = {0.0, 0.0, 0.0};
        RidgeInstance inst = onehot_instance(zero, theta, 0.5, lte);
        auto mc = excess_risk_mc(inst, 50, 7);
        double null_risk = 0;
        for (std::size_t i = 0; i < 3; ++i) null_risk += theta[i] * theta[i] * lte[i];
        REQUIRE_THAT(mc.mean, WithinRel(null_risk, 1e-12));
    }
}

TEST_CASE("dominance condition checks") {
    SECTION("equal spectra with w at the shrinkage factor pass") {
        OneHotSpectrum spec;
        spec.mu = {9};
        spec.lambda_reg = 1.0;
        spec.w = {spec.xi(0)};
        auto rep = theorem2_condition(spec, {0.7}, {0.7});
        REQUIRE(rep.holds);
        REQUIRE(rep.remark_interval_holds);
        REQUIRE(rep.forms_agree);
    }
    SECTION("a four-fold eigenvalue jump with a small weight fails the lower bound") {
        OneHotSpectrum spec;
        spec.mu = {9};  // xi = 0.1
        spec.lambda_reg = 1.0;
        spec.w = {0.5};
        auto rep = theorem2_condition(spec, {1.0}, {4.0});
        REQUIRE_THAT(spec.xi(0), WithinRel(0.1, 1e-14));
        REQUIRE(!rep.holds);  // lower bound sqrt(4) - 1 = 1 > 0.5
    }
    SECTION("sampled feasible instances never lose to unweighted ridge") {
        auto rng = make_stream(23, "t2");
        for (int rep = 0; rep < 300; ++rep) {
            OneHotComparison inst = sample_theorem2_instance(rng);
            auto verdict =
                theorem2_condition(inst.spectrum, inst.train_spectrum, inst.test_spectrum);
            REQUIRE(verdict.holds);
            REQUIRE(verdict.forms_agree);
            auto [r_hat, r_erm] = onehot_risks(inst);
            REQUIRE(r_hat <= r_erm + 1e-10 * std::max(1.0, std::abs(r_erm)));
        }
    }
}

TEST_CASE("counterexample condition checks") {
    SECTION("equal spectra satisfy the precondition at xi = 1/2") {
        OneHotSpectrum spec;
        spec.mu = {1};
        spec.lambda_reg = 1.0;  // xi = 0.5
        spec.w = {0.4};
        REQUIRE(prop5_condition(spec, {1.0}, {1.0}));
    }
    SECTION("sampled instances: unweighted ridge dominates and w stays below one") {
        auto rng = make_stream(29, "p5");
        for (int rep = 0; rep < 300; ++rep) {
            OneHotComparison inst = sample_prop5_instance(rng);
            REQUIRE(prop5_condition(inst.spectrum, inst.train_spectrum, inst.test_spectrum));
            for (double w : inst.spectrum.w) REQUIRE(w <= 1.0);
            auto [r_hat, r_erm] = onehot_risks(inst);
            REQUIRE(r_erm <= r_hat + 1e-10 * std::max(1.0, std::abs(r_hat)));
        }
    }
}

TEST_CASE("implicit-regularization identity at w = sqrt(test/train)") {
    auto rng = make_stream(31, "imp");
    std::uniform_int_distribution<long> mu_pick(1, 40);
    for (int rep = 0; rep < 50; ++rep) {
        OneHotSpectrum spec;
        spec.lambda_reg = detail::log_uniform(rng, 1e-2, 10.0);
        std::vector<double> ltr, lte, theta;
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int i = 0; i < 4; ++i) {
            spec.mu.push_back(mu_pick(rng));
            ltr.push_back(detail::log_uniform(rng, 1e-2, 10.0));
            lte.push_back(detail::log_uniform(rng, 1e-2, 10.0));
            theta.push_back(gauss(rng));
            spec.w.push_back(std::sqrt(lte.back() / ltr.back()));
        }
        auto [b, v] = bias_variance_onehot(spec, theta, 0.0, lte);
        (void)v;
        double alt = 0;
        for (std::size_t i = 0; i < 4; ++i) {
            const double lam = spec.lambda_reg;
            const double denom = static_cast<double>(spec.mu[i]) +
                                 std::sqrt(ltr[i] / lte[i]) * lam;
            alt += lam * lam * theta[i] * theta[i] * ltr[i] / (denom * denom);
        }
        REQUIRE_THAT(b, WithinAbs(alt, 1e-12 * std::max(1.0, std::abs(alt))));
    }
}

TEST_CASE("eigenvalue ratio report") {
    SECTION("identical sample sets give unit ratios") {
        auto rng = make_stream(41, "er");
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<std::vector<double>> pts(60, std::vector<double>(3));
        for (auto& x : pts)
            for (double& v : x) v = g(rng);
        auto rows = eigen_ratio_report(pts, pts, 0.5);
        REQUIRE(rows.size() == 3);
        for (const auto& r : rows) {
            REQUIRE_THAT(r.sqrt_ratio, WithinRel(1.0, 1e-9));
            REQUIRE(r.bound > 1.0);
        }
    }
    SECTION("shrunk test spectrum keeps every ratio below one and inside the interval") {
        auto rng = make_stream(43, "er2");
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<std::vector<double>> train(400, std::vector<double>(3));
        std::vector<std::vector<double>> test(400, std::vector<double>(3));
        for (auto& x : train)
            for (double& v : x) v = g(rng);
        for (std::size_t i = 0; i < test.size(); ++i)
            for (std::size_t j = 0; j < 3; ++j) test[i][j] = 0.5 * train[i][j];
        auto rows = eigen_ratio_report(train, test, 1.0);
        for (const auto& r : rows) {
            REQUIRE(r.sqrt_ratio <= 1.0 + 1e-9);
            REQUIRE(r.sqrt_ratio < r.bound);
        }
    }
    SECTION("rank-deficient data truncates the report") {
        std::vector<std::vector<double>> train(50, {1.0, 2.0, -1.0});
        std::vector<std::vector<double>> test(50, {1.0, 2.0, -1.0});
        auto rows = eigen_ratio_report(train, test, 1.0);
        REQUIRE(rows.size() == 1);
    }
}

TEST_CASE("decomposition identity across random dense instances") {
    auto rng = make_stream(53, "mcid");
    int within = 0;
    for (int i = 0; i < 5; ++i) {
        RidgeInstance inst = sample_dense_instance(rng);
        auto [b, v] = bias_variance_fixed(inst);
        auto mc = excess_risk_mc(inst, 4000, derive_seed(53, "trial", static_cast<std::uint64_t>(i)));
        if (std::abs(mc.mean - (b + v)) <= 3.0 * mc.std_error) ++within;
    }
    REQUIRE(within >= 4);
}
