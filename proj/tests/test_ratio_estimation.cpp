#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "fedshift/dataset.hpp"
#include "fedshift/fed_core.hpp"
#include "fedshift/nnbd.hpp"
#include "fedshift/ratio_model.hpp"
#include "fedshift/supremum.hpp"

using namespace fedshift;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<std::vector<double>> random_points(int n, int d, std::uint64_t seed, double scale = 1.0) {
    auto rng = make_stream(seed, "pts");
    std::normal_distribution<double> g(0.0, scale);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n));
    for (auto& x : out) {
        x.resize(static_cast<std::size_t>(d));
        for (double& v : x) v = g(rng);
    }
    return out;
}

// K=1 single-client separable fixture with true maximal ratio 20: five rare
// train classes are the heavy test classes and vice versa.
ShiftScenario ratio20_fixture(std::uint64_t seed, int dim = 10, double sigma = 0.5,
                              long small_count = 50, long big_count = 1000) {
    ShiftScenario sc;
    sc.num_classes = 10;
    sc.feature_dim = dim;
    sc.base = BaseGenerator::GaussianClusters;
    sc.cluster_sep = 4.0;
    sc.cluster_sigma = sigma;
    sc.seed = seed;
    std::vector<long> tr(10, big_count), te(10, small_count);
    for (int c = 0; c < 5; ++c) {
        tr[static_cast<std::size_t>(c)] = small_count;
        te[static_cast<std::size_t>(c)] = big_count;
    }
    sc.train_counts = {tr};
    sc.test_counts = {te};
    return sc;
}

constexpr double kGradStep = 1e-5;

void check_objective_gradient(BregmanVariant variant, RatioModel& model, double C, int K,
                              const std::vector<std::vector<double>>& tb,
                              const std::vector<std::vector<double>>& eb) {
    std::vector<double> grad;
    nnbd_objective_with_grad(variant, model, C, K, tb, eb, grad);
    auto& theta = model.params();
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + kGradStep;
        const double up = nnbd_objective(variant, model, C, K, tb, eb);
        theta[i] = keep - kGradStep;
        const double down = nnbd_objective(variant, model, C, K, tb, eb);
        theta[i] = keep;
        const double fd = (up - down) / (2 * kGradStep);
        REQUIRE_THAT(grad[i], WithinAbs(fd, 1e-4 * std::max(1.0, std::abs(fd))));
    }
}

}  // namespace

TEST_CASE("ratio model outputs stay inside (floor, r_max]") {
    auto inputs = random_points(200, 3, 5, 3.0);
    std::vector<RatioModel> models;
    models.push_back(RatioModel::linear_softplus(3, 1.5, 11));
    models.push_back(RatioModel::mlp_softplus(3, 4, 1.5, 12));
    models.push_back(RatioModel::class_table({{0, 0, 0}, {2, 2, 2}}, 1.5));
    auto rng = make_stream(77, "param_noise");
    std::normal_distribution<double> g(0.0, 4.0);
    for (auto& m : models) {
        for (int rep = 0; rep < 5; ++rep) {
            for (double& p : m.params()) p = g(rng);
            for (const auto& x : inputs) {
                const double r = m.evaluate(x);
                REQUIRE(r >= RatioModel::kFloor);
                REQUIRE(r <= m.r_max());
            }
        }
    }
}

TEST_CASE("objective gradient matches finite differences on both hinge branches") {
    const int K = 2;
    for (auto variant : {BregmanVariant::LSIF, BregmanVariant::UKL, BregmanVariant::LR,
                         BregmanVariant::PU}) {
        const double r_max = variant == BregmanVariant::PU ? 0.999 : 50.0;
        // separated batches so the bracket sign can be steered via C
        auto tb = random_points(16, 2, 31, 0.5);
        auto eb = random_points(16, 2, 32, 0.5);
        for (auto& x : eb) x[0] += 2.0;

        RatioModel linear = RatioModel::linear_softplus(2, r_max, 41);
        RatioModel mlp = RatioModel::mlp_softplus(2, 3, r_max, 42);
        for (RatioModel* m : {&linear, &mlp}) {
            if (variant == BregmanVariant::PU)
                for (double& p : m->params()) p *= 0.2;  // keep outputs off the PU boundary
            auto b0 = detail::nnbd_terms(variant, *m, 0.05, K, tb, eb, false);
            auto b1 = detail::nnbd_terms(variant, *m, 5.0, K, tb, eb, false);
            REQUIRE(b0.bracket > 0);  // small C: positive branch
            REQUIRE(b1.bracket < 0);  // large C: negative branch
            check_objective_gradient(variant, *m, 0.05, K, tb, eb);
            check_objective_gradient(variant, *m, 5.0, K, tb, eb);
        }
    }
}

TEST_CASE("objective value: hinge identity on both signs") {
    RatioModel m = RatioModel::class_table({{0.0}}, 4.0);
    m.params()[0] = std::log(std::expm1(2.0));  // r == 2 everywhere
    auto batch = random_points(8, 1, 3);
    // K=1, equal batches, constant model: bracket = (1-C) * ell1(2)
    const double l1 = ell1(BregmanVariant::LSIF, 2.0);
    const double l2 = ell2(BregmanVariant::LSIF, 2.0, 0.25);
    const double obj = nnbd_objective(BregmanVariant::LSIF, m, 0.25, 1, batch, batch);
    REQUIRE_THAT(obj, WithinRel((1 - 0.25) * l1 + l2, 1e-12));
    // push the bracket negative: only the second term survives
    const double l2n = ell2(BregmanVariant::LSIF, 2.0, 3.0);
    const double objn = nnbd_objective(BregmanVariant::LSIF, m, 3.0, 1, batch, batch);
    REQUIRE_THAT(objn, WithinRel(l2n, 1e-12));
}

TEST_CASE("histogram supremum: identical sample lists give exactly one") {
    auto pts = random_points(300, 2, 9);
    for (int M : {1, 4, 16}) {
        auto est = estimate_supremum_histogram(pts, pts, 1, M);
        REQUIRE(est.r_tilde == 1.0);
        REQUIRE(est.C == 1.0);
    }
}

TEST_CASE("histogram supremum recovers the separable max ratio in one dimension") {
    ShiftScenario sc = ratio20_fixture(17, 1, 0.05);
    // means 0..9 on the line via explicit class means
    sc.class_means.clear();
    for (int c = 0; c < 10; ++c) sc.class_means.push_back({static_cast<double>(c)});
    auto data = make_target_shift_scenario(sc);
    std::vector<std::vector<double>> train;
    for (const auto& s : data[0].train) train.push_back(s.x);
    auto est = estimate_supremum_histogram(train, data[0].test_pool, 1, 10);
    REQUIRE(exact_combined_ratio(0, sc, 0) == 20.0);
    REQUIRE(est.r_tilde > 15.0);
    REQUIRE(est.r_tilde < 25.0);
}

TEST_CASE("histogram rejects high-dimensional grids and degenerate input") {
    auto pts = random_points(10, 4, 3);
    REQUIRE_THROWS_AS(estimate_supremum_histogram(pts, pts, 1, 8), std::invalid_argument);
    REQUIRE_THROWS_AS(
        estimate_supremum_histogram({}, random_points(4, 1, 3), 1, 4), std::invalid_argument);
}

TEST_CASE("k-means supremum") {
    SECTION("single cluster with one client is exactly one") {
        auto tr = random_points(50, 3, 21);
        auto te = random_points(50, 3, 22);
        auto est = estimate_supremum_kmeans(tr, te, 1, 1, 5, 7);
        REQUIRE(est.r_tilde == 1.0);
        REQUIRE(est.bins == 1);
    }
    SECTION("cluster counts reproduce the reported maximum (count oracle)") {
        ShiftScenario sc = ratio20_fixture(23);
        auto data = make_target_shift_scenario(sc);
        std::vector<std::vector<double>> train;
        for (const auto& s : data[0].train) train.push_back(s.x);
        auto est = estimate_supremum_kmeans(train, data[0].test_pool, 1, 10, 20, 99);
        const double n_tr = static_cast<double>(train.size());
        const double n_te = static_cast<double>(data[0].test_pool.size());
        double best = 0;
        for (int m = 0; m < est.bins; ++m) {
            if (est.train_counts[static_cast<std::size_t>(m)] == 0) continue;
            const double r =
                (static_cast<double>(est.test_counts[static_cast<std::size_t>(m)]) / n_te) /
                (static_cast<double>(est.train_counts[static_cast<std::size_t>(m)]) / n_tr);
            best = std::max(best, r);
        }
        REQUIRE(est.r_tilde == best);
        REQUIRE(est.r_tilde > 8.0);
        REQUIRE(est.r_tilde < 30.0);
    }
    SECTION("cluster count bounded by the sample count") {
        auto tr = random_points(4, 2, 2);
        auto te = random_points(4, 2, 3);
        REQUIRE_THROWS_AS(estimate_supremum_kmeans(tr, te, 1, 9, 3, 1), std::invalid_argument);
    }
}

TEST_CASE("merging two bins never exceeds the larger bin ratio") {
    auto rng = make_stream(123, "mediant");
    std::uniform_int_distribution<long> cnt(0, 40);
    for (int rep = 0; rep < 500; ++rep) {
        const long tr_a = cnt(rng) + 1, tr_b = cnt(rng) + 1;
        const long te_a = cnt(rng), te_b = cnt(rng);
        const double ra = static_cast<double>(te_a) / static_cast<double>(tr_a);
        const double rb = static_cast<double>(te_b) / static_cast<double>(tr_b);
        const double merged = static_cast<double>(te_a + te_b) / static_cast<double>(tr_a + tr_b);
        REQUIRE(merged <= std::max(ra, rb) + 1e-15);
    }
}

TEST_CASE("C is the exact reciprocal of the estimated supremum") {
    ShiftScenario sc = ratio20_fixture(31);
    auto data = make_target_shift_scenario(sc);
    std::vector<std::vector<double>> train;
    for (const auto& s : data[0].train) train.push_back(s.x);
    auto est = estimate_supremum_kmeans(train, data[0].test_pool, 1, 20, 15, 3);
    REQUIRE(est.C == 1.0 / est.r_tilde);
    REQUIRE(est.C > 0.0);
    auto safer = estimate_supremum_kmeans(train, data[0].test_pool, 1, 20, 15, 3, 0.95);
    REQUIRE(safer.C == 0.95 / safer.r_tilde);
}

TEST_CASE("ascent branch: a small step on the bracket does not decrease it") {
    // slope makes train-side outputs small and test-side outputs large, so the
    // batch bracket starts negative
    RatioModel m = RatioModel::linear_softplus(1, 50.0, 4);
    m.params() = {1.0, 0.0};
    std::vector<std::vector<double>> tb = {{-2.0}, {-1.5}};
    std::vector<std::vector<double>> eb = {{2.0}, {2.5}};
    const double C = 1.0;
    auto terms = detail::nnbd_terms(BregmanVariant::LSIF, m, C, 1, tb, eb, true);
    REQUIRE(terms.bracket < 0);
    const double alpha = 1e-4;
    for (std::size_t i = 0; i < m.params().size(); ++i)
        m.params()[i] += alpha * terms.grad_bracket[i];
    auto after = detail::nnbd_terms(BregmanVariant::LSIF, m, C, 1, tb, eb, false);
    REQUIRE(after.bracket >= terms.bracket);
}

TEST_CASE("empirical risk: pinned value for the constant-one model") {
    RatioModel one = RatioModel::class_table({{0.0, 0.0}}, 4.0);  // r == 1 at init
    auto tr = random_points(64, 2, 6);
    auto te = random_points(64, 2, 7);
    for (double C : {0.3, 0.9}) {
        const double risk = empirical_bd_risk(BregmanVariant::LSIF, one, C, 1, tr, te);
        REQUIRE_THAT(risk, WithinRel(-0.5, 1e-12));
    }
}

TEST_CASE("empirical risk is reproducible under sample reordering") {
    auto pair = gaussian_shift_pair(0.0, 0.5, 1.0, 5000, 5000, 13);
    std::vector<std::vector<double>> tr, te;
    for (double x : pair.train) tr.push_back({x});
    for (double x : pair.test) te.push_back({x});
    RatioModel m = RatioModel::linear_softplus(1, 10.0, 2);
    const double a = empirical_bd_risk(BregmanVariant::LSIF, m, 0.4, 1, tr, te);
    std::reverse(tr.begin(), tr.end());
    std::reverse(te.begin(), te.end());
    auto rng = make_stream(1, "shuffle");
    deterministic_shuffle(tr, rng);
    const double b = empirical_bd_risk(BregmanVariant::LSIF, m, 0.4, 1, tr, te);
    REQUIRE_THAT(a, WithinAbs(b, 1e-12));
    REQUIRE(std::isfinite(a));
}

TEST_CASE("analytic ratio minimizes the empirical risk among simple candidates") {
    auto pair = gaussian_shift_pair(0.0, 0.5, 1.0, 20000, 20000, 37);
    std::vector<std::vector<double>> tr, te;
    for (double x : pair.train) tr.push_back({x});
    for (double x : pair.test) te.push_back({x});
    const double C = 0.2;
    auto risk_of = [&](auto&& fn) {
        return empirical_bd_risk_fn(BregmanVariant::LSIF, fn, C, 1, tr, te);
    };
    const double analytic = risk_of([&](const std::vector<double>& x) { return pair.ratio(x[0]); });
    const double const1 = risk_of([](const std::vector<double>&) { return 1.0; });
    const double const2 = risk_of([](const std::vector<double>&) { return 2.0; });
    REQUIRE(analytic < const1);
    REQUIRE(analytic < const2);
}

TEST_CASE("training on a no-shift fixture recovers the unit ratio") {
    auto pair = gaussian_shift_pair(0.0, 0.0, 1.0, 2000, 2000, 55);
    std::vector<std::vector<double>> tr, te;
    for (double x : pair.train) tr.push_back({x});
    for (double x : pair.test) te.push_back({x});
    auto sup = estimate_supremum_histogram(tr, te, 1, 20);
    RatioModelSpec spec;
    spec.kind = RatioModelKind::LinearSoftplus;
    RatioTrainHyper hyper;
    hyper.max_epochs = 120;
    RatioModel m = train_ratio_model(BregmanVariant::LSIF, spec, tr, te, 1, sup, hyper, 5);
    double dev = 0;
    for (const auto& x : tr) dev += std::abs(m.evaluate(x) - 1.0);
    dev /= static_cast<double>(tr.size());
    REQUIRE(dev <= 0.1);
}

TEST_CASE("class-table training converges to the combined-ratio oracle") {
    ShiftScenario sc;
    sc.num_classes = 4;
    sc.feature_dim = 4;
    sc.base = BaseGenerator::GaussianClusters;
    sc.cluster_sep = 4.0;
    sc.cluster_sigma = 0.4;
    sc.seed = 71;
    sc.train_counts = {{200, 600, 1000, 200}, {800, 400, 400, 400}};
    sc.test_counts = {{500, 100, 200, 200}, {250, 250, 250, 250}};
    auto data = make_target_shift_scenario(sc);
    auto pool = broadcast_shuffled_pool(data, 9);

    const int k = 0;
    std::vector<std::vector<double>> train;
    for (const auto& s : data[static_cast<std::size_t>(k)].train) train.push_back(s.x);
    auto sup = estimate_supremum_kmeans(train, pool, 2, 8, 25, 7);
    RatioModelSpec spec;
    spec.kind = RatioModelKind::ClassTable;
    for (int c = 0; c < 4; ++c) spec.centroids.push_back(sc.mean_of_class(c));
    RatioTrainHyper hyper;
    hyper.lr = 5e-3;
    hyper.max_epochs = 400;
    hyper.plateau_patience = 20;
    RatioModel m = train_ratio_model(BregmanVariant::LSIF, spec, train, pool, 2, sup, hyper, 13);
    for (int c = 0; c < 4; ++c) {
        const double truth = exact_combined_ratio(k, sc, c);
        const double predicted = m.evaluate(sc.mean_of_class(c));
        REQUIRE_THAT(predicted, WithinRel(truth, 0.10));
    }
}

TEST_CASE("diverging training aborts with a learning-rate diagnostic") {
    auto pair = gaussian_shift_pair(0.0, 1.0, 1.0, 200, 200, 3);
    std::vector<std::vector<double>> tr, te;
    for (double x : pair.train) tr.push_back({x});
    for (double x : pair.test) te.push_back({x});
    auto sup = SupremumEstimate{};
    sup.r_tilde = 5.0;
    sup.C = 0.2;
    RatioModelSpec spec;
    spec.kind = RatioModelKind::LinearSoftplus;
    RatioTrainHyper hyper;
    hyper.lr = std::numeric_limits<double>::infinity();
    hyper.max_epochs = 3;
    REQUIRE_THROWS_WITH(
        train_ratio_model(BregmanVariant::LSIF, spec, tr, te, 1, sup, hyper, 5),
        Catch::Matchers::ContainsSubstring("learning rate"));
}
