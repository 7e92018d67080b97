#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedshift/bregman.hpp"

using namespace fedshift;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("explicit variant losses at pinned points") {
    REQUIRE(ell1(BregmanVariant::LSIF, 2.0) == 2.0);
    REQUIRE(ell2(BregmanVariant::LSIF, 2.0, 0.5) == 0.25 * 4.0 - 2.0);  // -1
    REQUIRE(ell2(BregmanVariant::UKL, 1.0, 1.0) == 1.0);                // C*z - log z at z=1
    REQUIRE_THAT(ell1(BregmanVariant::UKL, 0.7), WithinRel(0.7, 1e-15));
    REQUIRE_THAT(ell1(BregmanVariant::LR, 1.0), WithinRel(std::log(2.0), 1e-15));
    REQUIRE_THAT(ell2(BregmanVariant::LR, 1.0, 0.5),
                 WithinRel(0.5 * std::log(2.0) - std::log(0.5), 1e-14));
    const double C = 0.3;
    REQUIRE_THAT(ell1(BregmanVariant::PU, 0.5, C), WithinRel(-C * std::log(0.5), 1e-14));
    REQUIRE_THAT(ell2(BregmanVariant::PU, 0.5, C),
                 WithinRel(-C * std::log(0.5) + (C - C * C) * std::log(0.5), 1e-14));
}

TEST_CASE("domain errors outside the admissible range") {
    REQUIRE_THROWS_AS(ell1(BregmanVariant::LSIF, -0.1), std::domain_error);
    REQUIRE_THROWS_AS(ell1(BregmanVariant::UKL, 0.0), std::domain_error);
    REQUIRE_THROWS_AS(ell2(BregmanVariant::LR, 0.0, 0.5), std::domain_error);
    REQUIRE_THROWS_AS(ell1(BregmanVariant::PU, 0.0, 0.5), std::domain_error);
    REQUIRE_THROWS_AS(ell1(BregmanVariant::PU, 1.0, 0.5), std::domain_error);
    REQUIRE_THROWS_AS(ell2(BregmanVariant::PU, 1.2, 0.5), std::domain_error);
    REQUIRE(admissible_upper(BregmanVariant::PU) == 1.0);
    REQUIRE(std::isinf(admissible_upper(BregmanVariant::LSIF)));
}

TEST_CASE("least-squares variant: explicit form differs from the generic one by -1/2") {
    // generic first loss for f(z) = (z-1)^2/2 is f'(z) z - f(z) = (z^2 - 1)/2
    for (double z : {0.5, 1.0, 3.0}) {
        const double generic = 0.5 * (z * z - 1.0);
        REQUIRE_THAT(ell1(BregmanVariant::LSIF, z) - generic, WithinAbs(0.5, 1e-15));
    }
}

TEST_CASE("loss derivatives match central finite differences") {
    const double h = 1e-6;
    const double C = 0.4;
    struct Point {
        BregmanVariant v;
        double z;
    };
    for (auto [v, z] : {Point{BregmanVariant::LSIF, 1.7}, Point{BregmanVariant::UKL, 0.9},
                        Point{BregmanVariant::LR, 2.3}, Point{BregmanVariant::PU, 0.6}}) {
        const double d1 = (ell1(v, z + h, C) - ell1(v, z - h, C)) / (2 * h);
        REQUIRE_THAT(ell1_deriv(v, z, C), WithinRel(d1, 1e-6));
        const double d2 = (ell2(v, z + h, C) - ell2(v, z - h, C)) / (2 * h);
        REQUIRE_THAT(ell2_deriv(v, z, C), WithinRel(d2, 1e-6));
    }
}
