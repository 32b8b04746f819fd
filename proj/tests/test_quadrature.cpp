#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "stimcal/quadrature.hpp"

using namespace stimcal;

TEST_CASE("polynomials integrate to machine precision") {
    // x^2 y^2 over [0,2]x[-1,3]: (8/3) * (28/3)
    const QuadratureResult r =
        integrate_2d([](double x, double y) { return x * x * y * y; }, {0, 2, -1, 3}, 1e-10);
    CHECK(r.value == doctest::Approx(224.0 / 9.0).epsilon(1e-13));
}

TEST_CASE("isotropic gaussian matches the erf closed form") {
    const double s = 0.8;
    const auto f = [s](double x, double y) {
        return std::exp(-(x * x + y * y) / (2 * s * s)) / (2 * M_PI * s * s);
    };
    const double half = 6.0 * s;
    const QuadratureResult r = integrate_2d(f, {-half, half, -half, half}, 1e-8);
    const double edge = std::erf(half / (s * std::sqrt(2.0)));
    CHECK(r.value == doctest::Approx(edge * edge).epsilon(1e-8));
    CHECK(r.error_estimate <= 1e-7 * r.value);
}

TEST_CASE("off-center narrow bump is found by subdivision") {
    const double s = 0.05;
    const auto f = [s](double x, double y) {
        const double dx = x - 0.8, dy = y - 0.9;
        return std::exp(-(dx * dx + dy * dy) / (2 * s * s)) / (2 * M_PI * s * s);
    };
    const QuadratureResult r = integrate_2d(f, {0, 1, 0, 1}, 1e-7);
    // bump center is 0.2 and 0.1 away from the edges: 4 and 2 sigma
    const double ex = 0.5 * (std::erf(0.8 / (s * std::sqrt(2.0))) + std::erf(0.2 / (s * std::sqrt(2.0))));
    const double ey = 0.5 * (std::erf(0.9 / (s * std::sqrt(2.0))) + std::erf(0.1 / (s * std::sqrt(2.0))));
    CHECK(r.value == doctest::Approx(ex * ey).epsilon(1e-6));
}

TEST_CASE("zero integrand terminates immediately") {
    const QuadratureResult r =
        integrate_2d([](double, double) { return 0.0; }, {0, 1, 0, 1}, 1e-9);
    CHECK(r.value == 0.0);
    CHECK(r.evaluations == 225);
}

TEST_CASE("error paths") {
    CHECK_THROWS_AS(integrate_2d([](double, double) { return 1.0; }, {1, 1, 0, 1}, 1e-6),
                    UsageError);
    CHECK_THROWS_AS(integrate_2d([](double, double) { return 1.0; }, {0, 1, 0, 1}, 0.0, 0.0),
                    UsageError);
    // An oscillatory integrand with a starved cell budget must fail loudly
    // and report the achieved tolerance.
    try {
        integrate_2d([](double x, double y) { return std::sin(400 * x) * std::cos(377 * y); },
                     {0, 1, 0, 1}, 1e-12, 0.0, 8);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(e.achieved_tolerance() > 0.0);
    }
}
