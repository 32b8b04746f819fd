#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "stimcal/optics_gain.hpp"
#include "stimcal/rng.hpp"

using namespace stimcal;

namespace {

OpticsGeometry geometry() { return {532e-9, 0.1, 5e-3, 0.05}; }

GainModel model_with_gain(double g) {
    return GainModel::for_geometry(g, 2e4, 1e12, 0.4, geometry());
}

// Independent scalar inversion of sin(x)/x = target by bisection.
double invert_sinc(double target) {
    double lo = 1e-9, hi = M_PI;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (std::sin(mid) / mid > target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("zero gain is the identity transformation") {
    const GainModel m = model_with_gain(0.0);
    const GainValue gv = eval_gain(m, {1e5, -3e4}, 2e11);
    CHECK(gv.u == std::complex<double>(1.0, 0.0));
    CHECK(gv.v == std::complex<double>(0.0, 0.0));
}

TEST_CASE("|V|^2 equals the peak gain at exact phase match") {
    for (double g : {1e-4, 0.01, 0.1}) {
        const GainModel m = model_with_gain(g);
        const GainValue gv = eval_gain(m, {m.center_momentum, 0.0}, 0.0);
        CHECK(std::abs(std::norm(gv.v) - g) < 1e-14 * std::max(g, 1.0));
        CHECK(std::abs(std::norm(gv.u) - (1.0 + g)) < 1e-13);
    }
}

TEST_CASE("half-strength sinc reproduces the hyperbolic half-argument value") {
    // sinh^2(asinh(sqrt(G))/2) = (sqrt(1+G) - 1)/2 for G = 0.01; the frozen
    // value comes from that identity evaluated independently.
    const double frozen = 2.4937810560445146e-3;
    CHECK(std::abs((std::sqrt(1.01) - 1.0) / 2.0 - frozen) < 1e-18);

    const GainModel m = model_with_gain(0.01);
    const double delta_half = invert_sinc(0.5);
    // Put the whole mismatch into the frequency axis: delta = (W/dW)^2.
    const double omega = m.frequency_bandwidth * std::sqrt(delta_half);
    const GainValue gv = eval_gain(m, {m.center_momentum, 0.0}, omega);
    CHECK(std::norm(gv.v) == doctest::Approx(frozen).epsilon(1e-10));
}

TEST_CASE("unitarity identities hold on grids") {
    SUBCASE("zero gain is exact") {
        const GainModel m = model_with_gain(0.0);
        std::vector<std::pair<Vec2, double>> grid;
        for (int i = 0; i < 100; ++i) grid.push_back({{i * 1e3, -i * 500.0}, i * 1e10});
        CHECK(check_unitarity(m, grid) == 0.0);
    }
    SUBCASE("structured 10x10x10 grid at G = 0.05") {
        const GainModel m = model_with_gain(0.05);
        std::vector<std::pair<Vec2, double>> grid;
        for (int i = 0; i < 10; ++i)
            for (int j = 0; j < 10; ++j)
                for (int k = 0; k < 10; ++k)
                    grid.push_back({{(i - 4.5) * 2e5, (j - 4.5) * 2e5}, (k - 4.5) * 1e12});
        CHECK(check_unitarity(m, grid) <= 1e-12);
    }
    SUBCASE("randomized grids, all gains") {
        Rng rng(2718);
        for (double g : {0.0, 0.01, 0.1}) {
            const GainModel m = model_with_gain(g);
            std::vector<std::pair<Vec2, double>> grid;
            for (int i = 0; i < 1000; ++i)
                grid.push_back({{(rng.uniform01() - 0.5) * 4e6, (rng.uniform01() - 0.5) * 4e6},
                                (rng.uniform01() - 0.5) * 1e13});
            CHECK(check_unitarity(m, grid) <= 1e-12);
        }
    }
}

TEST_CASE("gain profile is even under (q, W) -> (-q, -W) and bounded by G") {
    const GainModel m = model_with_gain(0.07);
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        const Vec2 q{(rng.uniform01() - 0.5) * 4e6, (rng.uniform01() - 0.5) * 4e6};
        const double w = (rng.uniform01() - 0.5) * 1e13;
        const GainValue a = eval_gain(m, q, w);
        const GainValue b = eval_gain(m, -q, -w);
        CHECK(a.v == b.v);
        CHECK(std::norm(eval_gain(m, q, 0.0).v) <= m.peak_gain * (1.0 + 1e-12));
    }
}

TEST_CASE("far-field mapping") {
    OpticsGeometry geom = geometry();
    SUBCASE("origin maps to origin") {
        const Vec2 q = far_field_map(geom, {0.0, 0.0});
        CHECK(q.x == 0.0);
        CHECK(q.y == 0.0);
    }
    SUBCASE("hand value: lambda 0.5 um, f 0.1 m, x 1 mm") {
        geom.wavelength_m = 0.5e-6;
        const Vec2 q = far_field_map(geom, {1e-3, 0.0});
        CHECK(q.x == doctest::Approx(1.2566370614359172e5).epsilon(1e-12));
        CHECK(q.y == 0.0);
    }
    SUBCASE("linearity") {
        Rng rng(3);
        for (int i = 0; i < 100; ++i) {
            const Vec2 x{rng.uniform01() * 1e-2, (rng.uniform01() - 0.5) * 1e-2};
            const Vec2 q1 = far_field_map(geom, x);
            const Vec2 q2 = far_field_map(geom, {2 * x.x, 2 * x.y});
            CHECK(q2.x == doctest::Approx(2 * q1.x));
            CHECK(q2.y == doctest::Approx(2 * q1.y));
        }
    }
    SUBCASE("round trip with the focal-plane inverse") {
        const Vec2 q = far_field_map(geom, {1.25e-3, -0.5e-3});
        const Vec2 x = focal_plane_position(geom, q);
        CHECK(x.x == doctest::Approx(1.25e-3).epsilon(1e-14));
        CHECK(x.y == doctest::Approx(-0.5e-3).epsilon(1e-14));
    }
}

TEST_CASE("error paths") {
    const GainModel m = model_with_gain(0.01);
    CHECK_THROWS_AS(eval_gain(m, {std::nan(""), 0.0}, 0.0), DomainError);
    CHECK_THROWS_AS(eval_gain(m, {0.0, 0.0}, std::nan("")), DomainError);
    CHECK_THROWS_AS(check_unitarity(m, {}), UsageError);

    GainModel bad = m;
    bad.peak_gain = -0.1;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = m;
    bad.momentum_bandwidth = 0.0;
    CHECK_THROWS_AS(bad.validate(), UsageError);

    OpticsGeometry geom = geometry();
    geom.central_angle_rad = 2.0;
    CHECK_THROWS_AS(geom.validate(), UsageError);
}
