#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "stimcal/field_statistics.hpp"

using namespace stimcal;

namespace {

OpticsGeometry geometry() { return {532e-9, 0.1, 5e-3, 0.05}; }

constexpr double kSeedWidth = 1e4;   // rad/m
constexpr double kSeedFlux = 1e9;    // photons/s

struct Fixture {
    OpticsGeometry geom = geometry();
    double q_center = center_momentum(geom);
    SeedBeam seed = SeedBeam::gaussian({q_center, 0.0}, kSeedWidth, kSeedFlux, 0.0);
    DetectionRegion r1 = default_region(geom, seed, Arm::arm1);
    DetectionRegion r2 = default_region(geom, seed, Arm::arm2);

    GainModel gain(double g, double dq) const {
        return GainModel::for_geometry(g, dq, 1e12, 0.0, geom);
    }
};

// Independent midpoint-rule oracle for the arm-1 flux, with the gain written
// out from scratch: a dense Riemann sum of
//   sinh^2(asinh(sqrt(G)) sinc(((|q|-qc)/dq)^2)) * gaussian(q)
// over the (mirrored) seed support.
double riemann_flux_arm1(const Fixture& fx, double g, double dq, int n) {
    const double qc = fx.q_center;
    const double g0 = std::asinh(std::sqrt(g));
    const Rect box = fx.seed.support;
    const double hx = box.width() / n;
    const double hy = box.height() / n;
    const double norm = kSeedFlux / (2.0 * M_PI * kSeedWidth * kSeedWidth);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double qx = box.x_lo + (i + 0.5) * hx;
        for (int j = 0; j < n; ++j) {
            const double qy = box.y_lo + (j + 0.5) * hy;
            const double mismatch = (std::hypot(qx, qy) - qc) / dq;
            const double delta = mismatch * mismatch;
            const double sinc = delta < 1e-8 ? 1.0 - delta * delta / 6.0 : std::sin(delta) / delta;
            const double v2 = std::sinh(g0 * sinc) * std::sinh(g0 * sinc);
            const double dxs = qx - qc;
            const double alpha2 =
                norm * std::exp(-(dxs * dxs + qy * qy) / (2.0 * kSeedWidth * kSeedWidth));
            sum += v2 * alpha2;
        }
    }
    return sum * hx * hy;
}

}  // namespace

TEST_CASE("zero gain: no down-conversion, the seed passes through") {
    Fixture fx;
    const GainModel gain = fx.gain(0.0, 2 * kSeedWidth);
    CHECK(mean_flux_arm1(gain, fx.geom, fx.seed, fx.r1) == 0.0);
    CHECK(mean_flux_arm2(gain, fx.geom, fx.seed, fx.r2) ==
          doctest::Approx(kSeedFlux).epsilon(2e-6));
    CHECK(integrated_cross_correlation(gain, fx.geom, fx.seed, fx.r1, fx.r2) == 0.0);
    CHECK(integrated_auto_correlation_arm2(gain, fx.geom, fx.seed, fx.r2) == 0.0);
}

TEST_CASE("constant gain over the seed support") {
    Fixture fx;
    const double g = 0.02;
    // Momentum bandwidth vastly wider than the seed: |V|^2 == G throughout.
    const GainModel gain = fx.gain(g, 1e9 * kSeedWidth);
    const double f1 = mean_flux_arm1(gain, fx.geom, fx.seed, fx.r1);
    const double f2 = mean_flux_arm2(gain, fx.geom, fx.seed, fx.r2);
    CHECK(f1 == doctest::Approx(g * kSeedFlux).epsilon(1e-5));
    CHECK(f2 == doctest::Approx((1.0 + g) * kSeedFlux).epsilon(1e-5));
    CHECK(integrated_cross_correlation(gain, fx.geom, fx.seed, fx.r1, fx.r2) ==
          doctest::Approx(2.0 * g * kSeedFlux).epsilon(1e-5));
    CHECK(integrated_auto_correlation_arm2(gain, fx.geom, fx.seed, fx.r2) ==
          doctest::Approx(2.0 * g * kSeedFlux).epsilon(1e-5));
}

TEST_CASE("gaussian seed with finite bandwidth matches the dense-grid oracle") {
    Fixture fx;
    const double g = 0.01;
    const double dq = 2.0 * kSeedWidth;
    const GainModel gain = fx.gain(g, dq);
    const double oracle = riemann_flux_arm1(fx, g, dq, 1500);
    const double f1 = mean_flux_arm1(gain, fx.geom, fx.seed, fx.r1);
    CHECK(f1 == doctest::Approx(oracle).epsilon(1e-4));

    const double f2 = mean_flux_arm2(gain, fx.geom, fx.seed, fx.r2);
    CHECK(f2 - f1 == doctest::Approx(kSeedFlux).epsilon(1e-5));

    const double cross = integrated_cross_correlation(gain, fx.geom, fx.seed, fx.r1, fx.r2);
    const double auto2 = integrated_auto_correlation_arm2(gain, fx.geom, fx.seed, fx.r2);
    CHECK(cross == doctest::Approx(2.0 * f1).epsilon(1e-6));
    CHECK(auto2 == doctest::Approx(2.0 * f1).epsilon(1e-6));

    const FluxStatistics stats = compute_flux_statistics(gain, fx.geom, fx.seed, fx.r1, fx.r2);
    CHECK(stats.pair_rate == f1);
    CHECK(stats.mean_flux_1 == f1);
    CHECK(stats.mean_flux_2 == f2);
}

TEST_CASE("detuned seed sees reduced gain") {
    Fixture fx;
    const GainModel gain = fx.gain(0.01, 2 * kSeedWidth);
    SeedBeam detuned = fx.seed;
    detuned.center_frequency_detuning = 0.8e12;  // 0.8 dOmega
    const double on_peak = mean_flux_arm1(gain, fx.geom, fx.seed, fx.r1);
    const double off_peak = mean_flux_arm1(gain, fx.geom, detuned, fx.r1);
    CHECK(off_peak < on_peak);
    CHECK(off_peak > 0.0);
}

TEST_CASE("all outputs are linear in the seed flux") {
    Fixture fx;
    const GainModel gain = fx.gain(0.01, 2 * kSeedWidth);
    SeedBeam doubled = SeedBeam::gaussian({fx.q_center, 0.0}, kSeedWidth, 2 * kSeedFlux, 0.0);
    const FluxStatistics s1 = compute_flux_statistics(gain, fx.geom, fx.seed, fx.r1, fx.r2);
    const FluxStatistics s2 = compute_flux_statistics(gain, fx.geom, doubled, fx.r1, fx.r2);
    CHECK(s2.mean_flux_1 == doctest::Approx(2 * s1.mean_flux_1).epsilon(1e-9));
    CHECK(s2.mean_flux_2 == doctest::Approx(2 * s1.mean_flux_2).epsilon(1e-9));
    CHECK(s2.cross_strength == doctest::Approx(2 * s1.cross_strength).epsilon(1e-9));
}

TEST_CASE("coherence time is the reciprocal bandwidth") {
    Fixture fx;
    GainModel gain = fx.gain(0.01, 2 * kSeedWidth);
    gain.frequency_bandwidth = 1e13;
    CHECK(coherence_time(gain) == doctest::Approx(1e-13).epsilon(1e-15));
    gain.frequency_bandwidth = 1e12;
    CHECK(coherence_time(gain) == doctest::Approx(1e-12).epsilon(1e-15));
    const double before = coherence_time(gain);
    gain.frequency_bandwidth *= 2.0;
    CHECK(coherence_time(gain) == doctest::Approx(0.5 * before).epsilon(1e-15));
}

TEST_CASE("seed coverage of detection regions") {
    Fixture fx;
    CHECK(seed_coverage(fx.geom, fx.seed, fx.r1) > 0.999);
    CHECK(seed_coverage(fx.geom, fx.seed, fx.r2) > 0.999);

    // A region half the size of the seed spot must fail the coverage rule.
    DetectionRegion small = fx.r2;
    const double cx = 0.5 * (small.extent.x_lo + small.extent.x_hi);
    const double cy = 0.5 * (small.extent.y_lo + small.extent.y_hi);
    const double hw = 0.05 * small.extent.width();
    small.extent = {cx - hw, cx + hw, cy - hw, cy + hw};
    CHECK(seed_coverage(fx.geom, fx.seed, small) < 0.999);
}

TEST_CASE("tabulated seed profiles") {
    Fixture fx;
    // Sample the gaussian on a grid and reconstruct the beam from the table.
    const int n = 201;
    const Rect grid = fx.seed.support;
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const double qx = grid.x_lo + grid.width() * i / (n - 1);
            const double qy = grid.y_lo + grid.height() * j / (n - 1);
            values.push_back(fx.seed.intensity({qx, qy}));
        }
    const SeedBeam tab = SeedBeam::tabulated(grid, n, n, values, 0.0);
    CHECK(tab.total_flux == doctest::Approx(kSeedFlux).epsilon(1e-3));
    tab.validate();

    const GainModel gain = fx.gain(0.01, 2 * kSeedWidth);
    const double f1_tab = mean_flux_arm1(gain, fx.geom, tab, fx.r1);
    const double f1_ref = mean_flux_arm1(gain, fx.geom, fx.seed, fx.r1);
    CHECK(f1_tab == doctest::Approx(f1_ref).epsilon(1e-3));
}

TEST_CASE("error paths") {
    Fixture fx;
    const GainModel gain = fx.gain(0.01, 2 * kSeedWidth);
    CHECK_THROWS_AS(mean_flux_arm1(gain, fx.geom, fx.seed, fx.r2), UsageError);
    CHECK_THROWS_AS(mean_flux_arm2(gain, fx.geom, fx.seed, fx.r1), UsageError);
    CHECK_THROWS_AS(integrated_cross_correlation(gain, fx.geom, fx.seed, fx.r2, fx.r2),
                    UsageError);
    CHECK_THROWS_AS(SeedBeam::gaussian({0, 0}, -1.0, 1e9, 0.0), UsageError);
    CHECK_THROWS_AS(SeedBeam::tabulated({0, 1, 0, 1}, 2, 2, {1.0, -1.0, 1.0, 1.0}, 0.0),
                    UsageError);
    CHECK_THROWS_AS(SeedBeam::tabulated({0, 1, 0, 1}, 2, 2, {1.0, 1.0}, 0.0), UsageError);

    SeedBeam broken = fx.seed;
    broken.total_flux *= 2.0;
    CHECK_THROWS_AS(broken.validate(), UsageError);
}
