#include "stimcal/field_statistics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

namespace stimcal {
namespace {

// Map a focal-plane rectangle into q-space (positive linear scale, so the
// corners map to corners).
Rect to_momentum_space(const OpticsGeometry& geom, const Rect& r) {
    const Vec2 lo = far_field_map(geom, {r.x_lo, r.y_lo});
    const Vec2 hi = far_field_map(geom, {r.x_hi, r.y_hi});
    return {lo.x, hi.x, lo.y, hi.y};
}

Rect mirrored(const Rect& r) { return {-r.x_hi, -r.x_lo, -r.y_hi, -r.y_lo}; }

bool intersect(const Rect& a, const Rect& b, Rect& out) {
    out = {std::max(a.x_lo, b.x_lo), std::min(a.x_hi, b.x_hi),
           std::max(a.y_lo, b.y_lo), std::min(a.y_hi, b.y_hi)};
    return out.x_hi > out.x_lo && out.y_hi > out.y_lo;
}

double integrate_over(const Rect& domain, const std::function<double(double, double)>& f) {
    return integrate_2d(f, domain, kFluxQuadratureRelTol).value;
}

void require_arm(const DetectionRegion& region, Arm arm, const char* op) {
    if (region.arm != arm)
        throw UsageError(std::string(op) + ": detection region is bound to the other arm");
}

}  // namespace

SeedBeam SeedBeam::gaussian(Vec2 center_q, double momentum_width, double flux,
                            double omega0) {
    if (!(momentum_width > 0.0) || !(flux > 0.0))
        throw UsageError("SeedBeam::gaussian: width and flux must be positive");
    SeedBeam seed;
    seed.center_frequency_detuning = omega0;
    seed.total_flux = flux;
    const double w = momentum_width;
    // 8 sigma: the excluded mass is ~1e-14 of the total, far below the
    // quadrature tolerance.
    seed.support = {center_q.x - 8.0 * w, center_q.x + 8.0 * w,
                    center_q.y - 8.0 * w, center_q.y + 8.0 * w};
    const double norm = flux / (2.0 * M_PI * w * w);
    seed.intensity = [center_q, w, norm](Vec2 q) {
        const double dx = q.x - center_q.x;
        const double dy = q.y - center_q.y;
        return norm * std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
    };
    return seed;
}

SeedBeam SeedBeam::tabulated(Rect grid, int rows, int cols, std::vector<double> values,
                             double omega0) {
    grid.validate();
    if (rows < 2 || cols < 2 || values.size() != static_cast<size_t>(rows) * cols)
        throw UsageError("SeedBeam::tabulated: need rows x cols values with rows, cols >= 2");
    for (double v : values)
        if (!(v >= 0.0)) throw UsageError("SeedBeam::tabulated: negative or non-finite sample");

    SeedBeam seed;
    seed.center_frequency_detuning = omega0;
    seed.support = grid;
    const double dx = grid.width() / (cols - 1);
    const double dy = grid.height() / (rows - 1);
    auto table = std::make_shared<std::vector<double>>(std::move(values));
    seed.intensity = [grid, rows, cols, dx, dy, table](Vec2 q) {
        const double u = (q.x - grid.x_lo) / dx;
        const double v = (q.y - grid.y_lo) / dy;
        if (u < 0.0 || v < 0.0 || u > cols - 1 || v > rows - 1) return 0.0;
        const int i = std::min(static_cast<int>(u), cols - 2);
        const int j = std::min(static_cast<int>(v), rows - 2);
        const double fu = u - i;
        const double fv = v - j;
        const auto& t = *table;
        const double s00 = t[static_cast<size_t>(j) * cols + i];
        const double s01 = t[static_cast<size_t>(j) * cols + i + 1];
        const double s10 = t[static_cast<size_t>(j + 1) * cols + i];
        const double s11 = t[static_cast<size_t>(j + 1) * cols + i + 1];
        return (1 - fv) * ((1 - fu) * s00 + fu * s01) + fv * ((1 - fu) * s10 + fu * s11);
    };
    seed.total_flux =
        integrate_2d([&seed](double x, double y) { return seed.intensity({x, y}); },
                     grid, kFluxQuadratureRelTol).value;
    if (!(seed.total_flux > 0.0))
        throw UsageError("SeedBeam::tabulated: profile integrates to zero");
    return seed;
}

void SeedBeam::validate() const {
    if (!(total_flux > 0.0)) throw UsageError("SeedBeam: total_flux must be positive");
    if (!intensity) throw UsageError("SeedBeam: missing intensity profile");
    support.validate();
    const double integral =
        integrate_2d([this](double x, double y) { return intensity({x, y}); },
                     support, kFluxQuadratureRelTol).value;
    if (std::abs(integral - total_flux) > 1e-4 * total_flux)
        throw UsageError("SeedBeam: total_flux does not match the profile integral");
}

double seed_coverage(const OpticsGeometry& geom, const SeedBeam& seed,
                     const DetectionRegion& region) {
    Rect q_region = to_momentum_space(geom, region.extent);
    if (region.arm == Arm::arm1) q_region = mirrored(q_region);
    Rect domain;
    if (!intersect(q_region, seed.support, domain)) return 0.0;
    const double captured =
        integrate_2d([&seed](double x, double y) { return seed.intensity({x, y}); },
                     domain, kFluxQuadratureRelTol).value;
    return captured / seed.total_flux;
}

DetectionRegion default_region(const OpticsGeometry& geom, const SeedBeam& seed, Arm arm) {
    Rect q_rect = seed.support;
    if (arm == Arm::arm1) q_rect = mirrored(q_rect);
    const Vec2 lo = focal_plane_position(geom, {q_rect.x_lo, q_rect.y_lo});
    const Vec2 hi = focal_plane_position(geom, {q_rect.x_hi, q_rect.y_hi});
    return {arm, {lo.x, hi.x, lo.y, hi.y}};
}

double mean_flux_arm1(const GainModel& gain, const OpticsGeometry& geom,
                      const SeedBeam& seed, const DetectionRegion& region) {
    require_arm(region, Arm::arm1, "mean_flux_arm1");
    if (gain.peak_gain == 0.0) return 0.0;
    const double omega0 = seed.center_frequency_detuning;
    Rect domain;
    if (!intersect(to_momentum_space(geom, region.extent), mirrored(seed.support), domain))
        return 0.0;
    return integrate_over(domain, [&](double qx, double qy) {
        const Vec2 q{qx, qy};
        return std::norm(eval_gain(gain, q, -omega0).v) * seed.intensity(-q);
    });
}

double mean_flux_arm2(const GainModel& gain, const OpticsGeometry& geom,
                      const SeedBeam& seed, const DetectionRegion& region) {
    require_arm(region, Arm::arm2, "mean_flux_arm2");
    const double omega0 = seed.center_frequency_detuning;
    Rect domain;
    if (!intersect(to_momentum_space(geom, region.extent), seed.support, domain))
        return 0.0;
    return integrate_over(domain, [&](double qx, double qy) {
        const Vec2 q{qx, qy};
        return (std::norm(eval_gain(gain, q, omega0).v) + 1.0) * seed.intensity(q);
    });
}

double integrated_cross_correlation(const GainModel& gain, const OpticsGeometry& geom,
                                    const SeedBeam& seed, const DetectionRegion& r1,
                                    const DetectionRegion& r2) {
    require_arm(r1, Arm::arm1, "integrated_cross_correlation");
    require_arm(r2, Arm::arm2, "integrated_cross_correlation");
    if (gain.peak_gain == 0.0) return 0.0;
    const double omega0 = seed.center_frequency_detuning;
    // Point-to-point correlation x <-> -x restricts the double integral over
    // R1 x R2 to the overlap of R1 with the mirror of R2.
    Rect r1r2;
    if (!intersect(to_momentum_space(geom, r1.extent),
                   mirrored(to_momentum_space(geom, r2.extent)), r1r2))
        return 0.0;
    Rect domain;
    if (!intersect(r1r2, mirrored(seed.support), domain)) return 0.0;
    // Only the seeded frequency survives the lag integration; the explicit
    // term and its complex conjugate contribute equally.
    return 2.0 * integrate_over(domain, [&](double qx, double qy) {
        const Vec2 q{qx, qy};
        return std::norm(eval_gain(gain, q, -omega0).v) * seed.intensity(-q);
    });
}

double integrated_auto_correlation_arm2(const GainModel& gain, const OpticsGeometry& geom,
                                        const SeedBeam& seed, const DetectionRegion& r2) {
    require_arm(r2, Arm::arm2, "integrated_auto_correlation_arm2");
    if (gain.peak_gain == 0.0) return 0.0;
    const double omega0 = seed.center_frequency_detuning;
    Rect domain;
    if (!intersect(to_momentum_space(geom, r2.extent), seed.support, domain)) return 0.0;
    return 2.0 * integrate_over(domain, [&](double qx, double qy) {
        const Vec2 q{qx, qy};
        return std::norm(eval_gain(gain, q, omega0).v) * seed.intensity(q);
    });
}

double coherence_time(const GainModel& gain) { return 1.0 / gain.frequency_bandwidth; }

FluxStatistics compute_flux_statistics(const GainModel& gain, const OpticsGeometry& geom,
                                       const SeedBeam& seed, const DetectionRegion& r1,
                                       const DetectionRegion& r2) {
    FluxStatistics stats;
    stats.mean_flux_1 = mean_flux_arm1(gain, geom, seed, r1);
    stats.mean_flux_2 = mean_flux_arm2(gain, geom, seed, r2);
    stats.pair_rate = stats.mean_flux_1;
    stats.excess_noise_2 = integrated_auto_correlation_arm2(gain, geom, seed, r2);
    stats.cross_strength = integrated_cross_correlation(gain, geom, seed, r1, r2);
    stats.coherence_time = coherence_time(gain);
    return stats;
}

}  // namespace stimcal
