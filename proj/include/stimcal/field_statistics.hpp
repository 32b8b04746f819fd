#pragma once

#include <functional>
#include <vector>

#include "stimcal/common.hpp"
#include "stimcal/optics_gain.hpp"
#include "stimcal/quadrature.hpp"

namespace stimcal {

// Monochromatic multi-mode coherent seed injected into arm 2: a fixed
// frequency detuning Omega0 and an intensity distribution over transverse
// momentum. intensity(q) is a density, photons/s per unit q-area, with
// integral total_flux. support bounds the region where intensity is
// non-negligible; quadrature domains are clipped to it.
struct SeedBeam {
    double center_frequency_detuning = 0.0;  // Omega0, rad/s
    double total_flux = 0.0;                 // S, photons/s
    Rect support;                            // in q-space, rad/m
    std::function<double(Vec2)> intensity;   // |alpha(q)|^2 density

    // Isotropic Gaussian momentum profile centered on the emission cone.
    static SeedBeam gaussian(Vec2 center_q, double momentum_width, double flux,
                             double omega0);

    // Row-major tabulated |alpha|^2 samples on a regular q-grid, bilinearly
    // interpolated, zero outside. total_flux is set to the grid integral.
    static SeedBeam tabulated(Rect grid, int rows, int cols,
                              std::vector<double> values, double omega0);

    void validate() const;
};

// Focal-plane rectangle watched by one detector.
struct DetectionRegion {
    Arm arm = Arm::arm1;
    Rect extent;  // meters in the focal plane
};

// Fraction of the seed flux whose (arm-mapped) image falls inside the
// region. Arm 1 collects the conjugate beam at -x, so its region is checked
// against the mirrored seed.
double seed_coverage(const OpticsGeometry& geom, const SeedBeam& seed,
                     const DetectionRegion& region);

// Builds a centered detection region covering half_widths times the seed
// momentum extent around the bright beam of the given arm.
DetectionRegion default_region(const OpticsGeometry& geom, const SeedBeam& seed, Arm arm);

struct FluxStatistics {
    double mean_flux_1 = 0.0;     // <F1>, photons/s
    double mean_flux_2 = 0.0;     // <F2>, photons/s
    double pair_rate = 0.0;       // R_pair = <F1> under symmetric gain
    double excess_noise_2 = 0.0;  // integrated arm-2 normally-ordered self term
    double cross_strength = 0.0;  // integrated cross term
    double coherence_time = 0.0;  // 1/dOmega, s
};

inline constexpr double kFluxQuadratureRelTol = 1e-6;

// <F1> = integral over R1 of |V(x,-Omega0)|^2 |alpha(-x)|^2.
double mean_flux_arm1(const GainModel& gain, const OpticsGeometry& geom,
                      const SeedBeam& seed, const DetectionRegion& region);

// <F2> = integral over R2 of (|V(x,Omega0)|^2 + 1) |alpha(x)|^2.
double mean_flux_arm2(const GainModel& gain, const OpticsGeometry& geom,
                      const SeedBeam& seed, const DetectionRegion& region);

// Lag-integrated normally-ordered cross-correlation of the two fluxes; the
// explicit term plus its complex conjugate gives twice the pair rate.
double integrated_cross_correlation(const GainModel& gain, const OpticsGeometry& geom,
                                    const SeedBeam& seed, const DetectionRegion& r1,
                                    const DetectionRegion& r2);

// Lag-integrated normally-ordered arm-2 self term: 2 * pair rate.
double integrated_auto_correlation_arm2(const GainModel& gain, const OpticsGeometry& geom,
                                        const SeedBeam& seed, const DetectionRegion& r2);

double coherence_time(const GainModel& gain);

FluxStatistics compute_flux_statistics(const GainModel& gain, const OpticsGeometry& geom,
                                       const SeedBeam& seed, const DetectionRegion& r1,
                                       const DetectionRegion& r2);

}  // namespace stimcal
