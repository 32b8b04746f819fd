#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <utility>
#include <vector>

#include "stimcal/errors.hpp"

namespace stimcal {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator-() const { return {-x, -y}; }
    double norm() const { return std::hypot(x, y); }
};

// Geometry of the far-field imaging arrangement: a thin lens of focal
// length f at distance f from the crystal output face maps transverse
// momentum q onto focal-plane position x = q * lambda * f / (2 pi).
struct OpticsGeometry {
    double wavelength_m = 0.0;      // degenerate signal wavelength
    double focal_length_m = 0.0;    // lens focal length
    double crystal_length_m = 0.0;  // crystal length l
    double central_angle_rad = 0.0; // emission direction w.r.t. pump

    void validate() const {
        if (!(wavelength_m > 0.0) || !(focal_length_m > 0.0) || !(crystal_length_m > 0.0))
            throw UsageError("OpticsGeometry: wavelength, focal length and crystal length must be positive");
        if (!(central_angle_rad > 0.0) || !(central_angle_rad < 1.5707963267948966))
            throw UsageError("OpticsGeometry: central angle must lie in (0, pi/2)");
    }
};

// Transverse momentum of the phase-matched emission cone.
inline double center_momentum(const OpticsGeometry& geom) {
    return 2.0 * M_PI / geom.wavelength_m * std::sin(geom.central_angle_rad);
}

// Parametric gain description. U and V are the Bogoliubov coefficients of
// the two-mode squeezing transformation,
//     U = cosh(sigma), V = exp(i phase) sinh(sigma),
// with sigma(q, Omega) = asinh(sqrt(G)) * sinc(delta) and the mismatch
// profile delta = ((|q| - q_center)/dq)^2 + (Omega/dOmega)^2. This choice
// satisfies |U|^2 - |V|^2 = 1 identically and is even under
// (q, Omega) -> (-q, -Omega), which makes the cross identity between the two
// arms hold exactly. peak_gain G = max |V|^2 at the phase-matching peak.
//
// The bandwidths scale as dq ~ 1/(l tan(theta)) and dOmega ~ l^(-1/2) for a
// crystal of length l; no universal constants exist for them, so they are
// free parameters here.
struct GainModel {
    double peak_gain = 0.0;           // G
    double momentum_bandwidth = 0.0;  // dq, rad/m
    double frequency_bandwidth = 0.0; // dOmega, rad/s
    double phase = 0.0;               // global phase of V
    double center_momentum = 0.0;     // q_center = (2 pi / lambda) sin(theta)

    static GainModel for_geometry(double peak_gain, double momentum_bandwidth,
                                  double frequency_bandwidth, double phase,
                                  const OpticsGeometry& geom) {
        GainModel m{peak_gain, momentum_bandwidth, frequency_bandwidth, phase,
                    stimcal::center_momentum(geom)};
        m.validate();
        return m;
    }

    void validate() const {
        if (!(peak_gain >= 0.0) || !std::isfinite(peak_gain))
            throw UsageError("GainModel: peak_gain must be finite and >= 0");
        if (!(momentum_bandwidth > 0.0) || !(frequency_bandwidth > 0.0))
            throw UsageError("GainModel: bandwidths must be positive");
        if (!std::isfinite(phase) || !std::isfinite(center_momentum) || center_momentum < 0.0)
            throw UsageError("GainModel: phase/center_momentum invalid");
    }
};

struct GainValue {
    std::complex<double> u;
    std::complex<double> v;
};

namespace detail {
// sin(x)/x with the x -> 0 limit expanded analytically.
inline double sinc(double x) {
    if (std::abs(x) < 1e-4) {
        const double x2 = x * x;
        return 1.0 - x2 / 6.0 * (1.0 - x2 / 20.0);
    }
    return std::sin(x) / x;
}
}  // namespace detail

GainValue eval_gain(const GainModel& model, Vec2 q, double omega);

// Maximum violation of the two unitarity identities over a sample grid:
//   | |U|^2 - |V|^2 - 1 |   and   | U1(q,W) V2(-q,-W) - U2(-q,-W) V1(q,W) |.
double check_unitarity(const GainModel& model, std::span<const std::pair<Vec2, double>> grid);

// Far-field geometric transformation q = 2 pi x / (lambda f).
Vec2 far_field_map(const OpticsGeometry& geom, Vec2 x);

// Inverse of far_field_map: focal-plane position of mode q.
Vec2 focal_plane_position(const OpticsGeometry& geom, Vec2 q);

}  // namespace stimcal
