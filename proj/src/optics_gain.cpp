#include "stimcal/optics_gain.hpp"

#include <algorithm>

namespace stimcal {

GainValue eval_gain(const GainModel& model, Vec2 q, double omega) {
    if (!std::isfinite(q.x) || !std::isfinite(q.y) || !std::isfinite(omega))
        throw DomainError("eval_gain: non-finite (q, Omega)");
    if (model.peak_gain == 0.0) return {std::complex<double>(1.0, 0.0), {0.0, 0.0}};

    const double dq = (q.norm() - model.center_momentum) / model.momentum_bandwidth;
    const double dw = omega / model.frequency_bandwidth;
    const double delta = dq * dq + dw * dw;
    const double g0 = std::asinh(std::sqrt(model.peak_gain));
    const double sigma = g0 * detail::sinc(delta);

    const std::complex<double> phase(std::cos(model.phase), std::sin(model.phase));
    return {std::complex<double>(std::cosh(sigma), 0.0), phase * std::sinh(sigma)};
}

double check_unitarity(const GainModel& model,
                       std::span<const std::pair<Vec2, double>> grid) {
    if (grid.empty()) throw UsageError("check_unitarity: empty sample grid");

    double worst = 0.0;
    for (const auto& [q, omega] : grid) {
        const GainValue fwd = eval_gain(model, q, omega);
        const GainValue rev = eval_gain(model, -q, -omega);

        const double commutator = std::abs(std::norm(fwd.u) - std::norm(fwd.v) - 1.0);
        // Symmetric arms share (U, V), so the cross identity reads
        // U(q,W) V(-q,-W) = U(-q,-W) V(q,W).
        const double cross = std::abs(fwd.u * rev.v - rev.u * fwd.v);
        worst = std::max(worst, std::max(commutator, cross));
    }
    return worst;
}

Vec2 far_field_map(const OpticsGeometry& geom, Vec2 x) {
    const double scale = 2.0 * M_PI / (geom.wavelength_m * geom.focal_length_m);
    return {scale * x.x, scale * x.y};
}

Vec2 focal_plane_position(const OpticsGeometry& geom, Vec2 q) {
    const double scale = geom.wavelength_m * geom.focal_length_m / (2.0 * M_PI);
    return {scale * q.x, scale * q.y};
}

}  // namespace stimcal
