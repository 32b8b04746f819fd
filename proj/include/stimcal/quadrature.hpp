#pragma once

#include <cstdint>
#include <functional>

#include "stimcal/errors.hpp"

namespace stimcal {

struct Rect {
    double x_lo = 0.0;
    double x_hi = 0.0;
    double y_lo = 0.0;
    double y_hi = 0.0;

    double width() const { return x_hi - x_lo; }
    double height() const { return y_hi - y_lo; }

    void validate() const {
        if (!(x_hi > x_lo) || !(y_hi > y_lo))
            throw UsageError("Rect: empty or inverted extent");
    }
};

struct QuadratureResult {
    double value = 0.0;
    double error_estimate = 0.0;  // absolute
    std::int64_t evaluations = 0;
};

// Adaptive 2-D quadrature over a rectangle: tensor Gauss-Kronrod 7/15 per
// cell, quadrisecting the cell with the largest error estimate until the
// summed estimate drops below rel_tol * |integral| (or abs_tol). Throws
// NumericalError with the achieved tolerance if the cell budget runs out.
QuadratureResult integrate_2d(const std::function<double(double, double)>& f,
                              const Rect& domain, double rel_tol,
                              double abs_tol = 0.0, int max_cells = 200000);

}  // namespace stimcal
