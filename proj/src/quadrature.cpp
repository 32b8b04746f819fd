#include "stimcal/quadrature.hpp"

#include <cmath>
#include <queue>
#include <vector>

namespace stimcal {
namespace {

// Gauss-Kronrod 7/15 nodes on [-1, 1]. Gauss weights are zero at the
// Kronrod-only nodes, so one 15x15 tensor evaluation yields both rules.
constexpr int kNodes = 15;
constexpr double kNode[kNodes] = {
    -0.99145537112081263921, -0.94910791234275852453, -0.86486442335976907279,
    -0.74153118559939443986, -0.58608723546769113029, -0.40584515137739716691,
    -0.20778495500789846760, 0.0,
    0.20778495500789846760,  0.40584515137739716691,  0.58608723546769113029,
    0.74153118559939443986,  0.86486442335976907279,  0.94910791234275852453,
    0.99145537112081263921,
};
constexpr double kKronrodW[kNodes] = {
    0.02293532201052922496, 0.06309209262997855329, 0.10479001032225018384,
    0.14065325971552591875, 0.16900472663926790283, 0.19035057806478540991,
    0.20443294007529889241, 0.20948214108472782801, 0.20443294007529889241,
    0.19035057806478540991, 0.16900472663926790283, 0.14065325971552591875,
    0.10479001032225018384, 0.06309209262997855329, 0.02293532201052922496,
};
constexpr double kGaussW[kNodes] = {
    0.0, 0.12948496616886969327, 0.0, 0.27970539148927666790, 0.0,
    0.38183005050511894495, 0.0, 0.41795918367346938776, 0.0,
    0.38183005050511894495, 0.0, 0.27970539148927666790, 0.0,
    0.12948496616886969327, 0.0,
};

struct Cell {
    Rect rect;
    double value = 0.0;
    double error = 0.0;
};

Cell evaluate_cell(const std::function<double(double, double)>& f, const Rect& r) {
    const double cx = 0.5 * (r.x_lo + r.x_hi);
    const double cy = 0.5 * (r.y_lo + r.y_hi);
    const double hx = 0.5 * r.width();
    const double hy = 0.5 * r.height();

    double fy_k[kNodes];
    double fy_g[kNodes];
    for (int j = 0; j < kNodes; ++j) {
        const double y = cy + hy * kNode[j];
        double row_k = 0.0;
        double row_g = 0.0;
        for (int i = 0; i < kNodes; ++i) {
            const double v = f(cx + hx * kNode[i], y);
            row_k += kKronrodW[i] * v;
            row_g += kGaussW[i] * v;
        }
        fy_k[j] = row_k;
        fy_g[j] = row_g;
    }
    double kronrod = 0.0;
    double gauss = 0.0;
    for (int j = 0; j < kNodes; ++j) {
        kronrod += kKronrodW[j] * fy_k[j];
        gauss += kGaussW[j] * fy_g[j];
    }
    const double area = hx * hy;
    Cell cell{r, kronrod * area, std::abs(kronrod - gauss) * area};
    return cell;
}

struct WorseError {
    bool operator()(const Cell& a, const Cell& b) const { return a.error < b.error; }
};

}  // namespace

QuadratureResult integrate_2d(const std::function<double(double, double)>& f,
                              const Rect& domain, double rel_tol, double abs_tol,
                              int max_cells) {
    domain.validate();
    if (!(rel_tol > 0.0) && !(abs_tol > 0.0))
        throw UsageError("integrate_2d: need a positive tolerance");

    std::priority_queue<Cell, std::vector<Cell>, WorseError> cells;
    QuadratureResult result;

    Cell root = evaluate_cell(f, domain);
    result.evaluations = kNodes * kNodes;
    double total = root.value;
    double total_err = root.error;
    cells.push(root);

    int n_cells = 1;
    while (total_err > std::max(rel_tol * std::abs(total), abs_tol)) {
        if (n_cells + 3 > max_cells) {
            const double achieved =
                std::abs(total) > 0.0 ? total_err / std::abs(total) : total_err;
            throw NumericalError("integrate_2d: cell budget exhausted before tolerance", achieved);
        }
        Cell worst = cells.top();
        cells.pop();
        total -= worst.value;
        total_err -= worst.error;

        const double mx = 0.5 * (worst.rect.x_lo + worst.rect.x_hi);
        const double my = 0.5 * (worst.rect.y_lo + worst.rect.y_hi);
        const Rect quads[4] = {
            {worst.rect.x_lo, mx, worst.rect.y_lo, my},
            {mx, worst.rect.x_hi, worst.rect.y_lo, my},
            {worst.rect.x_lo, mx, my, worst.rect.y_hi},
            {mx, worst.rect.x_hi, my, worst.rect.y_hi},
        };
        for (const Rect& q : quads) {
            Cell c = evaluate_cell(f, q);
            result.evaluations += kNodes * kNodes;
            total += c.value;
            total_err += c.error;
            cells.push(c);
        }
        n_cells += 3;
    }

    result.value = total;
    result.error_estimate = total_err;
    return result;
}

}  // namespace stimcal
