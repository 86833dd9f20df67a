#pragma once

#include <cstddef>
#include <functional>

// Adaptive Gauss-Kronrod (G7, K15) integration on a finite interval.
// Error per panel is estimated as |K15 - G7|; panels are bisected until the
// local estimate passes its share of the tolerance or the depth cap is hit.

namespace capann::quad {

struct Result {
    double value = 0.0;
    double error_estimate = 0.0;
    std::size_t evaluations = 0;
    bool converged = true;
};

/// Integrate f over [a, b]. Tolerance is abs_tol + rel_tol * |integral|.
/// max_depth bounds the bisection recursion (panel width >= (b-a)/2^max_depth).
Result integrate(const std::function<double(double)>& f, double a, double b,
                 double abs_tol = 1e-15, double rel_tol = 1e-13,
                 int max_depth = 52);

}  // namespace capann::quad
