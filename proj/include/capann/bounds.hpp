#pragma once

#include <cstdint>
#include <stdexcept>
#include <string_view>

// Analytic evaluators for the time-space trade-off curves and the cell-probe
// lower-bound formulas.
//
// Curves, with space n^{1+rho_u} = n^{rho_s} and query time n^{rho_q}:
//   euclidean_eq1      c^2 sqrt(rho_q) + (c^2-1) sqrt(rho_u) = sqrt(2c^2-1)
//   hamming_eq2        c   sqrt(rho_q) + (c-1)   sqrt(rho_u) = sqrt(2c-1)
//   list_of_points_eq3 boundary of the lower bound, same equation as eq2
//   tree_appendix_b    1 + a^2 rho_s - rho_q - 2 a sqrt(rho_s - rho_q) = 0,
//                      a = 1 - 1/c^2 (provably identical to eq1 with
//                      rho_s = 1 + rho_u)

namespace capann::bounds {

enum class Curve : std::uint8_t {
    euclidean_eq1,
    hamming_eq2,
    list_of_points_eq3,
    tree_appendix_b,
};

Curve curve_from_name(std::string_view name);
std::string_view curve_name(Curve c);

struct OutOfRange : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Admissible rho_u range is [0, rho_u_max(curve, c)] (the rho_q >= 0 branch).
double rho_u_max(Curve curve, double c);

/// rho_q for a given rho_u on the curve (nonnegative root). Throws OutOfRange.
double rho_q_from_rho_u(Curve curve, double c, double rho_u);

/// Inverse direction: rho_u for a given rho_q.
double rho_u_from_rho_q(Curve curve, double c, double rho_q);

/// Equation residual at a candidate point; 0 on the curve.
double curve_residual(Curve curve, double c, double rho_u, double rho_q);

/// Solve the Appendix-B tree equation for rho_q in [0, rho_s] by bisection,
/// with alpha = 1 - 1/c^2.
double tree_tradeoff_rho_q(double c, double rho_s);

/// Same equation for an arbitrary correlation alpha in (0, 1); used by the
/// reduction, whose nodes see planted correlations other than 1 - 1/c^2.
double tree_tradeoff_rho_q_alpha(double alpha, double rho_s);

/// (c/(c-1))^2, the one-probe space exponent; equals 1/sigma^2 for
/// sigma = 1 - 1/c.
double one_probe_space_exponent(double c);

/// The "ptw-schedule": p = 1 + loglog(n)/log(n) and
/// q = 1 + sigma^2 log(n)/loglog(n) (base-2 logs). All sweeps that cite the
/// schedule go through here.
struct HolderPair {
    double p = 1.0;
    double q = 1.0;
};
HolderPair ptw_schedule(double n, double sigma);

/// gamma^q * m^{1 + q/p - q}, computed in log-space.
double log_robust_expansion_bound(double m, double gamma, double p, double q);
double robust_expansion_bound(double sigma, double m, double gamma, double p, double q);

/// Both sides of m^t w / n >= Phi_r(1/m^t, gamma/t) with Phi_r replaced by its
/// analytic lower bound under the ptw-schedule. Returned in log-space; the
/// linear fields are exp() of those and may over/underflow for extreme input.
struct PtwSides {
    double log_lhs = 0.0;
    double log_rhs = 0.0;
    double lhs = 0.0;
    double rhs = 0.0;
    HolderPair schedule;
};
PtwSides ptw_inequality_lhs_rhs(double m, double t, double w, double n, double c,
                                double gamma);

}  // namespace capann::bounds
