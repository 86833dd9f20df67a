#pragma once

#include <cstdint>
#include <stdexcept>
#include <string_view>

// Single and joint Gaussian cap probabilities and their inversions.
//
// For a unit vector u and z ~ N(0,1)^d, Pr[<z,u> >= eta] is the 1-d standard
// normal upper tail Q(eta). For two unit vectors p, q with <p,q> = alpha, the
// pair (<z,p>, <z,q>) is standard bivariate normal with correlation alpha, so
// Pr[<z,p> >= eta and <z,q> >= eta'] is a correlated orthant probability.
// Everything here is computed in log-space so that quantities like
// 2^{-sqrt(log n)} raised to K never underflow.

namespace capann::caps {

enum class Method : std::uint8_t {
    exact_1d,
    bivariate_integral,
    monte_carlo,
    asymptotic,
};

std::string_view method_name(Method m);

/// A probability paired with its natural log, which stays usable when the
/// linear value underflows to zero.
struct CapProb {
    double value = 0.0;
    double log_value = 0.0;
    Method method = Method::exact_1d;
};

/// Q(eta) = Pr[N(0,1) >= eta]. Relative error ~1e-15 via erfc; the log branch
/// switches to the Mills asymptotic series above eta = 30 and is good to
/// eta = 40 and far beyond.
CapProb tail(double eta);

/// log Q(eta), exposed separately for hot paths.
double log_tail(double eta);

/// phi(eta)/Q(eta), the normal hazard rate.
double hazard(double eta);

/// Inverse of tail(): tail(inv_tail(p)).value == p to 1e-10 relative.
/// Throws std::invalid_argument outside (0, 1).
double inv_tail(double p);

/// Pr[X >= eta and Y >= eta'] for standard bivariate normal (X, Y) with
/// correlation alpha. Exact by adaptive Gauss-Kronrod quadrature of
/// Q((eta - alpha t)/beta) phi(t) over t >= eta', beta = sqrt(1 - alpha^2),
/// evaluated around the integrand's log-space maximum. alpha = +-1 are
/// handled as the degenerate one-dimensional cases.
CapProb joint_cap(double eta, double eta_prime, double alpha);

/// The exponent (eta^2 + eta'^2 - 2 alpha eta eta') / (2 beta^2) from the
/// asymptotic cap lemma: joint_cap ~ exp(-(1+o(1)) * exponent).
/// Throws std::invalid_argument when beta == 0.
double joint_cap_asymptotic_exponent(double eta, double eta_prime, double alpha);

/// Largest eta' with joint_cap(eta, eta', alpha) == target_p (the function is
/// non-increasing in eta'). Bisection on a geometrically expanded bracket,
/// 1e-9 relative on the probability. Throws capann::caps::NoSolution when
/// target_p exceeds the eta' -> -inf limit tail(eta).
double inv_joint_cap_eta_prime(double eta, double alpha, double target_p);

/// Symmetric-threshold inversion: eta with joint_cap(eta, eta, alpha) == target_p.
double inv_joint_cap_symmetric(double alpha, double target_p);

struct NoSolution : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct McEstimate {
    double value = 0.0;
    double stderr_value = 0.0;
    std::uint64_t samples = 0;
};

/// Plain Monte Carlo estimate of joint_cap, used for cross-checks.
McEstimate mc_joint_cap(double eta, double eta_prime, double alpha,
                        std::uint64_t samples, std::uint64_t seed);

}  // namespace capann::caps
