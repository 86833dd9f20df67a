#include "capann/bounds.hpp"

#include <cmath>

namespace capann::bounds {

namespace {

// Coefficients (A, B, D) of A sqrt(rho_q) + B sqrt(rho_u) = D for the
// closed-form curves.
struct CurveCoeffs {
    double a, b, d;
};

CurveCoeffs coeffs(Curve curve, double c) {
    if (!(c > 1.0)) throw OutOfRange("curve: approximation factor c must be > 1");
    switch (curve) {
        case Curve::euclidean_eq1:
            return {c * c, c * c - 1.0, std::sqrt(2.0 * c * c - 1.0)};
        case Curve::hamming_eq2:
        case Curve::list_of_points_eq3:
            return {c, c - 1.0, std::sqrt(2.0 * c - 1.0)};
        case Curve::tree_appendix_b:
            // Handled through the eq1 coefficients with rho_s = 1 + rho_u.
            return {c * c, c * c - 1.0, std::sqrt(2.0 * c * c - 1.0)};
    }
    throw OutOfRange("curve: unknown curve");
}

}  // namespace

Curve curve_from_name(std::string_view name) {
    if (name == "eq1" || name == "euclidean-eq1") return Curve::euclidean_eq1;
    if (name == "eq2" || name == "hamming-eq2") return Curve::hamming_eq2;
    if (name == "eq3" || name == "list-of-points-eq3") return Curve::list_of_points_eq3;
    if (name == "tree" || name == "tree-appendixB") return Curve::tree_appendix_b;
    throw OutOfRange("unknown curve name");
}

std::string_view curve_name(Curve c) {
    switch (c) {
        case Curve::euclidean_eq1: return "euclidean-eq1";
        case Curve::hamming_eq2: return "hamming-eq2";
        case Curve::list_of_points_eq3: return "list-of-points-eq3";
        case Curve::tree_appendix_b: return "tree-appendixB";
    }
    return "unknown";
}

double rho_u_max(Curve curve, double c) {
    const auto k = coeffs(curve, c);
    return (k.d / k.b) * (k.d / k.b);
}

double rho_q_from_rho_u(Curve curve, double c, double rho_u) {
    if (curve == Curve::tree_appendix_b) {
        return tree_tradeoff_rho_q(c, 1.0 + rho_u);
    }
    const auto k = coeffs(curve, c);
    if (!(rho_u >= 0.0)) throw OutOfRange("rho_u must be >= 0");
    const double s = k.d - k.b * std::sqrt(rho_u);
    if (s < -1e-12) {
        throw OutOfRange("rho_u beyond the rho_q >= 0 end of the curve");
    }
    const double root = std::max(s, 0.0) / k.a;
    return root * root;
}

double rho_u_from_rho_q(Curve curve, double c, double rho_q) {
    const auto k = coeffs(curve, c);
    if (!(rho_q >= 0.0)) throw OutOfRange("rho_q must be >= 0");
    const double s = k.d - k.a * std::sqrt(rho_q);
    if (s < -1e-12) {
        throw OutOfRange("rho_q beyond the rho_u >= 0 end of the curve");
    }
    const double root = std::max(s, 0.0) / k.b;
    return root * root;
}

double curve_residual(Curve curve, double c, double rho_u, double rho_q) {
    if (curve == Curve::tree_appendix_b) {
        const double alpha = 1.0 - 1.0 / (c * c);
        const double rho_s = 1.0 + rho_u;
        return 1.0 + alpha * alpha * rho_s - rho_q -
               2.0 * alpha * std::sqrt(std::max(rho_s - rho_q, 0.0));
    }
    const auto k = coeffs(curve, c);
    return k.a * std::sqrt(std::max(rho_q, 0.0)) +
           k.b * std::sqrt(std::max(rho_u, 0.0)) - k.d;
}

double tree_tradeoff_rho_q_alpha(double alpha, double rho_s) {
    if (!(alpha > 0.0) || !(alpha < 1.0)) {
        throw OutOfRange("tree curve: alpha must lie in (0, 1)");
    }
    if (!(rho_s >= 1.0)) throw OutOfRange("tree curve: rho_s must be >= 1");
    const double max_rho_s = 1.0 / (alpha * alpha);
    if (rho_s > max_rho_s * (1.0 + 1e-12)) {
        throw OutOfRange("tree curve: rho_s beyond the rho_q = 0 endpoint 1/alpha^2");
    }
    auto g = [&](double rho_q) {
        return 1.0 + alpha * alpha * rho_s - rho_q -
               2.0 * alpha * std::sqrt(rho_s - rho_q);
    };
    // g is decreasing on [0, rho_s - alpha^2], g(0) = (alpha sqrt(rho_s)-1)^2 >= 0,
    // g(rho_s - alpha^2) = (1 - rho_s)(1 - alpha^2) <= 0: the relevant root is
    // bracketed there.
    double lo = 0.0, hi = rho_s - alpha * alpha;
    if (hi <= 0.0) return 0.0;
    if (g(lo) <= 0.0) return 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) > 0.0 ? lo : hi) = mid;
        if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

double tree_tradeoff_rho_q(double c, double rho_s) {
    if (!(c > 1.0)) throw OutOfRange("tree curve: c must be > 1");
    return tree_tradeoff_rho_q_alpha(1.0 - 1.0 / (c * c), rho_s);
}

double one_probe_space_exponent(double c) {
    if (!(c > 1.0)) throw OutOfRange("one_probe_space_exponent: c must be > 1");
    const double r = c / (c - 1.0);
    return r * r;
}

HolderPair ptw_schedule(double n, double sigma) {
    const double log_n = std::log2(n);
    const double loglog_n = std::log2(std::max(log_n, 2.0));
    HolderPair hp;
    hp.p = 1.0 + loglog_n / log_n;
    hp.q = 1.0 + sigma * sigma * log_n / loglog_n;
    return hp;
}

double log_robust_expansion_bound(double m, double gamma, double p, double q) {
    if (!(m >= 1.0)) throw OutOfRange("robust_expansion_bound: m must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw OutOfRange("robust_expansion_bound: gamma must lie in (0, 1]");
    }
    return q * std::log(gamma) + (1.0 + q / p - q) * std::log(m);
}

double robust_expansion_bound(double sigma, double m, double gamma, double p,
                              double q) {
    if (std::fabs((p - 1.0) * (q - 1.0) - sigma * sigma) > 1e-9) {
        throw OutOfRange("robust_expansion_bound: (p-1)(q-1) must equal sigma^2");
    }
    return std::exp(log_robust_expansion_bound(m, gamma, p, q));
}

PtwSides ptw_inequality_lhs_rhs(double m, double t, double w, double n, double c,
                                double gamma) {
    if (!(m >= 1.0) || !(n >= 1.0) || !(t >= 1.0)) {
        throw OutOfRange("ptw_inequality: m, n >= 1 and t >= 1 required");
    }
    if (!(gamma > 0.0) || !(gamma <= 1.0)) {
        throw OutOfRange("ptw_inequality: gamma must lie in (0, 1]");
    }
    const double sigma = 1.0 - 1.0 / c;
    PtwSides out;
    out.schedule = ptw_schedule(n, sigma);
    out.log_lhs = t * std::log(m) + std::log(w) - std::log(n);
    out.log_rhs = log_robust_expansion_bound(std::pow(m, t), gamma / t,
                                             out.schedule.p, out.schedule.q);
    out.lhs = std::exp(out.log_lhs);
    out.rhs = std::exp(out.log_rhs);
    return out;
}

}  // namespace capann::bounds
