#include "capann/gaussian_caps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "capann/quadrature.hpp"
#include "capann/rng.hpp"

namespace capann::caps {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kLogSqrt2Pi = 0.9189385332046727;  // log(sqrt(2*pi))
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_phi(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

// log(exp(a) - exp(b)) for a > b.
double log_diff_exp(double a, double b) {
    if (b == kNegInf) return a;
    return a + std::log1p(-std::exp(b - a));
}

}  // namespace

std::string_view method_name(Method m) {
    switch (m) {
        case Method::exact_1d: return "exact-1d";
        case Method::bivariate_integral: return "bivariate-integral";
        case Method::monte_carlo: return "monte-carlo";
        case Method::asymptotic: return "asymptotic";
    }
    return "unknown";
}

double log_tail(double eta) {
    if (!(eta > 30.0)) {
        // erfc is accurate to a few ulp down to ~1e-300; take its log directly.
        return std::log(0.5 * std::erfc(eta / kSqrt2));
    }
    // Mills asymptotic: Q(x) = phi(x)/x * (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8 - ...)
    const double inv2 = 1.0 / (eta * eta);
    const double series =
        1.0 + inv2 * (-1.0 + inv2 * (3.0 + inv2 * (-15.0 + inv2 * 105.0)));
    return log_phi(eta) - std::log(eta) + std::log(series);
}

CapProb tail(double eta) {
    if (std::isnan(eta)) throw std::invalid_argument("tail: eta is NaN");
    CapProb out;
    out.method = Method::exact_1d;
    out.log_value = log_tail(eta);
    out.value = (eta > 30.0) ? std::exp(out.log_value) : 0.5 * std::erfc(eta / kSqrt2);
    return out;
}

double hazard(double eta) {
    // phi/Q; for very negative eta Q ~ 1 and phi underflows harmlessly.
    return std::exp(log_phi(eta) - log_tail(eta));
}

double inv_tail(double p) {
    if (!(p > 0.0) || !(p < 1.0)) {
        throw std::invalid_argument("inv_tail: p must lie in (0, 1)");
    }
    const double logp = std::log(p);
    // Initial guess: asymptotic inversion of log Q for small p, symmetric for
    // the upper half, else 0.
    double x;
    if (p < 0.5) {
        const double u = -2.0 * logp;
        x = std::sqrt(std::max(u - std::log(u) - std::log(2.0 * 3.141592653589793), 1e-12));
    } else if (p > 0.5) {
        const double u = -2.0 * std::log1p(-p);
        x = -std::sqrt(std::max(u - std::log(u) - std::log(2.0 * 3.141592653589793), 1e-12));
    } else {
        return 0.0;
    }
    // Safeguarded Newton on g(x) = log_tail(x) - log p, g'(x) = -hazard(x).
    double lo = -41.0, hi = 41.0;
    for (int it = 0; it < 200; ++it) {
        const double g = log_tail(x) - logp;
        if (g > 0.0) lo = std::max(lo, x);  // tail too big -> x too small
        else hi = std::min(hi, x);
        const double step = g / hazard(x);
        double next = x + step;
        if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);
        if (std::fabs(next - x) <= 1e-15 * std::max(1.0, std::fabs(x))) {
            x = next;
            break;
        }
        x = next;
    }
    return x;
}

double joint_cap_asymptotic_exponent(double eta, double eta_prime, double alpha) {
    const double beta2 = (1.0 - alpha) * (1.0 + alpha);
    if (beta2 <= 0.0) {
        throw std::invalid_argument("joint_cap_asymptotic_exponent: |alpha| must be < 1");
    }
    return (eta * eta + eta_prime * eta_prime - 2.0 * alpha * eta * eta_prime) /
           (2.0 * beta2);
}

namespace {

struct LogIntegrand {
    double eta, alpha, beta;
    double operator()(double t) const {
        return log_phi(t) + log_tail((eta - alpha * t) / beta);
    }
    // d/dt of the above; decreasing in t because the integrand is log-concave.
    double slope(double t) const {
        return -t + (alpha / beta) * hazard((eta - alpha * t) / beta);
    }
};

}  // namespace

CapProb joint_cap(double eta, double eta_prime, double alpha) {
    if (!(std::fabs(alpha) <= 1.0)) {
        throw std::invalid_argument("joint_cap: alpha must lie in [-1, 1]");
    }
    CapProb out;
    if (alpha == 1.0) {
        out = tail(std::max(eta, eta_prime));
        out.method = Method::exact_1d;
        return out;
    }
    if (alpha == -1.0) {
        // Y = -X: event is eta <= X <= -eta_prime.
        out.method = Method::exact_1d;
        if (-eta_prime <= eta) {
            out.value = 0.0;
            out.log_value = kNegInf;
            return out;
        }
        out.log_value = log_diff_exp(log_tail(eta), log_tail(-eta_prime));
        out.value = std::exp(out.log_value);
        return out;
    }

    const double beta = std::sqrt((1.0 - alpha) * (1.0 + alpha));
    const LogIntegrand li{eta, alpha, beta};

    // Locate the maximum of the log-integrand on [eta_prime, inf).
    double tstar = eta_prime;
    if (li.slope(eta_prime) > 0.0) {
        double lo = eta_prime;
        double hi = std::max(eta_prime, 0.0) + 1.0;
        while (li.slope(hi) > 0.0) hi = 2.0 * hi + 1.0;
        for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::fabs(hi)); ++it) {
            const double mid = 0.5 * (lo + hi);
            (li.slope(mid) > 0.0 ? lo : hi) = mid;
        }
        tstar = 0.5 * (lo + hi);
    }
    const double peak = li(tstar);
    out.method = Method::bivariate_integral;
    if (peak == kNegInf) {
        out.value = 0.0;
        out.log_value = kNegInf;
        return out;
    }

    // Beyond the peak the integrand decays at least like a Gaussian; 16 units
    // past max(tstar, eta') contribute < e^{-100} of the peak.
    const double t_hi = std::max(tstar, eta_prime) + 16.0;
    auto shifted = [&](double t) { return std::exp(li(t) - peak); };
    const auto res = quad::integrate(shifted, eta_prime, t_hi, 1e-300, 1e-13);
    if (res.value <= 0.0) {
        out.value = 0.0;
        out.log_value = kNegInf;
        return out;
    }
    out.log_value = peak + std::log(res.value);
    out.value = std::exp(out.log_value);
    return out;
}

double inv_joint_cap_eta_prime(double eta, double alpha, double target_p) {
    if (!(target_p > 0.0)) {
        throw std::invalid_argument("inv_joint_cap_eta_prime: target_p must be > 0");
    }
    const double log_target = std::log(target_p);
    const double log_limit =
        (alpha == 1.0) ? log_tail(eta) : log_tail(eta);  // eta' -> -inf limit
    if (log_target >= log_limit) {
        // At alpha == 1 the limit is attained for every eta' <= eta.
        if (alpha == 1.0 && log_target == log_limit) return eta;
        throw NoSolution("inv_joint_cap_eta_prime: target exceeds the eta' -> -inf limit");
    }
    if (alpha == 1.0) {
        // joint_cap(eta, x, 1) = Q(max(eta, x)); target < Q(eta) forces x > eta.
        return inv_tail(target_p);
    }

    auto log_joint = [&](double x) { return joint_cap(eta, x, alpha).log_value; };

    // Geometric bracket expansion: joint is non-increasing in eta'.
    double lo = std::min(eta, 0.0) - 1.0;
    while (log_joint(lo) < log_target) lo = 2.0 * lo - 1.0;
    double hi = std::max(eta, 0.0) + 1.0;
    while (log_joint(hi) >= log_target) hi = 2.0 * hi + 1.0;

    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double lj = log_joint(mid);
        if (std::fabs(lj - log_target) <= 1e-12 * std::fabs(log_target) + 1e-13) {
            return mid;
        }
        (lj >= log_target ? lo : hi) = mid;
        if (hi - lo <= 1e-14 * std::max(1.0, std::fabs(hi))) break;
    }
    return 0.5 * (lo + hi);
}

double inv_joint_cap_symmetric(double alpha, double target_p) {
    if (!(target_p > 0.0) || !(target_p < 1.0)) {
        throw std::invalid_argument("inv_joint_cap_symmetric: target_p must lie in (0, 1)");
    }
    auto log_joint = [&](double x) { return joint_cap(x, x, alpha).log_value; };
    const double log_target = std::log(target_p);
    double lo = -1.0;
    while (log_joint(lo) < log_target) lo = 2.0 * lo - 1.0;
    double hi = 1.0;
    while (log_joint(hi) >= log_target) hi = 2.0 * hi + 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (log_joint(mid) >= log_target ? lo : hi) = mid;
        if (hi - lo <= 1e-14 * std::max(1.0, std::fabs(hi))) break;
    }
    return 0.5 * (lo + hi);
}

McEstimate mc_joint_cap(double eta, double eta_prime, double alpha,
                        std::uint64_t samples, std::uint64_t seed) {
    rng::Engine eng(rng::substream(seed, rng::kTagMc, 0));
    const double beta = std::sqrt(std::max(0.0, (1.0 - alpha) * (1.0 + alpha)));
    std::uint64_t hits = 0;
    for (std::uint64_t i = 0; i < samples; ++i) {
        const double x = eng.next_normal();
        const double y = alpha * x + beta * eng.next_normal();
        if (x >= eta && y >= eta_prime) ++hits;
    }
    McEstimate out;
    out.samples = samples;
    out.value = static_cast<double>(hits) / static_cast<double>(samples);
    out.stderr_value =
        std::sqrt(std::max(out.value * (1.0 - out.value), 1e-300) /
                  static_cast<double>(samples));
    return out;
}

}  // namespace capann::caps
