#include "capann/boolean_fn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "capann/rng.hpp"

namespace capann::bounds {

BooleanFn::BooleanFn(int d, double fill) : d_(d) {
    if (d < 0 || d > kMaxDim) throw std::invalid_argument("BooleanFn: dimension out of range");
    table_.assign(std::size_t{1} << d, fill);
}

BooleanFn BooleanFn::from_table(int d, std::vector<double> table) {
    BooleanFn f(d);
    if (table.size() != f.table_.size()) {
        throw std::invalid_argument("BooleanFn: table size must be 2^d");
    }
    f.table_ = std::move(table);
    return f;
}

double BooleanFn::expectation() const {
    double s = 0.0;
    for (double v : table_) s += v;
    return s / static_cast<double>(table_.size());
}

double BooleanFn::norm(double p) const {
    if (!(p >= 1.0)) throw std::invalid_argument("norm: p must be >= 1");
    double s = 0.0;
    for (double v : table_) s += std::pow(std::fabs(v), p);
    return std::pow(s / static_cast<double>(table_.size()), 1.0 / p);
}

double BooleanFn::inner(const BooleanFn& g) const {
    if (g.d_ != d_) throw std::invalid_argument("inner: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < table_.size(); ++i) s += table_[i] * g.table_[i];
    return s / static_cast<double>(table_.size());
}

void walsh_hadamard(std::vector<double>& a) {
    const std::size_t n = a.size();
    for (std::size_t len = 1; len < n; len <<= 1) {
        for (std::size_t i = 0; i < n; i += len << 1) {
            for (std::size_t j = i; j < i + len; ++j) {
                const double u = a[j];
                const double v = a[j + len];
                a[j] = u + v;
                a[j + len] = u - v;
            }
        }
    }
}

BooleanFn noise_operator(const BooleanFn& f, double sigma) {
    if (!(sigma >= 0.0 && sigma <= 1.0)) {
        throw std::invalid_argument("noise_operator: sigma must lie in [0, 1]");
    }
    const int d = f.dim();
    std::vector<double> a = f.table();
    walsh_hadamard(a);
    double pow_sigma[BooleanFn::kMaxDim + 1];
    pow_sigma[0] = 1.0;
    for (int k = 1; k <= d; ++k) pow_sigma[k] = pow_sigma[k - 1] * sigma;
    for (std::size_t mask = 0; mask < a.size(); ++mask) {
        a[mask] *= pow_sigma[std::popcount(mask)];
    }
    walsh_hadamard(a);
    const double scale = 1.0 / static_cast<double>(a.size());
    for (double& v : a) v *= scale;
    return BooleanFn::from_table(d, std::move(a));
}

HypercontractiveCheck check_hypercontractive(const BooleanFn& f, const BooleanFn& g,
                                             double sigma, double p, double q) {
    if (std::fabs((p - 1.0) * (q - 1.0) - sigma * sigma) > 1e-9) {
        throw std::invalid_argument(
            "check_hypercontractive: (p-1)(q-1) must equal sigma^2");
    }
    HypercontractiveCheck out;
    out.lhs = noise_operator(f, sigma).inner(g);
    out.rhs = f.norm(p) * g.norm(q);
    out.holds = out.lhs <= out.rhs + 1e-12;
    return out;
}

namespace {

// Given A (indicator), find the minimal-measure B capturing a gamma fraction
// of A's sigma-noisy mass: take vertices in decreasing T_sigma 1_A order.
// Pr[x in B, y in A] = E_x[1_B(x) T_sigma 1_A(x)].
ExpansionEstimate greedy_b_for(const BooleanFn& indicator_a, double sigma,
                               double gamma) {
    const std::size_t n = indicator_a.size();
    const double a_measure = indicator_a.expectation();
    const BooleanFn smoothed = noise_operator(indicator_a, sigma);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return smoothed[x] > smoothed[y];
    });
    const double needed = gamma * a_measure * static_cast<double>(n);
    double captured = 0.0;
    std::size_t b_count = 0;
    for (std::size_t idx : order) {
        if (captured >= needed - 1e-12) break;
        captured += smoothed[idx];
        ++b_count;
    }
    ExpansionEstimate out;
    out.a_measure = a_measure;
    out.b_measure = static_cast<double>(b_count) / static_cast<double>(n);
    out.gamma_achieved = captured / (a_measure * static_cast<double>(n));
    out.ratio = out.b_measure / a_measure;
    return out;
}

}  // namespace

ExpansionEstimate estimate_robust_expansion(int d, double sigma, double a_target,
                                            double gamma, std::uint64_t seed) {
    if (d < 1 || d > 16) {
        throw std::invalid_argument("estimate_robust_expansion: d must lie in [1, 16]");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw std::invalid_argument("estimate_robust_expansion: gamma must lie in (0, 1]");
    }
    const std::size_t n = std::size_t{1} << d;
    if (!(a_target >= 1.0 / static_cast<double>(n)) || !(a_target < 1.0)) {
        throw std::invalid_argument(
            "estimate_robust_expansion: a_target infeasible for this dimension");
    }

    std::vector<BooleanFn> candidates;
    std::vector<int> families;

    // All candidate sets must satisfy the measure constraint mu(A) <= a_target
    // of the robust-expansion definition.

    // Hamming ball around vertex 0: the largest radius still within budget.
    {
        std::vector<double> csum(static_cast<std::size_t>(d) + 1, 0.0);
        double acc = 0.0, binom = 1.0;
        for (int r = 0; r <= d; ++r) {
            if (r > 0) binom = binom * (d - r + 1) / r;
            acc += binom;
            csum[static_cast<std::size_t>(r)] = acc / static_cast<double>(n);
        }
        int r_lo = 0;
        while (r_lo + 1 <= d && csum[static_cast<std::size_t>(r_lo + 1)] <= a_target) ++r_lo;
        BooleanFn ball(d);
        for (std::size_t x = 0; x < n; ++x) {
            if (std::popcount(x) <= r_lo) ball[x] = 1.0;
        }
        candidates.push_back(std::move(ball));
        families.push_back(0);
    }
    // Subcube dictator: fix k coordinates with 2^-k <= a_target.
    {
        const int k = std::clamp(static_cast<int>(std::ceil(-std::log2(a_target) - 1e-12)),
                                 0, d);
        BooleanFn cube(d);
        const std::size_t fixed_mask = (std::size_t{1} << k) - 1;
        for (std::size_t x = 0; x < n; ++x) {
            if ((x & fixed_mask) == fixed_mask) cube[x] = 1.0;
        }
        candidates.push_back(std::move(cube));
        families.push_back(1);
    }
    // Random set filling the budget exactly.
    {
        const std::size_t target = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(a_target * static_cast<double>(n))));
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng::Engine eng(rng::substream(seed, rng::kTagMc, 1));
        for (std::size_t i = 0; i < target; ++i) {
            const std::size_t j = i + eng.next_below(n - i);
            std::swap(idx[i], idx[j]);
        }
        BooleanFn rnd(d);
        for (std::size_t i = 0; i < target; ++i) rnd[idx[i]] = 1.0;
        candidates.push_back(std::move(rnd));
        families.push_back(2);
    }

    ExpansionEstimate best;
    best.ratio = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].expectation() <= 0.0) continue;
        ExpansionEstimate e = greedy_b_for(candidates[i], sigma, gamma);
        e.family = families[i];
        if (e.ratio < best.ratio) best = e;
    }
    return best;
}

}  // namespace capann::bounds
