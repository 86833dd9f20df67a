#pragma once

#include <cstdint>
#include <vector>

// Exact Boolean-function machinery on small hypercubes {-1,1}^d.
// Functions are stored as truth tables of 2^d reals; all norms and inner
// products use the expectation (uniform-measure) convention,
// ||f||_p = (E_x |f(x)|^p)^{1/p}.

namespace capann::bounds {

class BooleanFn {
public:
    static constexpr int kMaxDim = 24;

    BooleanFn(int d, double fill = 0.0);
    static BooleanFn from_table(int d, std::vector<double> table);

    int dim() const { return d_; }
    std::size_t size() const { return table_.size(); }
    double operator[](std::size_t x) const { return table_[x]; }
    double& operator[](std::size_t x) { return table_[x]; }
    const std::vector<double>& table() const { return table_; }

    double expectation() const;
    double norm(double p) const;
    /// <f, g> = E[f g].
    double inner(const BooleanFn& g) const;

private:
    int d_;
    std::vector<double> table_;
};

/// T_sigma f: each output bit keeps its input value with probability sigma
/// and is uniform otherwise, so the level-k Fourier coefficient scales by
/// sigma^k. Exact via the Walsh-Hadamard transform. sigma in [0,1], d <= 24.
BooleanFn noise_operator(const BooleanFn& f, double sigma);

/// In-place unnormalized Walsh-Hadamard transform (self-inverse up to 2^d).
void walsh_hadamard(std::vector<double>& a);

struct HypercontractiveCheck {
    double lhs = 0.0;   // <T_sigma f, g>
    double rhs = 0.0;   // ||f||_p ||g||_q
    bool holds = false;
};

/// Checks <T_sigma f, g> <= ||f||_p ||g||_q, requiring (p-1)(q-1) == sigma^2
/// to 1e-9. Intended for nonnegative f, g (the norm convention used here).
HypercontractiveCheck check_hypercontractive(const BooleanFn& f, const BooleanFn& g,
                                             double sigma, double p, double q);

struct ExpansionEstimate {
    double ratio = 0.0;          // best (smallest) mu(B)/mu(A) found
    double a_measure = 0.0;      // measure of the best A
    double b_measure = 0.0;      // measure of its minimal B
    double gamma_achieved = 0.0; // correlation actually captured by B
    int family = -1;             // 0 ball, 1 subcube, 2 random
};

/// Constructive upper estimate of the robust expansion Phi_r(a, gamma):
/// searches Hamming balls, subcube dictators and random sets for A of
/// measure ~ a_target, and for each builds the minimal-measure B capturing a
/// gamma fraction of A's noisy mass by taking vertices in decreasing
/// T_sigma 1_A order (an exact minimizer for fixed A, by rearrangement).
/// d <= 16; throws std::invalid_argument when a_target < 2^-d.
ExpansionEstimate estimate_robust_expansion(int d, double sigma, double a_target,
                                            double gamma, std::uint64_t seed = 7);

}  // namespace capann::bounds
