#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

// Planted random instances: uniform datasets with queries generated from a
// planted point, either by per-coordinate bit noise (Hamming) or uniformly
// within a spherical cap (sphere). Instances are immutable after generation
// and deterministic for a fixed seed: point i draws from
// substream(seed, kTagPoint, i), query j picks its planted id from
// substream(seed, kTagQueryPick, j) and its noise from
// substream(seed, kTagQuery, j), so generation parallelizes per row.

namespace capann::instances {

/// Bit vectors over {-1,+1}^d packed into 64-bit words; Hamming distance by
/// popcount. A query is a planted point with each coordinate flipped
/// independently with probability 1/(2c).
struct HammingInstance {
    std::uint64_t n = 0;
    std::uint64_t d = 0;
    double c = 2.0;
    std::uint64_t seed = 0;
    std::size_t words_per_row = 0;
    std::vector<std::uint64_t> points;   // n * words_per_row
    std::vector<std::uint64_t> queries;  // q_count * words_per_row
    std::vector<std::uint32_t> planted;  // q_count

    std::uint64_t q_count() const { return planted.size(); }
    std::span<const std::uint64_t> point_row(std::uint64_t i) const {
        return {points.data() + i * words_per_row, words_per_row};
    }
    std::span<const std::uint64_t> query_row(std::uint64_t j) const {
        return {queries.data() + j * words_per_row, words_per_row};
    }
    /// Nominal planted radius d/(2c); the ANN catch radius is c times this.
    double nominal_r() const { return static_cast<double>(d) / (2.0 * c); }
};

/// Points on the sphere of radius R; a query is uniform on the cap of
/// (Euclidean) radius (sqrt(2)/c) R around its planted point, equivalently
/// <p/R, q/R> >= 1 - 1/c^2.
struct SphereInstance {
    std::uint64_t n = 0;
    std::uint64_t d = 0;
    double c = 2.0;
    double R = 1.0;
    std::uint64_t seed = 0;
    std::vector<double> points;   // n * d
    std::vector<double> queries;  // q_count * d
    std::vector<std::uint32_t> planted;

    std::uint64_t q_count() const { return planted.size(); }
    std::span<const double> point_row(std::uint64_t i) const {
        return {points.data() + i * d, d};
    }
    std::span<const double> query_row(std::uint64_t j) const {
        return {queries.data() + j * d, d};
    }
    double nominal_r() const { return 1.4142135623730951 / c * R; }
};

std::uint64_t hamming_distance(std::span<const std::uint64_t> a,
                               std::span<const std::uint64_t> b);
double euclidean_distance(std::span<const double> a, std::span<const double> b);

/// n i.i.d. uniform points of {-1,1}^d plus q_count planted queries.
/// Rejects c <= 1 (flip probability would be >= 1/2).
HammingInstance gen_hamming(std::uint64_t n, std::uint64_t d, double c,
                            std::uint64_t q_count, std::uint64_t seed);

/// n i.i.d. uniform points of the radius-R sphere plus q_count cap queries.
/// Rejects d < 2. The cap colatitude is drawn from the exact surface-measure
/// density sin^{d-2}(theta) restricted to the cap (see the .cpp for the
/// derivation); the tangent direction is uniform.
SphereInstance gen_sphere(std::uint64_t n, std::uint64_t d, double c, double R,
                          std::uint64_t q_count, std::uint64_t seed);

/// Map x -> x/sqrt(d): Hamming distance h becomes Euclidean 2 sqrt(h/d), so a
/// Hamming instance with approximation c becomes a unit-sphere instance with
/// approximation sqrt(c). Planted cap membership then holds in expectation
/// (planted distances concentrate at sqrt(2)/sqrt(c)), not pointwise.
SphereInstance hamming_to_sphere(const HammingInstance& h);

/// Exact all-pairs query statistics. The uniqueness threshold defaults to the
/// midpoint (r + cr)/2 between the nominal planted radius and the catch
/// radius; at the spec's hard parameters the raw catch radius cr coincides
/// with the bulk of the non-planted distance distribution (d/2 for Hamming,
/// sqrt(2) R on the sphere), so "unique within cr" would be degenerate there.
struct InstanceStats {
    std::vector<double> planted_distance;       // per query
    std::vector<double> min_other_distance;     // per query
    std::vector<std::uint64_t> planted_histogram;  // integer-binned distances
    double histogram_bin_width = 1.0;
    double threshold = 0.0;       // separation threshold actually used
    double unique_fraction = 0.0; // planted within threshold and all others beyond
    double planted_mean = 0.0;
};

InstanceStats instance_stats(const HammingInstance& inst, double threshold = 0.0);
InstanceStats instance_stats(const SphereInstance& inst, double threshold = 0.0);

/// Default benchmark dimension ceil(log2(n) * log2(log2(n))).
std::uint64_t default_dimension(std::uint64_t n);

// Flat binary serialization plus a JSON metadata sidecar ("<path>.json").
// Layout: magic "ANNINST1", u32 version, u32 metric (0 Hamming, 1 sphere),
// u64 n, u64 d, f64 c, f64 R, u64 seed, u64 q_count, then the row-major
// payload (packed u64 words or f64 coordinates; points, queries, planted ids
// as u32). Little-endian throughout.
void save_instance(const HammingInstance& inst, const std::string& path);
void save_instance(const SphereInstance& inst, const std::string& path);

enum class Metric : std::uint32_t { hamming = 0, sphere = 1 };

/// Peek at the metric tag of a serialized instance.
Metric instance_metric(const std::string& path);

HammingInstance load_hamming(const std::string& path);
SphereInstance load_sphere(const std::string& path);

}  // namespace capann::instances
