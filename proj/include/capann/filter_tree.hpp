#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "capann/instances.hpp"

// The Gaussian-cap filter tree: a single rooted T-ary tree of depth K.
// Every non-root node v carries a Gaussian direction z_v ~ N(0,1)^d derived
// deterministically from the seed and the node's root path, and a point p
// belongs to a leaf's bucket iff <z_v, p> >= eta * R for every non-root node
// v on the root-to-leaf path. Queries descend through children with
// <z_v, q> >= eta' * R and scan leaf buckets, verifying exact distances.
//
// The build is pruned: children whose point set is empty are never
// materialized, which changes storage but not bucket contents. Gaussians can
// be stored explicitly (default, faster queries) or regenerated from the
// path hash on demand (store_vectors = false, tiny memory); both paths
// produce bit-identical vectors.

namespace capann::tree {

enum class EtaPrimeRule : std::uint8_t {
    /// eta' solved from joint_cap(eta, eta', alpha) = success_factor / T
    /// (the asymptotic prescription; feasible only once success_factor/T
    /// drops below tail(eta)).
    lemma_b1,
    /// eta' = inv_tail(n^{-(rho_s - rho_q)/K}) so that the expected number of
    /// children visited per level is T * tail(eta') = n^{rho_q/K}; this is
    /// the same schedule expressed through the trade-off curve, and is the
    /// rule that remains meaningful at bench scale.
    tradeoff_schedule,
};

struct TreeParams {
    std::uint32_t K = 1;
    std::uint64_t T = 1;
    double eta = 0.0;        // data-side threshold, standard-normal units
    double eta_prime = 0.0;  // query-side threshold
    double R = 1.0;
    double rho_s = 1.0;      // targeted space exponent (space ~ n^rho_s)
    std::uint64_t seed = 0;
    std::uint64_t max_tree_nodes = 80'000'000;
    double success_factor = 100.0;
    std::uint32_t num_trees = 1;  // independent repetitions queried in order
    bool store_vectors = true;

    // Selection diagnostics (filled by select_params).
    EtaPrimeRule rule = EtaPrimeRule::tradeoff_schedule;
    double predicted_rho_q = 0.0;
    double joint_cap_planted = 0.0;     // joint cap prob. for the worst planted pair
    double recall_estimate_single = 0.0;  // analytic per-tree success estimate
    double recall_estimate = 0.0;         // across num_trees
};

struct SelectOptions {
    double success_factor = 100.0;
    /// 0 keeps a single tree. Otherwise num_trees is chosen so the analytic
    /// recall estimate reaches the target (the Lemma-B.1 constant is 0.9).
    double recall_target = 0.0;
    std::uint32_t max_trees = 64;
};

/// Appendix-B parameter selection: K = round(sqrt(log2 n)) (min 1),
/// eta = inv_tail(n^{-1/K}), T = ceil(n^{rho_s/K}), and eta' per EtaPrimeRule
/// (lemma_b1 when feasible, tradeoff_schedule otherwise). The planted pair is
/// taken at the cap boundary, inner product exactly R^2 (1 - 1/c^2).
/// Throws std::invalid_argument for n < 2, c <= 1 or rho_s < 1.
TreeParams select_params(std::uint64_t n, double c, double R, double rho_s,
                         const SelectOptions& opts = {});

/// Analytic per-query success estimate f(K) with f(0) = 1 and
/// f(k) = 1 - (1 - p f(k-1))^T, the recursion behind the tree success lemma.
double recall_recursion(double p, double T, std::uint32_t K);

struct QueryStats {
    std::uint64_t nodes_visited = 0;
    std::uint64_t inner_products = 0;
    std::uint64_t candidates_scanned = 0;
    std::int64_t result = -1;  // point id, or -1 on miss
    double distance_found = -1.0;

    bool found() const { return result >= 0; }
    std::uint64_t work() const { return nodes_visited + candidates_scanned; }
};

struct ResourceCapExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class FilterTree {
public:
    struct Node {
        std::uint64_t stream = 0;      // RNG stream of this node's Gaussian
        std::uint32_t first_child = 0;
        std::uint32_t child_count = 0;
        std::uint64_t bucket_begin = 0;
        std::uint32_t bucket_len = 0;
        std::uint32_t child_index = 0;  // index within the parent (0..T-1)
        std::uint16_t level = 0;
    };

    /// Build over a sphere instance; tree_index selects the repetition's
    /// stream. Throws ResourceCapExceeded past params.max_tree_nodes and
    /// std::invalid_argument on dimension/radius mismatch.
    static FilterTree build(const instances::SphereInstance& data,
                            const TreeParams& params, std::uint32_t tree_index = 0);

    QueryStats query(const instances::SphereInstance& data,
                     std::span<const double> q, double r_threshold) const;

    const TreeParams& params() const { return params_; }
    std::uint64_t node_count() const { return nodes_.size(); }
    std::uint64_t bucket_mass() const { return bucket_ids_.size(); }
    std::uint64_t dimension() const { return d_; }
    const std::vector<Node>& nodes() const { return nodes_; }
    std::span<const std::uint32_t> bucket(const Node& n) const {
        return {bucket_ids_.data() + n.bucket_begin, n.bucket_len};
    }

    /// Regenerate (or fetch) the Gaussian direction of a node.
    void node_vector(std::uint32_t node_idx, std::span<double> out) const;

    /// Exact recheck of the bucket-membership invariant: rebuilds the subset
    /// flow from the stored streams and compares every leaf bucket. Both
    /// sides evaluate the same dot products, so equality is exact.
    bool verify_buckets(const instances::SphereInstance& data) const;

    void save(const std::string& path) const;
    static FilterTree load(const std::string& path);

private:
    TreeParams params_;
    std::uint64_t d_ = 0;
    std::vector<Node> nodes_;               // nodes_[0] is the root
    std::vector<std::uint32_t> bucket_ids_; // leaf bucket arena
    std::vector<double> vectors_;           // node_count * d when stored

    friend class TreeBuilder;
};

/// num_trees independent trees queried until the first verified hit; the
/// per-query counters are summed across the trees actually touched.
class Forest {
public:
    static Forest build(const instances::SphereInstance& data, const TreeParams& params);
    static Forest from_trees(std::vector<FilterTree> trees, const TreeParams& params);
    QueryStats query(const instances::SphereInstance& data,
                     std::span<const double> q, double r_threshold) const;
    const std::vector<FilterTree>& trees() const { return trees_; }
    const TreeParams& params() const { return params_; }
    std::uint64_t node_count() const;
    std::uint64_t bucket_mass() const;

private:
    std::vector<FilterTree> trees_;
    TreeParams params_;
};

struct ExponentFit {
    double rho_q_hat = 0.0;
    double rho_space_hat = 0.0;
    double rho_q_stderr = 0.0;
    double rho_space_stderr = 0.0;
};

struct LadderPoint {
    std::uint64_t n = 0;
    double mean_work = 0.0;   // candidates_scanned + nodes_visited
    double space = 0.0;       // node count + bucket mass
};

/// Least-squares slopes of log(work) and log(space) against log(n).
/// Throws std::invalid_argument with fewer than 3 ladder points.
ExponentFit measured_exponents(std::span<const LadderPoint> ladder);

}  // namespace capann::tree
