#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "capann/filter_tree.hpp"
#include "capann/instances.hpp"

// Worst-case-to-pseudo-random reduction: a decision tree whose nodes are the
// procedures Process (randomly shifted grid + O_c(1) dense clusters + lift to
// a sphere), ProcessBall (delta-annulus discretization of a ball), and
// ProcessSphere (dense spherical caps + one Gaussian-filter step on the
// pseudo-random remainder). Leaves store point ids; queries walk the tree and
// verify exact distances against the original coordinates, so the geometry
// only shapes work, never correctness of a reported neighbor.
//
// Conventions at bench scale (all overridable through ReductionParams):
//   eps = 0.5, tau = 0.01, delta = 0.05 c r1, grid cell = 10 sqrt(d) c r1,
//   cluster caps of radius (sqrt(2)-eps) R around dataset points.
// eps must keep the cap measure Q((1 - (sqrt(2)-eps)^2/2) sqrt(d)) well below
// tau, or uniform data "clusters" and the build degenerates; at d ~ 64-128
// that needs eps ~ 0.5. The asymptotic schedules for eps/delta/tau (which
// guarantee the separation as n grows) exist behind asymptotic_params.

namespace capann::reduction {

struct ReductionParams {
    double eps = 0.5;    // cluster-cap slack (see header comment)
    double delta = 0.0;  // annulus width; 0 -> 0.05 * c * r1
    double tau = 0.01;   // dense-cluster mass fraction
    std::uint32_t K = 0;  // lsf-step cap per branch; 0 -> round(sqrt(log2 n))
    double C_const = 3.0;
    bool asymptotic_params = false;  // derive eps/delta/tau from n instead
    double grid_cell = 0.0;          // 0 -> 10 sqrt(d) c r1
    double cluster_radius_top = 0.0;  // 0 -> (sqrt(2)-eps) * per-cell radius
    double rho_s = 4.0 / 3.0;
    double success_factor = 100.0;
    double recall_target = 0.0;  // 0 -> single table
    std::uint32_t max_tables = 64;
    std::uint32_t num_tables = 1;
    std::uint64_t seed = 0;
    std::uint64_t max_nodes = 2'000'000;
    /// Subsets at or below this size are stored as leaves instead of growing
    /// further machinery; scanning a handful of candidates is cheaper than
    /// any filter step and the <= K lsf-steps-per-branch invariant is kept.
    std::uint64_t leaf_cutoff = 4;
    /// Data-side threshold convention for lsf steps. false (default): per-level
    /// survival tail(eta) = n^{-1/K}, shared with the filter tree. true: the
    /// far-pair rule joint_cap(eta, eta, alpha_far) = n^{-1/K}.
    bool far_pair_eta_convention = false;
    double r1 = 0.0;  // 0 -> instance nominal planted radius
    double r2 = 0.0;  // 0 -> c * r1
};

enum class NodeKind : std::uint8_t {
    process = 0,       // grid root or per-cell node
    process_ball = 1,
    process_sphere = 2,
    lsf_step = 3,
    leaf_store = 4,
    trivial_store = 5,
};

std::string_view node_kind_name(NodeKind k);

inline constexpr std::uint32_t kNoNode = 0xffffffffu;

struct DecisionNode {
    NodeKind kind = NodeKind::leaf_store;
    std::uint32_t k = 0;    // lsf-steps on the root path
    std::uint32_t dim = 0;  // dimension of this node's coordinate frame

    // Geometry: thresholds and, for sphere/ball nodes, the center.
    double r1 = 0.0, r2 = 0.0, R = 0.0;
    std::vector<double> center;

    // lsf_step payload: caps on a sphere of radius R around `center`, or on
    // the lifted unit sphere (lifted == true; lift maps x to
    // ((x - center), sqrt(M^2 - |x - center|^2)) / M with M = lift_scale).
    double eta = 0.0, eta_prime = 0.0;
    std::uint64_t T = 0;
    std::uint64_t stream = 0;
    bool lifted = false;
    double lift_scale = 0.0;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> filter_children;  // (j, node)

    // process / process_sphere payload.
    std::vector<std::uint32_t> cluster_children;  // ball nodes
    std::uint32_t lsf_child = kNoNode;

    // Grid payload (root only).
    double cell_side = 0.0;
    std::vector<double> grid_shift;
    std::vector<std::pair<std::vector<std::int64_t>, std::uint32_t>> cells;

    // ProcessBall payload: annulus width and (data ring i, query ring j) children.
    double delta = 0.0;
    std::vector<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> ring_children;

    // leaf_store / trivial_store payload.
    std::vector<std::uint32_t> bucket;
};

struct ClusterReport {
    struct Cluster {
        std::vector<double> center;  // enclosing-ball center
        double radius = 0.0;         // enclosing-ball radius
        std::uint32_t count = 0;
    };
    std::vector<Cluster> clusters;
    std::uint64_t remainder = 0;
};

/// Distance between p1 (on the radius-R1 sphere) and the radial projection
/// onto that sphere of a point p2 at radius R2 with |p1 - p2| = r:
/// sqrt(2 R1^2 (1 - cos theta)), cos theta = (R1^2 + R2^2 - r^2)/(2 R1 R2).
/// Throws std::invalid_argument outside |R1 - R2| <= r <= R1 + R2.
double project(double R1, double R2, double r);

/// project() with r clamped into the feasible range (used by the annulus
/// rounding, where thresholds may exceed the geometric extremes).
double project_clamped(double R1, double R2, double r);

/// Greedy dense-cap extraction on a sphere: repeatedly take the dataset point
/// whose (sqrt(2)-eps)R cap captures the most remaining points, while that
/// count is at least max(ceil(tau |P|), 2). Each cluster reports an enclosing
/// ball with radius <= (1 - eps^2/4) R (cap-axis center; a tighter candidate
/// is used when it wins). assignment[i] gets the cluster index or -1.
ClusterReport find_dense_clusters(std::span<const double> coords, std::uint32_t dim,
                                  std::span<const double> sphere_center, double R,
                                  double eps, double tau,
                                  std::vector<std::int32_t>& assignment);

class DecisionTree {
public:
    static DecisionTree build(const instances::SphereInstance& data,
                              const ReductionParams& params);

    tree::QueryStats query(const instances::SphereInstance& data,
                           std::span<const double> q, double r_threshold) const;

    const ReductionParams& params() const { return params_; }
    const std::vector<DecisionNode>& nodes() const { return nodes_; }
    const std::vector<std::uint32_t>& roots() const { return roots_; }
    std::uint64_t node_count() const { return nodes_.size(); }
    std::uint64_t bucket_mass() const;
    const ClusterReport& top_cluster_report() const { return top_clusters_; }

    /// Largest number of lsf-step nodes on any root-to-leaf path.
    std::uint32_t max_lsf_depth() const;

    void save(const std::string& path) const;
    static DecisionTree load(const std::string& path);
    void dump_dot(std::ostream& out) const;

private:
    ReductionParams params_;
    std::vector<DecisionNode> nodes_;
    std::vector<std::uint32_t> roots_;  // one per table
    ClusterReport top_clusters_;

    friend class ReductionBuilder;
};

}  // namespace capann::reduction
