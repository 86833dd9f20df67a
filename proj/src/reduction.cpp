#include "capann/reduction.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>

#include "capann/bounds.hpp"
#include "capann/gaussian_caps.hpp"
#include "capann/rng.hpp"

namespace capann::reduction {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

double dot_n(const double* a, const double* b, std::uint32_t dim) {
    double acc = 0.0;
    for (std::uint32_t i = 0; i < dim; ++i) acc += a[i] * b[i];
    return acc;
}

double dist_n(const double* a, const double* b, std::uint32_t dim) {
    double acc = 0.0;
    for (std::uint32_t i = 0; i < dim; ++i) {
        const double t = a[i] - b[i];
        acc += t * t;
    }
    return std::sqrt(acc);
}

void fill_gaussian(std::uint64_t stream, std::span<double> out) {
    rng::Engine eng(stream);
    for (double& v : out) v = eng.next_normal();
}

}  // namespace

std::string_view node_kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::process: return "process";
        case NodeKind::process_ball: return "process-ball";
        case NodeKind::process_sphere: return "process-sphere";
        case NodeKind::lsf_step: return "lsf-step";
        case NodeKind::leaf_store: return "leaf-store";
        case NodeKind::trivial_store: return "trivial-store";
    }
    return "unknown";
}

double project(double R1, double R2, double r) {
    if (!(R1 > 0.0) || !(R2 > 0.0)) {
        throw std::invalid_argument("project: radii must be positive");
    }
    const double tol = 1e-9 * (R1 + R2 + r);
    if (r < std::fabs(R1 - R2) - tol || r > R1 + R2 + tol) {
        throw std::invalid_argument("project: infeasible (R1, R2, r) triangle");
    }
    return project_clamped(R1, R2, r);
}

double project_clamped(double R1, double R2, double r) {
    const double cos_theta =
        std::clamp((R1 * R1 + R2 * R2 - r * r) / (2.0 * R1 * R2), -1.0, 1.0);
    return std::sqrt(std::max(0.0, 2.0 * R1 * R1 * (1.0 - cos_theta)));
}

ClusterReport find_dense_clusters(std::span<const double> coords, std::uint32_t dim,
                                  std::span<const double> sphere_center, double R,
                                  double eps, double tau,
                                  std::vector<std::int32_t>& assignment) {
    const std::size_t m = coords.size() / dim;
    assignment.assign(m, -1);
    ClusterReport report;
    report.remainder = m;
    if (m == 0) return report;
    const double cap_radius = (kSqrt2 - eps) * R;
    const std::size_t need =
        std::max<std::size_t>(2, static_cast<std::size_t>(
                                     std::ceil(tau * static_cast<double>(m))));

    // Pairwise near flags, bit-packed (row-major). m is bounded by the node's
    // subset size, which stays small at bench scale.
    const std::size_t words = (m + 63) / 64;
    std::vector<std::uint64_t> near(m * words, 0);
    for (std::size_t a = 0; a < m; ++a) {
        near[a * words + a / 64] |= std::uint64_t{1} << (a % 64);
        for (std::size_t b = a + 1; b < m; ++b) {
            if (dist_n(coords.data() + a * dim, coords.data() + b * dim, dim) <=
                cap_radius) {
                near[a * words + b / 64] |= std::uint64_t{1} << (b % 64);
                near[b * words + a / 64] |= std::uint64_t{1} << (a % 64);
            }
        }
    }
    std::vector<std::uint64_t> alive(words, 0);
    for (std::size_t a = 0; a < m; ++a) alive[a / 64] |= std::uint64_t{1} << (a % 64);

    const double cos_theta_max = kSqrt2 * eps - 0.5 * eps * eps;

    for (;;) {
        std::size_t best = m;
        std::size_t best_count = 0;
        for (std::size_t a = 0; a < m; ++a) {
            if (!((alive[a / 64] >> (a % 64)) & 1)) continue;
            std::size_t count = 0;
            for (std::size_t w = 0; w < words; ++w) {
                count += static_cast<std::size_t>(
                    std::popcount(near[a * words + w] & alive[w]));
            }
            if (count > best_count) {
                best_count = count;
                best = a;
            }
        }
        if (best == m || best_count < need) break;

        ClusterReport::Cluster cl;
        cl.count = static_cast<std::uint32_t>(best_count);
        const std::int32_t cluster_idx = static_cast<std::int32_t>(report.clusters.size());
        std::vector<std::size_t> members;
        members.reserve(best_count);
        for (std::size_t w = 0; w < words; ++w) {
            std::uint64_t bits = near[best * words + w] & alive[w];
            while (bits) {
                const int b = std::countr_zero(bits);
                bits &= bits - 1;
                const std::size_t idx = w * 64 + static_cast<std::size_t>(b);
                members.push_back(idx);
                assignment[idx] = cluster_idx;
                alive[w] &= ~(std::uint64_t{1} << b);
            }
        }

        // Enclosing ball. Candidate 1: the cap-axis point
        // o + R cos(theta_max) x^, which always yields radius <= R sin(theta_max)
        // <= (1 - eps^2/4) R for members of the cap. Candidate 2: the spherical
        // projection of the member mean, usually much tighter for concentrated
        // clusters. Keep whichever encloses the members with smaller radius.
        const double* seed_pt = coords.data() + best * dim;
        std::vector<double> axis_center(dim), mean_center(dim, 0.0);
        for (std::uint32_t t = 0; t < dim; ++t) {
            axis_center[t] = sphere_center[t] +
                             cos_theta_max * (seed_pt[t] - sphere_center[t]);
        }
        for (const std::size_t idx : members) {
            const double* p = coords.data() + idx * dim;
            for (std::uint32_t t = 0; t < dim; ++t) mean_center[t] += p[t];
        }
        double mean_norm = 0.0;
        for (std::uint32_t t = 0; t < dim; ++t) {
            mean_center[t] = mean_center[t] / static_cast<double>(members.size()) -
                             sphere_center[t];
            mean_norm += mean_center[t] * mean_center[t];
        }
        mean_norm = std::sqrt(mean_norm);
        if (mean_norm > 0.0) {
            for (std::uint32_t t = 0; t < dim; ++t) {
                mean_center[t] = sphere_center[t] + mean_center[t] * (R / mean_norm);
            }
        } else {
            mean_center = axis_center;
        }
        auto radius_for = [&](const std::vector<double>& ctr) {
            double rmax = 0.0;
            for (const std::size_t idx : members) {
                rmax = std::max(rmax, dist_n(coords.data() + idx * dim, ctr.data(), dim));
            }
            return rmax;
        };
        const double r_axis = radius_for(axis_center);
        const double r_mean = radius_for(mean_center);
        if (r_mean < r_axis) {
            cl.center = mean_center;
            cl.radius = r_mean;
        } else {
            cl.center = axis_center;
            cl.radius = r_axis;
        }
        report.clusters.push_back(std::move(cl));
        report.remainder -= members.size();
    }
    return report;
}

namespace {

struct Working {
    std::vector<std::uint32_t> ids;   // original point ids
    std::vector<double> coords;       // ids.size() * dim, in the node's frame
    std::uint32_t dim = 0;

    std::size_t size() const { return ids.size(); }
    const double* row(std::size_t i) const { return coords.data() + i * dim; }
};

struct LsfParams {
    std::uint64_t T = 0;
    double eta = 0.0;
    double eta_prime = 0.0;
};

}  // namespace

class ReductionBuilder {
public:
    ReductionBuilder(const instances::SphereInstance& data, ReductionParams params)
        : data_(data), params_(params) {
        n_ = data.n;
        const double log2n = std::log2(static_cast<double>(std::max<std::uint64_t>(n_, 4)));
        if (params_.K == 0) {
            params_.K = static_cast<std::uint32_t>(
                std::max<long>(1, std::lround(std::sqrt(log2n))));
        }
        if (params_.r1 <= 0.0) params_.r1 = data.nominal_r();
        if (params_.r2 <= 0.0) params_.r2 = data.c * params_.r1;
        if (params_.asymptotic_params) {
            const double ll = std::log2(std::max(log2n, 2.0));
            const double lll = std::log2(std::max(ll, 2.0));
            params_.eps = std::min(0.5, 1.0 / std::max(lll, 1.0));
            params_.delta = std::exp(-std::pow(lll, params_.C_const)) * data.c * params_.r1;
            params_.tau = std::exp(-std::pow(log2n, 2.0 / 3.0) * std::log(2.0));
        }
        if (params_.delta <= 0.0) params_.delta = 0.05 * data.c * params_.r1;
        if (params_.grid_cell <= 0.0) {
            params_.grid_cell =
                10.0 * std::sqrt(static_cast<double>(data.d)) * data.c * params_.r1;
        }
        if (params_.recall_target > 0.0 && params_.num_tables <= 1) {
            params_.num_tables = pick_num_tables();
        }
        if (params_.num_tables < 1) params_.num_tables = 1;
    }

    DecisionTree take() {
        DecisionTree t;
        for (std::uint32_t table = 0; table < params_.num_tables; ++table) {
            roots_.push_back(build_root(table));
        }
        t.params_ = params_;
        t.nodes_ = std::move(nodes_);
        t.roots_ = std::move(roots_);
        t.top_clusters_ = std::move(top_clusters_);
        return t;
    }

private:
    std::uint32_t pick_num_tables() const {
        // Mirror the filter tree's analytic estimate on the pseudo-random
        // remainder; clusters are always searched, so the remainder bounds
        // per-table success from below.
        const double alpha =
            std::clamp(1.0 - params_.r1 * params_.r1 / (2.0 * data_.R * data_.R),
                       0.05, 0.999);
        const LsfParams lp = select_lsf(alpha, 0.0);
        const double p = caps::joint_cap(lp.eta, lp.eta_prime, alpha).value;
        const double f1 = std::clamp(
            tree::recall_recursion(p, static_cast<double>(lp.T), params_.K), 1e-9,
            1.0 - 1e-12);
        if (f1 >= params_.recall_target) return 1;
        const double L =
            std::ceil(std::log1p(-params_.recall_target) / std::log1p(-f1));
        return static_cast<std::uint32_t>(
            std::clamp<double>(L, 1.0, params_.max_tables));
    }

    std::uint32_t new_node(NodeKind kind, std::uint32_t k, std::uint32_t dim) {
        if (nodes_.size() >= params_.max_nodes) {
            throw tree::ResourceCapExceeded("decision tree exceeded max_nodes");
        }
        DecisionNode n;
        n.kind = kind;
        n.k = k;
        n.dim = dim;
        nodes_.push_back(std::move(n));
        return static_cast<std::uint32_t>(nodes_.size() - 1);
    }

    LsfParams select_lsf(double alpha_near, double alpha_far) const {
        LsfParams lp;
        const double nn = static_cast<double>(n_);
        const double tail_eta = std::pow(nn, -1.0 / params_.K);
        lp.eta = params_.far_pair_eta_convention
                     ? caps::inv_joint_cap_symmetric(alpha_far, tail_eta)
                     : caps::inv_tail(tail_eta);
        lp.T = static_cast<std::uint64_t>(std::ceil(std::pow(nn, params_.rho_s / params_.K)));
        const double target = params_.success_factor / static_cast<double>(lp.T);
        if (target < caps::tail(lp.eta).value) {
            lp.eta_prime = caps::inv_joint_cap_eta_prime(lp.eta, alpha_near, target);
        } else {
            const double max_rho_s = 1.0 / (alpha_near * alpha_near);
            const double rho_q = bounds::tree_tradeoff_rho_q_alpha(
                alpha_near, std::min(params_.rho_s, max_rho_s));
            const double t = std::min(
                std::pow(nn, -(params_.rho_s - rho_q) / params_.K), 1.0 - 1e-12);
            lp.eta_prime = caps::inv_tail(t);
        }
        return lp;
    }

    std::uint32_t make_leaf(const Working& w, std::uint32_t k, NodeKind kind,
                            double r1, double r2, double R) {
        const std::uint32_t idx = new_node(kind, k, w.dim);
        nodes_[idx].r1 = r1;
        nodes_[idx].r2 = r2;
        nodes_[idx].R = R;
        if (kind == NodeKind::trivial_store) {
            nodes_[idx].bucket.assign(1, w.ids.front());
        } else {
            nodes_[idx].bucket = w.ids;
        }
        return idx;
    }

    std::uint32_t build_root(std::uint32_t table) {
        const std::uint64_t grid_stream =
            rng::substream(params_.seed, rng::kTagGrid, table);
        const std::uint32_t d = static_cast<std::uint32_t>(data_.d);
        const std::uint32_t idx = new_node(NodeKind::process, 0, d);
        nodes_[idx].cell_side = params_.grid_cell;
        nodes_[idx].r1 = params_.r1;
        nodes_[idx].r2 = params_.r2;
        {
            rng::Engine eng(grid_stream);
            nodes_[idx].grid_shift.resize(d);
            for (double& s : nodes_[idx].grid_shift) {
                s = eng.next_unit() * params_.grid_cell;
            }
        }
        // Partition the dataset by grid cell.
        std::map<std::vector<std::int64_t>, Working> cells;
        for (std::uint64_t i = 0; i < data_.n; ++i) {
            const double* p = data_.points.data() + i * data_.d;
            std::vector<std::int64_t> key(d);
            for (std::uint32_t t = 0; t < d; ++t) {
                key[t] = static_cast<std::int64_t>(std::floor(
                    (p[t] - nodes_[idx].grid_shift[t]) / params_.grid_cell));
            }
            Working& w = cells[key];
            if (w.dim == 0) w.dim = d;
            w.ids.push_back(static_cast<std::uint32_t>(i));
            w.coords.insert(w.coords.end(), p, p + d);
        }
        for (auto& [key, w] : cells) {
            const std::uint64_t cell_stream =
                rng::substream(grid_stream, rng::kTagCell, std::hash<std::string_view>{}(
                    std::string_view(reinterpret_cast<const char*>(key.data()),
                                     key.size() * sizeof(std::int64_t))));
            const std::uint32_t child =
                build_process_cell(w, 0, cell_stream, table == 0);
            nodes_[idx].cells.emplace_back(key, child);
        }
        return idx;
    }

    // Per-cell machinery: O_c(1) dense clusters in raw coordinates, then a
    // unit-norm lift of the remainder. The lifted remainder continues as a
    // ProcessSphere instance on the fixed unit sphere (radius thresholds
    // rescaled by the lift), where any further dense clusters are caps of
    // that sphere and shrink geometrically.
    std::uint32_t build_process_cell(const Working& w, std::uint32_t k,
                                     std::uint64_t stream, bool record_clusters) {
        if (k >= params_.K || w.size() <= params_.leaf_cutoff) {
            return make_leaf(w, k, NodeKind::leaf_store, params_.r1, params_.r2, 0.0);
        }
        const std::uint32_t d = w.dim;

        // Cell extent around the centroid.
        std::vector<double> centroid(d, 0.0);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double* p = w.row(i);
            for (std::uint32_t t = 0; t < d; ++t) centroid[t] += p[t];
        }
        for (double& v : centroid) v /= static_cast<double>(w.size());
        double r_hat = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            r_hat = std::max(r_hat, dist_n(w.row(i), centroid.data(), d));
        }
        if (r_hat == 0.0) {
            return make_leaf(w, k, NodeKind::leaf_store, params_.r1, params_.r2, 0.0);
        }
        const std::uint32_t idx = new_node(NodeKind::process, k, d);
        nodes_[idx].r1 = params_.r1;
        nodes_[idx].r2 = params_.r2;

        const double cluster_radius = params_.cluster_radius_top > 0.0
                                          ? params_.cluster_radius_top
                                          : (kSqrt2 - params_.eps) * r_hat;
        std::vector<std::int32_t> assignment;
        const ClusterReport clusters =
            greedy_ball_clusters(w, cluster_radius, assignment);
        if (record_clusters && k == 0) {
            for (const auto& cl : clusters.clusters) top_clusters_.clusters.push_back(cl);
            top_clusters_.remainder += clusters.remainder;
        }
        Working rem;
        rem.dim = d;
        std::vector<Working> cluster_sets(clusters.clusters.size());
        for (auto& cs : cluster_sets) cs.dim = d;
        for (std::size_t i = 0; i < w.size(); ++i) {
            Working& dst = assignment[i] >= 0
                               ? cluster_sets[static_cast<std::size_t>(assignment[i])]
                               : rem;
            dst.ids.push_back(w.ids[i]);
            dst.coords.insert(dst.coords.end(), w.row(i), w.row(i) + d);
        }
        for (std::size_t ci = 0; ci < cluster_sets.size(); ++ci) {
            const std::uint32_t child = build_process_ball(
                cluster_sets[ci], clusters.clusters[ci].center,
                clusters.clusters[ci].radius, params_.r1, params_.r2, k,
                rng::substream(stream, rng::kTagChild, 1000 + ci));
            nodes_[idx].cluster_children.push_back(child);
        }

        if (rem.size() == 0) return idx;
        if (rem.size() <= params_.leaf_cutoff) {
            nodes_[idx].lsf_child =
                make_leaf(rem, k, NodeKind::leaf_store, params_.r1, params_.r2, 0.0);
            return idx;
        }

        // Unit-norm lift: translate to the remainder centroid, append a
        // coordinate equalizing norms, scale to the unit sphere. The lift can
        // only increase pairwise distances, by at most the lift-coordinate
        // spread.
        std::vector<double> m(d, 0.0);
        for (std::size_t i = 0; i < rem.size(); ++i) {
            const double* p = rem.row(i);
            for (std::uint32_t t = 0; t < d; ++t) m[t] += p[t];
        }
        for (double& v : m) v /= static_cast<double>(rem.size());
        double M = 0.0;
        for (std::size_t i = 0; i < rem.size(); ++i) {
            M = std::max(M, dist_n(rem.row(i), m.data(), d));
        }
        if (M <= 0.0) {
            nodes_[idx].lsf_child =
                make_leaf(rem, k, NodeKind::leaf_store, params_.r1, params_.r2, 0.0);
            return idx;
        }
        Working lifted;
        lifted.dim = d + 1;
        lifted.ids = rem.ids;
        lifted.coords.resize(rem.size() * (d + 1));
        double lift_lo = 1.0, lift_hi = 0.0;
        for (std::size_t i = 0; i < rem.size(); ++i) {
            const double* p = rem.row(i);
            double* out = lifted.coords.data() + i * (d + 1);
            double norm2 = 0.0;
            for (std::uint32_t t = 0; t < d; ++t) {
                out[t] = (p[t] - m[t]) / M;
                norm2 += out[t] * out[t];
            }
            out[d] = std::sqrt(std::max(0.0, 1.0 - norm2));
            lift_lo = std::min(lift_lo, out[d]);
            lift_hi = std::max(lift_hi, out[d]);
        }
        nodes_[idx].lifted = true;
        nodes_[idx].lift_scale = M;
        nodes_[idx].center = m;

        // Rescaled ANN thresholds on the lifted unit sphere. Near pairs may be
        // stretched by the lift-coordinate spread; widen r1 accordingly.
        const double spread = std::max(0.0, lift_hi - lift_lo);
        const double lifted_r1 = std::sqrt(params_.r1 * params_.r1 +
                                           spread * spread * M * M) / M;
        const double lifted_r2 = params_.r2 / M;
        std::vector<double> origin(d + 1, 0.0);
        nodes_[idx].lsf_child = build_process_sphere(
            lifted, origin, 1.0, std::min(lifted_r1, lifted_r2 * (1.0 - 1e-9)),
            lifted_r2, k, rng::substream(stream, rng::kTagChild, 1));
        return idx;
    }

    ClusterReport greedy_ball_clusters(const Working& w, double radius,
                                       std::vector<std::int32_t>& assignment) {
        // Same greedy as the spherical version but with metric balls and the
        // enclosing ball taken around the member centroid.
        const std::size_t m = w.size();
        assignment.assign(m, -1);
        ClusterReport report;
        report.remainder = m;
        const std::size_t need = std::max<std::size_t>(
            2, static_cast<std::size_t>(std::ceil(params_.tau * static_cast<double>(m))));
        const std::size_t words = (m + 63) / 64;
        std::vector<std::uint64_t> near(m * words, 0);
        for (std::size_t a = 0; a < m; ++a) {
            near[a * words + a / 64] |= std::uint64_t{1} << (a % 64);
            for (std::size_t b = a + 1; b < m; ++b) {
                if (dist_n(w.row(a), w.row(b), w.dim) <= radius) {
                    near[a * words + b / 64] |= std::uint64_t{1} << (b % 64);
                    near[b * words + a / 64] |= std::uint64_t{1} << (a % 64);
                }
            }
        }
        std::vector<std::uint64_t> alive(words, 0);
        for (std::size_t a = 0; a < m; ++a) alive[a / 64] |= std::uint64_t{1} << (a % 64);
        for (;;) {
            std::size_t best = m, best_count = 0;
            for (std::size_t a = 0; a < m; ++a) {
                if (!((alive[a / 64] >> (a % 64)) & 1)) continue;
                std::size_t count = 0;
                for (std::size_t wd = 0; wd < words; ++wd) {
                    count += static_cast<std::size_t>(
                        std::popcount(near[a * words + wd] & alive[wd]));
                }
                if (count > best_count) {
                    best_count = count;
                    best = a;
                }
            }
            if (best == m || best_count < need) break;
            ClusterReport::Cluster cl;
            std::vector<std::size_t> members;
            for (std::size_t wd = 0; wd < words; ++wd) {
                std::uint64_t bits = near[best * words + wd] & alive[wd];
                while (bits) {
                    const int b = std::countr_zero(bits);
                    bits &= bits - 1;
                    const std::size_t bidx = wd * 64 + static_cast<std::size_t>(b);
                    members.push_back(bidx);
                    assignment[bidx] = static_cast<std::int32_t>(report.clusters.size());
                    alive[wd] &= ~(std::uint64_t{1} << b);
                }
            }
            cl.count = static_cast<std::uint32_t>(members.size());
            cl.center.assign(w.dim, 0.0);
            for (const std::size_t b : members) {
                for (std::uint32_t t = 0; t < w.dim; ++t) cl.center[t] += w.row(b)[t];
            }
            for (double& v : cl.center) v /= static_cast<double>(members.size());
            for (const std::size_t b : members) {
                cl.radius = std::max(cl.radius, dist_n(w.row(b), cl.center.data(), w.dim));
            }
            report.remainder -= members.size();
            report.clusters.push_back(std::move(cl));
        }
        return report;
    }

    std::uint32_t build_process_sphere(const Working& w, std::vector<double> o,
                                       double R, double r1, double r2,
                                       std::uint32_t k, std::uint64_t stream) {
        if (k >= params_.K || w.size() <= params_.leaf_cutoff) {
            return make_leaf(w, k, NodeKind::leaf_store, r1, r2, R);
        }
        if (r2 >= 2.0 * R) {
            return make_leaf(w, k, NodeKind::trivial_store, r1, r2, R);
        }
        const std::uint32_t d = w.dim;
        const bool random_like = r2 >= kSqrt2 * R * (1.0 - 1e-12);

        const std::uint32_t idx = new_node(NodeKind::process_sphere, k, d);
        nodes_[idx].r1 = r1;
        nodes_[idx].r2 = r2;
        nodes_[idx].R = R;
        nodes_[idx].center = o;

        Working rem;
        rem.dim = d;
        if (!random_like) {
            std::vector<std::int32_t> assignment;
            const ClusterReport clusters = find_dense_clusters(
                w.coords, d, o, R, params_.eps, params_.tau, assignment);
            std::vector<Working> cluster_sets(clusters.clusters.size());
            for (auto& cs : cluster_sets) cs.dim = d;
            for (std::size_t i = 0; i < w.size(); ++i) {
                Working& dst =
                    assignment[i] >= 0
                        ? cluster_sets[static_cast<std::size_t>(assignment[i])]
                        : rem;
                dst.ids.push_back(w.ids[i]);
                dst.coords.insert(dst.coords.end(), w.row(i), w.row(i) + d);
            }
            for (std::size_t ci = 0; ci < cluster_sets.size(); ++ci) {
                const std::uint32_t child = build_process_ball(
                    cluster_sets[ci], clusters.clusters[ci].center,
                    clusters.clusters[ci].radius, r1, r2, k,
                    rng::substream(stream, rng::kTagChild, 2000 + ci));
                nodes_[idx].cluster_children.push_back(child);
            }
        } else {
            rem = w;
        }
        if (rem.size() == 0) return idx;

        // One Gaussian filter step on the pseudo-random remainder. The far
        // distance is r2 in the random-like case and sqrt(2) R otherwise.
        const double far = random_like ? r2 : kSqrt2 * R;
        const double alpha_far = 1.0 - far * far / (2.0 * R * R);
        const double alpha_near_raw = 1.0 - r1 * r1 / (2.0 * R * R);
        if (alpha_near_raw <= 0.02) {
            // Near distance is not contractive on this sphere; filters cannot
            // separate, so store and scan.
            nodes_[idx].lsf_child = make_leaf(rem, k, NodeKind::leaf_store, r1, r2, R);
            return idx;
        }
        const double alpha_near = std::min(alpha_near_raw, 0.999);
        const LsfParams lp = select_lsf(alpha_near, alpha_far);
        const std::uint64_t lsf_stream = rng::substream(stream, rng::kTagChild, 1);
        const std::uint32_t lsf = new_node(NodeKind::lsf_step, k, d);
        nodes_[lsf].eta = lp.eta;
        nodes_[lsf].eta_prime = lp.eta_prime;
        nodes_[lsf].T = lp.T;
        nodes_[lsf].R = R;
        nodes_[lsf].stream = lsf_stream;
        nodes_[lsf].center = o;
        nodes_[lsf].r1 = r1;
        nodes_[lsf].r2 = r2;
        nodes_[idx].lsf_child = lsf;

        std::vector<double> z(d);
        const double threshold = lp.eta * R;
        for (std::uint64_t j = 0; j < lp.T; ++j) {
            const std::uint64_t child_stream = rng::substream(lsf_stream, rng::kTagChild, j);
            fill_gaussian(child_stream, z);
            Working sub;
            sub.dim = d;
            for (std::size_t i = 0; i < rem.size(); ++i) {
                const double* p = rem.row(i);
                double acc = 0.0;
                for (std::uint32_t t = 0; t < d; ++t) acc += z[t] * (p[t] - o[t]);
                if (acc >= threshold) {
                    sub.ids.push_back(rem.ids[i]);
                    sub.coords.insert(sub.coords.end(), p, p + d);
                }
            }
            if (sub.size() == 0) continue;
            const std::uint32_t child = build_process_sphere(
                sub, o, R, r1, r2, k + 1, rng::substream(child_stream, rng::kTagCell, 0));
            nodes_[lsf].filter_children.emplace_back(static_cast<std::uint32_t>(j), child);
        }
        return idx;
    }

    std::uint32_t build_process_ball(const Working& w, std::vector<double> o,
                                     double R, double r1, double r2,
                                     std::uint32_t k, std::uint64_t stream) {
        if (r1 + 2.0 * R <= r2 || w.size() <= params_.leaf_cutoff) {
            return make_leaf(w, k,
                             r1 + 2.0 * R <= r2 ? NodeKind::trivial_store
                                                : NodeKind::leaf_store,
                             r1, r2, R);
        }
        const double delta = params_.delta;
        const std::uint32_t d = w.dim;
        const std::uint32_t idx = new_node(NodeKind::process_ball, k, d);
        nodes_[idx].r1 = r1;
        nodes_[idx].r2 = r2;
        nodes_[idx].R = R;
        nodes_[idx].center = o;
        nodes_[idx].delta = delta;

        // Round distances to the center up to multiples of delta; ring 0 is
        // folded into ring 1 (a point at the exact center moves by delta,
        // within the 2-delta pair distortion budget).
        std::map<std::uint32_t, Working> rings;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double dist = dist_n(w.row(i), o.data(), d);
            const std::uint32_t ring = std::max<std::uint32_t>(
                1, static_cast<std::uint32_t>(std::ceil(dist / delta - 1e-12)));
            Working& rw = rings[ring];
            if (rw.dim == 0) rw.dim = d;
            rw.ids.push_back(w.ids[i]);
            const double target_radius = delta * ring;
            const double scale = dist > 0.0 ? target_radius / dist : 0.0;
            for (std::uint32_t t = 0; t < d; ++t) {
                const double y = dist > 0.0
                                     ? o[t] + scale * (w.row(i)[t] - o[t])
                                     : o[t] + (t == 0 ? target_radius : 0.0);
                rw.coords.push_back(y);
            }
        }
        const std::uint32_t j_max = static_cast<std::uint32_t>(
            std::ceil((R + r1) / delta)) + 1;
        const std::uint32_t admissible = static_cast<std::uint32_t>(
            std::floor((r1 + 2.0 * delta) / delta + 1e-12));
        for (auto& [ring, rw] : rings) {
            const std::uint32_t j_lo = ring > admissible ? ring - admissible : 1;
            const std::uint32_t j_hi = std::min(ring + admissible, j_max);
            for (std::uint32_t j = j_lo; j <= j_hi; ++j) {
                const double Ri = delta * ring;
                const double Rj = delta * j;
                const double rt1 = project_clamped(Ri, Rj, r1 + 2.0 * delta);
                double rt2 = project_clamped(
                    Ri, Rj, std::max(r2 - 2.0 * delta, std::fabs(Ri - Rj)));
                rt2 = std::max(rt2, rt1 * (1.0 + 1e-9) + 1e-12);
                const std::uint32_t child = build_process_sphere(
                    rw, o, Ri, rt1, rt2, k,
                    rng::substream(stream, rng::kTagChild,
                                   std::uint64_t{ring} * 1000003 + j));
                nodes_[idx].ring_children.emplace_back(ring, j, child);
            }
        }
        return idx;
    }

    const instances::SphereInstance& data_;
    ReductionParams params_;
    std::uint64_t n_ = 0;
    std::vector<DecisionNode> nodes_;
    std::vector<std::uint32_t> roots_;
    ClusterReport top_clusters_;
};

DecisionTree DecisionTree::build(const instances::SphereInstance& data,
                                 const ReductionParams& params) {
    ReductionBuilder b(data, params);
    return b.take();
}

std::uint64_t DecisionTree::bucket_mass() const {
    std::uint64_t acc = 0;
    for (const auto& n : nodes_) acc += n.bucket.size();
    return acc;
}

std::uint32_t DecisionTree::max_lsf_depth() const {
    std::uint32_t best = 0;
    for (const auto& n : nodes_) best = std::max(best, n.k);
    return best;
}

namespace {

struct QueryWalker {
    const DecisionTree& tree;
    const instances::SphereInstance& data;
    std::span<const double> q_orig;
    double r_threshold;
    tree::QueryStats stats;

    bool scan_leaf(const DecisionNode& node) {
        for (const std::uint32_t id : node.bucket) {
            ++stats.candidates_scanned;
            const double dist =
                instances::euclidean_distance(data.point_row(id), q_orig);
            if (dist <= r_threshold) {
                stats.result = id;
                stats.distance_found = dist;
                return true;
            }
        }
        return false;
    }

    // q is the query expressed in the node's coordinate frame (ball-node
    // projections modify it); the original query is used for verification.
    bool walk(std::uint32_t idx, const std::vector<double>& q) {
        const DecisionNode& node = tree.nodes()[idx];
        ++stats.nodes_visited;
        switch (node.kind) {
            case NodeKind::leaf_store:
            case NodeKind::trivial_store:
                return scan_leaf(node);
            case NodeKind::process: {
                for (const std::uint32_t c : node.cluster_children) {
                    if (walk(c, q)) return true;
                }
                if (!node.cells.empty()) {
                    std::vector<std::int64_t> key(node.dim);
                    for (std::uint32_t t = 0; t < node.dim; ++t) {
                        key[t] = static_cast<std::int64_t>(std::floor(
                            (q[t] - node.grid_shift[t]) / node.cell_side));
                    }
                    for (const auto& [cell_key, child] : node.cells) {
                        if (cell_key == key) return walk(child, q);
                    }
                    return false;
                }
                if (node.lsf_child == kNoNode) return false;
                if (!node.lifted) return walk(node.lsf_child, q);
                // The remainder subtree lives on the lifted unit sphere.
                std::vector<double> qlift(node.dim + 1);
                double norm2 = 0.0;
                const double M = node.lift_scale;
                for (std::uint32_t t = 0; t < node.dim; ++t) {
                    qlift[t] = (q[t] - node.center[t]) / M;
                    norm2 += qlift[t] * qlift[t];
                }
                qlift[node.dim] = std::sqrt(std::max(0.0, 1.0 - norm2));
                return walk(node.lsf_child, qlift);
            }
            case NodeKind::process_sphere: {
                for (const std::uint32_t c : node.cluster_children) {
                    if (walk(c, q)) return true;
                }
                if (node.lsf_child != kNoNode) return walk(node.lsf_child, q);
                return false;
            }
            case NodeKind::lsf_step: {
                std::vector<double> qc(node.dim);
                for (std::uint32_t t = 0; t < node.dim; ++t) {
                    qc[t] = q[t] - node.center[t];
                }
                const double threshold = node.eta_prime * node.R;
                std::vector<double> z(node.dim);
                for (const auto& [j, child] : node.filter_children) {
                    ++stats.inner_products;
                    fill_gaussian(rng::substream(node.stream, rng::kTagChild, j), z);
                    if (dot_n(z.data(), qc.data(), node.dim) >= threshold) {
                        if (walk(child, q)) return true;
                    }
                }
                return false;
            }
            case NodeKind::process_ball: {
                const double dist = dist_n(q.data(), node.center.data(), node.dim);
                if (dist > node.R + node.r1) return false;  // early exit
                const std::uint32_t j = std::max<std::uint32_t>(
                    1, static_cast<std::uint32_t>(std::ceil(dist / node.delta - 1e-12)));
                for (const auto& [ring, jj, child] : node.ring_children) {
                    if (jj != j) continue;
                    std::vector<double> qproj(node.dim);
                    const double target = node.delta * ring;
                    if (dist > 0.0) {
                        const double scale = target / dist;
                        for (std::uint32_t t = 0; t < node.dim; ++t) {
                            qproj[t] = node.center[t] + scale * (q[t] - node.center[t]);
                        }
                    } else {
                        for (std::uint32_t t = 0; t < node.dim; ++t) {
                            qproj[t] = node.center[t] + (t == 0 ? target : 0.0);
                        }
                    }
                    if (walk(child, qproj)) return true;
                }
                return false;
            }
        }
        return false;
    }
};

}  // namespace

tree::QueryStats DecisionTree::query(const instances::SphereInstance& data,
                                     std::span<const double> q,
                                     double r_threshold) const {
    tree::QueryStats total;
    for (const std::uint32_t root : roots_) {
        QueryWalker walker{*this, data, q, r_threshold, {}};
        std::vector<double> q0(q.begin(), q.end());
        const bool found = walker.walk(root, q0);
        total.nodes_visited += walker.stats.nodes_visited;
        total.inner_products += walker.stats.inner_products;
        total.candidates_scanned += walker.stats.candidates_scanned;
        if (found) {
            total.result = walker.stats.result;
            total.distance_found = walker.stats.distance_found;
            break;
        }
    }
    return total;
}

void DecisionTree::dump_dot(std::ostream& out) const {
    out << "digraph capann_reduction {\n  node [shape=box, fontsize=9];\n";
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        out << "  n" << i << " [label=\"" << node_kind_name(n.kind) << "\\nk=" << n.k;
        if (n.kind == NodeKind::leaf_store || n.kind == NodeKind::trivial_store) {
            out << " |P|=" << n.bucket.size();
        }
        if (n.kind == NodeKind::lsf_step) out << " T=" << n.T;
        if (n.R > 0.0) out << " R=" << n.R;
        out << "\"];\n";
        for (const std::uint32_t c : n.cluster_children) {
            out << "  n" << i << " -> n" << c << " [label=\"cluster\"];\n";
        }
        if (n.lsf_child != kNoNode) out << "  n" << i << " -> n" << n.lsf_child << ";\n";
        for (const auto& [j, c] : n.filter_children) {
            out << "  n" << i << " -> n" << c << " [label=\"cap " << j << "\"];\n";
        }
        for (const auto& [ring, j, c] : n.ring_children) {
            out << "  n" << i << " -> n" << c << " [label=\"i=" << ring << ",j=" << j
                << "\"];\n";
        }
        for (const auto& [key, c] : n.cells) {
            out << "  n" << i << " -> n" << c << " [label=\"cell\"];\n";
        }
    }
    out << "}\n";
}

namespace {
constexpr char kDtMagic[8] = {'A', 'N', 'N', 'R', 'E', 'D', 'T', '1'};

template <typename T>
void wpod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
template <typename T>
void rpod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("truncated decision-tree file");
}
void wvecd(std::ofstream& out, const std::vector<double>& v) {
    wpod(out, static_cast<std::uint64_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}
void rvecd(std::ifstream& in, std::vector<double>& v) {
    std::uint64_t n;
    rpod(in, n);
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("truncated decision-tree file");
}
void wvecu(std::ofstream& out, const std::vector<std::uint32_t>& v) {
    wpod(out, static_cast<std::uint64_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(std::uint32_t)));
}
void rvecu(std::ifstream& in, std::vector<std::uint32_t>& v) {
    std::uint64_t n;
    rpod(in, n);
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
    if (!in) throw std::runtime_error("truncated decision-tree file");
}
}  // namespace

void DecisionTree::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(kDtMagic, sizeof(kDtMagic));
    const std::uint32_t version = 1;
    wpod(out, version);
    wpod(out, params_.eps);
    wpod(out, params_.delta);
    wpod(out, params_.tau);
    wpod(out, params_.K);
    wpod(out, params_.grid_cell);
    wpod(out, params_.rho_s);
    wpod(out, params_.success_factor);
    wpod(out, params_.num_tables);
    wpod(out, params_.seed);
    wpod(out, params_.r1);
    wpod(out, params_.r2);
    wvecu(out, roots_);
    wpod(out, static_cast<std::uint64_t>(nodes_.size()));
    for (const auto& n : nodes_) {
        wpod(out, static_cast<std::uint8_t>(n.kind));
        wpod(out, n.k);
        wpod(out, n.dim);
        wpod(out, n.r1);
        wpod(out, n.r2);
        wpod(out, n.R);
        wvecd(out, n.center);
        wpod(out, n.eta);
        wpod(out, n.eta_prime);
        wpod(out, n.T);
        wpod(out, n.stream);
        wpod(out, static_cast<std::uint8_t>(n.lifted ? 1 : 0));
        wpod(out, n.lift_scale);
        wpod(out, static_cast<std::uint64_t>(n.filter_children.size()));
        for (const auto& [j, c] : n.filter_children) {
            wpod(out, j);
            wpod(out, c);
        }
        wvecu(out, n.cluster_children);
        wpod(out, n.lsf_child);
        wpod(out, n.cell_side);
        wvecd(out, n.grid_shift);
        wpod(out, static_cast<std::uint64_t>(n.cells.size()));
        for (const auto& [key, c] : n.cells) {
            wpod(out, static_cast<std::uint64_t>(key.size()));
            out.write(reinterpret_cast<const char*>(key.data()),
                      static_cast<std::streamsize>(key.size() * sizeof(std::int64_t)));
            wpod(out, c);
        }
        wpod(out, n.delta);
        wpod(out, static_cast<std::uint64_t>(n.ring_children.size()));
        for (const auto& [i, j, c] : n.ring_children) {
            wpod(out, i);
            wpod(out, j);
            wpod(out, c);
        }
        wvecu(out, n.bucket);
    }
}

DecisionTree DecisionTree::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kDtMagic, sizeof(kDtMagic)) != 0) {
        throw std::runtime_error("not a decision-tree file (bad magic)");
    }
    std::uint32_t version;
    rpod(in, version);
    if (version != 1) throw std::runtime_error("unsupported decision-tree version");
    DecisionTree t;
    rpod(in, t.params_.eps);
    rpod(in, t.params_.delta);
    rpod(in, t.params_.tau);
    rpod(in, t.params_.K);
    rpod(in, t.params_.grid_cell);
    rpod(in, t.params_.rho_s);
    rpod(in, t.params_.success_factor);
    rpod(in, t.params_.num_tables);
    rpod(in, t.params_.seed);
    rpod(in, t.params_.r1);
    rpod(in, t.params_.r2);
    rvecu(in, t.roots_);
    std::uint64_t count;
    rpod(in, count);
    t.nodes_.resize(count);
    for (auto& n : t.nodes_) {
        std::uint8_t kind;
        rpod(in, kind);
        n.kind = static_cast<NodeKind>(kind);
        rpod(in, n.k);
        rpod(in, n.dim);
        rpod(in, n.r1);
        rpod(in, n.r2);
        rpod(in, n.R);
        rvecd(in, n.center);
        rpod(in, n.eta);
        rpod(in, n.eta_prime);
        rpod(in, n.T);
        rpod(in, n.stream);
        std::uint8_t lifted;
        rpod(in, lifted);
        n.lifted = lifted != 0;
        rpod(in, n.lift_scale);
        std::uint64_t fc;
        rpod(in, fc);
        n.filter_children.resize(fc);
        for (auto& [j, c] : n.filter_children) {
            rpod(in, j);
            rpod(in, c);
        }
        rvecu(in, n.cluster_children);
        rpod(in, n.lsf_child);
        rpod(in, n.cell_side);
        rvecd(in, n.grid_shift);
        std::uint64_t cells;
        rpod(in, cells);
        n.cells.resize(cells);
        for (auto& [key, c] : n.cells) {
            std::uint64_t klen;
            rpod(in, klen);
            key.resize(klen);
            in.read(reinterpret_cast<char*>(key.data()),
                    static_cast<std::streamsize>(klen * sizeof(std::int64_t)));
            rpod(in, c);
        }
        rpod(in, n.delta);
        std::uint64_t rc;
        rpod(in, rc);
        n.ring_children.resize(rc);
        for (auto& [i, j, c] : n.ring_children) {
            rpod(in, i);
            rpod(in, j);
            rpod(in, c);
        }
        rvecu(in, n.bucket);
    }
    return t;
}

}  // namespace capann::reduction
