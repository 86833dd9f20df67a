#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "capann/filter_tree.hpp"
#include "capann/instances.hpp"
#include "capann/reduction.hpp"
#include "capann/rng.hpp"

using namespace capann;
using reduction::DecisionTree;
using reduction::NodeKind;
using reduction::ReductionParams;

namespace {

// Two tight antipodal bundles plus uniform noise, all on the unit sphere,
// with planted cap queries over every point.
instances::SphereInstance two_cluster_instance(std::uint64_t n, std::uint64_t d,
                                               double c, std::uint64_t q,
                                               std::uint64_t seed,
                                               double cluster_frac,
                                               double bundle_radius) {
    auto inst = instances::gen_sphere(n, d, c, 1.0, q, seed);
    rng::Engine eng(rng::substream(seed, 0xC1A5, 0));
    const std::uint64_t per =
        static_cast<std::uint64_t>(cluster_frac * static_cast<double>(n) / 2.0);
    std::vector<double> axis(d);
    double nn = 0.0;
    for (auto& v : axis) {
        v = eng.next_normal();
        nn += v * v;
    }
    for (auto& v : axis) v /= std::sqrt(nn);
    for (std::uint64_t i = 0; i < 2 * per; ++i) {
        const double sign = i < per ? 1.0 : -1.0;
        double* p = inst.points.data() + i * d;
        double norm2 = 0.0;
        for (std::uint64_t k = 0; k < d; ++k) {
            p[k] = sign * axis[k] + bundle_radius * eng.next_normal();
            norm2 += p[k] * p[k];
        }
        const double s = 1.0 / std::sqrt(norm2);
        for (std::uint64_t k = 0; k < d; ++k) p[k] *= s;
    }
    // Refresh the planted queries over the moved points.
    const double t_min = 1.0 - 1.0 / (c * c);
    for (std::uint64_t j = 0; j < q; ++j) {
        rng::Engine pick(rng::substream(seed, 0x9999, j));
        const std::uint64_t id = pick.next_below(n);
        inst.planted[j] = static_cast<std::uint32_t>(id);
        const double* p = inst.points.data() + id * d;
        double* qq = inst.queries.data() + j * d;
        for (;;) {
            double norm2 = 0.0;
            for (std::uint64_t k = 0; k < d; ++k) {
                qq[k] = p[k] + 0.55 * pick.next_normal() / std::sqrt(static_cast<double>(d));
                norm2 += qq[k] * qq[k];
            }
            const double s = 1.0 / std::sqrt(norm2);
            double dotpq = 0.0;
            for (std::uint64_t k = 0; k < d; ++k) {
                qq[k] *= s;
                dotpq += qq[k] * p[k];
            }
            if (dotpq >= t_min) break;
        }
    }
    return inst;
}

}  // namespace

TEST_CASE("project: closed forms and feasibility") {
    // Equal radii: the projection is the identity on distances.
    CHECK(reduction::project(2.0, 2.0, 1.3) == doctest::Approx(1.3).epsilon(1e-12));
    // Antipodal configuration: r = R1 + R2 -> 2 R1.
    CHECK(reduction::project(1.5, 2.5, 4.0) == doctest::Approx(3.0).epsilon(1e-12));
    // Hand-checked: (R1=1, R2=2, r=2) -> cos(theta) = 1/4, sqrt(3/2).
    CHECK(reduction::project(1.0, 2.0, 2.0) ==
          doctest::Approx(std::sqrt(1.5)).epsilon(1e-12));
    // Same point projected explicitly in 2-d coordinates.
    {
        const double r = 2.0, R1 = 1.0, R2 = 2.0;
        const double cos_t = (R1 * R1 + R2 * R2 - r * r) / (2 * R1 * R2);
        const double p2x = R2 * cos_t, p2y = R2 * std::sqrt(1 - cos_t * cos_t);
        const double nn = std::sqrt(p2x * p2x + p2y * p2y);
        const double px = R1 * p2x / nn, py = R1 * p2y / nn;  // closest point on S1
        const double expect = std::sqrt((R1 - px) * (R1 - px) + py * py);
        CHECK(reduction::project(R1, R2, r) == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK_THROWS_AS(reduction::project(1.0, 3.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(reduction::project(1.0, 1.0, 2.5), std::invalid_argument);
    // The clamped variant saturates instead.
    CHECK(reduction::project_clamped(1.0, 1.0, 2.5) == doctest::Approx(2.0));
    CHECK(reduction::project_clamped(1.0, 3.0, 1.0) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("find_dense_clusters: identical, uniform, antipodal") {
    const std::uint32_t d = 16;
    std::vector<double> center(d, 0.0);
    std::vector<std::int32_t> assign;
    // All points identical: one cluster, empty remainder.
    {
        std::vector<double> coords;
        for (int i = 0; i < 32; ++i) {
            coords.push_back(1.0);
            for (std::uint32_t k = 1; k < d; ++k) coords.push_back(0.0);
        }
        const auto rep = reduction::find_dense_clusters(coords, d, center, 1.0, 0.5,
                                                        0.25, assign);
        CHECK(rep.clusters.size() == 1);
        CHECK(rep.clusters[0].count == 32);
        CHECK(rep.remainder == 0);
        CHECK(rep.clusters[0].radius == doctest::Approx(0.0).epsilon(1e-9));
    }
    // Uniform points: cap occupancy below tau n across seeds (Monte Carlo).
    for (std::uint64_t seed : {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}) {
        const auto inst = instances::gen_sphere(1024, 64, 2.0, 1.0, 1, seed);
        const std::vector<double> ctr64(64, 0.0);
        const auto rep = reduction::find_dense_clusters(
            std::span<const double>(inst.points.data(), inst.points.size()), 64,
            ctr64, 1.0, 0.5, 0.5, assign);
        CHECK(rep.clusters.empty());
        CHECK(rep.remainder == 1024);
    }
    // Two antipodal tight bundles: exactly two clusters at tau = 0.25.
    {
        const auto inst = two_cluster_instance(256, 32, std::sqrt(2.0), 1, 11, 1.0, 0.01);
        const std::vector<double> ctr32(32, 0.0);
        const auto rep = reduction::find_dense_clusters(
            std::span<const double>(inst.points.data(), inst.points.size()), 32,
            ctr32, 1.0, 0.5, 0.25, assign);
        CHECK(rep.clusters.size() == 2);
        CHECK(rep.remainder == 0);
        // Enclosing-ball radius within the invariant bound (1 - eps^2/4) R.
        for (const auto& cl : rep.clusters) {
            CHECK(cl.radius <= (1.0 - 0.5 * 0.5 / 4.0) * 1.0 * (1 + 1e-9));
        }
    }
}

TEST_CASE("process_sphere base cases") {
    const auto inst = instances::gen_sphere(64, 16, 2.0, 1.0, 4, 3);
    ReductionParams p;
    p.seed = 3;
    // r2 >= 2R at the top: radius thresholds make every node trivial. Force
    // the situation through a tiny instance radius relative to r2.
    p.r1 = 1.0;
    p.r2 = 5.0;  // r2 >= 2 R_lift certainly
    const auto t = DecisionTree::build(inst, p);
    bool saw_trivial = false;
    for (const auto& nd : t.nodes()) {
        if (nd.kind == NodeKind::trivial_store) {
            saw_trivial = true;
            CHECK(nd.bucket.size() == 1);
            // Defining inequality of the base case, checked at fire time.
            CHECK((nd.r2 >= 2.0 * nd.R || nd.r1 + 2.0 * nd.R <= nd.r2));
        }
    }
    CHECK(saw_trivial);
    // Any in-cap query returns the representative within r2.
    const auto st = t.query(inst, inst.query_row(0), 5.0);
    CHECK(st.found());
    CHECK(st.distance_found <= 5.0);
}

TEST_CASE("k = K caps the lsf depth; counters monotone along paths") {
    const auto inst = instances::gen_sphere(512, 32, std::sqrt(2.0), 1.0, 8, 5);
    ReductionParams p;
    p.seed = 5;
    p.K = 2;
    const auto t = DecisionTree::build(inst, p);
    CHECK(t.max_lsf_depth() <= 2);
    // Walk edges: k never decreases, increments exactly on lsf filter edges.
    for (std::size_t i = 0; i < t.nodes().size(); ++i) {
        const auto& nd = t.nodes()[i];
        for (const auto c : nd.cluster_children) CHECK(t.nodes()[c].k == nd.k);
        for (const auto& [ring, j, c] : nd.ring_children) CHECK(t.nodes()[c].k == nd.k);
        for (const auto& [j, c] : nd.filter_children) CHECK(t.nodes()[c].k == nd.k + 1);
        if (nd.lsf_child != reduction::kNoNode) {
            CHECK(t.nodes()[nd.lsf_child].k == nd.k);
        }
    }
}

TEST_CASE("process_ball: admissibility and projected thresholds") {
    // Single annulus: all points at one radius; the (i, i) child thresholds
    // collapse to the rounded distances (equal radii -> identity projection).
    const std::uint32_t d = 8;
    const std::uint64_t m = 32;
    instances::SphereInstance inst;
    inst.n = m;
    inst.d = d;
    inst.c = 2.0;
    inst.R = 1.0;
    inst.seed = 1;
    rng::Engine eng(17);
    inst.points.resize(m * d);
    for (std::uint64_t i = 0; i < m; ++i) {
        double norm2 = 0.0;
        double* p = inst.points.data() + i * d;
        for (std::uint32_t k = 0; k < d; ++k) {
            p[k] = eng.next_normal();
            norm2 += p[k] * p[k];
        }
        for (std::uint32_t k = 0; k < d; ++k) p[k] /= std::sqrt(norm2);
    }
    inst.queries = std::vector<double>(inst.points.begin(), inst.points.begin() + d);
    inst.planted = {0};
    ReductionParams p;
    p.seed = 2;
    p.r1 = 0.15;
    p.r2 = 0.30;
    p.delta = 0.1;
    const auto t = DecisionTree::build(inst, p);
    for (const auto& nd : t.nodes()) {
        if (nd.kind != NodeKind::process_ball) continue;
        const std::uint32_t admissible = static_cast<std::uint32_t>(
            std::floor((nd.r1 + 2.0 * nd.delta) / nd.delta + 1e-12));
        for (const auto& [ring, j, c] : nd.ring_children) {
            CHECK(static_cast<std::uint32_t>(
                      std::abs(static_cast<int>(ring) - static_cast<int>(j))) <=
                  admissible);
            const auto& child = t.nodes()[c];
            if (child.kind == NodeKind::process_sphere ||
                child.kind == NodeKind::leaf_store ||
                child.kind == NodeKind::trivial_store) {
                if (ring == j && child.kind == NodeKind::process_sphere) {
                    // Equal radii: thresholds are the +-2 delta adjusted ones.
                    CHECK(child.r1 ==
                          doctest::Approx(nd.r1 + 2.0 * nd.delta).epsilon(1e-9));
                }
            }
        }
    }
}

TEST_CASE("project hand-check drives an admissible (i, j) pair") {
    // (i=10, j=12, delta=0.1, r1=0.15): |delta (i-j)| = 0.2 <= r1 + 2 delta = 0.35.
    const double delta = 0.1, r1 = 0.15;
    const double Ri = delta * 10, Rj = delta * 12;
    CHECK(std::fabs(delta * (10.0 - 12.0)) <= r1 + 2 * delta);
    const double rt1 = reduction::project_clamped(Ri, Rj, r1 + 2 * delta);
    CHECK(rt1 > 0.0);
    CHECK(rt1 <= 2.0 * Ri);
    // Against the direct formula.
    const double cos_t = (Ri * Ri + Rj * Rj - 0.35 * 0.35) / (2 * Ri * Rj);
    CHECK(rt1 == doctest::Approx(std::sqrt(2 * Ri * Ri * (1 - cos_t))).epsilon(1e-12));
}

TEST_CASE("rounding distortion stays within 2 delta") {
    // For random pairs, |round(p) - round(q)| differs from |p - q| by <= 2 delta.
    const std::uint32_t d = 12;
    rng::Engine eng(23);
    const double delta = 0.07;
    std::vector<double> o(d, 0.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> a(d), b(d);
        for (std::uint32_t k = 0; k < d; ++k) {
            a[k] = eng.next_normal();
            b[k] = eng.next_normal();
        }
        auto round_up = [&](std::vector<double> v) {
            double dist = 0.0;
            for (std::uint32_t k = 0; k < d; ++k) dist += v[k] * v[k];
            dist = std::sqrt(dist);
            const double target =
                delta * std::max<double>(1.0, std::ceil(dist / delta - 1e-12));
            const double s = dist > 0 ? target / dist : 0.0;
            for (auto& x : v) x *= s;
            return v;
        };
        const auto ra = round_up(a), rb = round_up(b);
        const double before = instances::euclidean_distance(a, b);
        const double after = instances::euclidean_distance(ra, rb);
        CHECK(std::fabs(after - before) <= 2.0 * delta + 1e-9);
    }
}

TEST_CASE("grid shift: determinism and pair-cut probability oracle") {
    const auto inst = instances::gen_sphere(256, 32, std::sqrt(2.0), 1.0, 8, 9);
    ReductionParams p;
    p.seed = 9;
    const auto t1 = DecisionTree::build(inst, p);
    const auto t2 = DecisionTree::build(inst, p);
    CHECK(t1.node_count() == t2.node_count());
    CHECK(t1.bucket_mass() == t2.bucket_mass());
    // Standard cut bound: a pair at distance r is separated by the shifted
    // grid with probability <= sum_i |x_i - y_i| / cell <= sqrt(d) r / cell.
    rng::Engine eng(31);
    const std::uint32_t d = 16;
    const double cell = 10.0 * std::sqrt(static_cast<double>(d));
    std::uint64_t cut = 0;
    const std::uint64_t trials = 10000;
    for (std::uint64_t rep = 0; rep < trials; ++rep) {
        // A unit-distance pair in a random direction.
        std::vector<double> x(d), dir(d);
        double nn = 0.0;
        for (std::uint32_t k = 0; k < d; ++k) {
            x[k] = 5.0 * eng.next_normal();
            dir[k] = eng.next_normal();
            nn += dir[k] * dir[k];
        }
        bool separated = false;
        for (std::uint32_t k = 0; k < d; ++k) {
            const double shift = eng.next_unit() * cell;
            const double a = std::floor((x[k] - shift) / cell);
            const double b = std::floor((x[k] + dir[k] / std::sqrt(nn) - shift) / cell);
            if (a != b) separated = true;
        }
        if (separated) ++cut;
    }
    const double bound = std::sqrt(static_cast<double>(d)) * 1.0 / cell;
    CHECK(static_cast<double>(cut) / static_cast<double>(trials) <=
          bound + 3.0 * std::sqrt(bound / static_cast<double>(trials)) + 0.01);
}

TEST_CASE("query early exit on distant ball nodes") {
    const auto inst = two_cluster_instance(512, 32, std::sqrt(2.0), 16, 13, 0.9, 0.02);
    ReductionParams p;
    p.seed = 13;
    const auto t = DecisionTree::build(inst, p);
    CHECK(t.top_cluster_report().clusters.size() >= 2);
    // A query opposite to a cluster's center never enters that subtree: with
    // two antipodal clusters, total work stays far below scanning everything.
    const double mid = 0.5 * (inst.nominal_r() + std::sqrt(2.0));
    for (std::uint64_t j = 0; j < inst.q_count(); ++j) {
        const auto st = t.query(inst, inst.query_row(j), mid);
        CHECK(st.candidates_scanned < inst.n / 2);
    }
}

TEST_CASE("leaf scan counters are exact") {
    // Tiny instance collapses to leaf stores; candidates equal bucket sizes.
    const auto inst = instances::gen_sphere(3, 8, 2.0, 1.0, 4, 21);
    ReductionParams p;
    p.seed = 21;
    const auto t = DecisionTree::build(inst, p);
    CHECK(t.bucket_mass() == 3);
    const auto st = t.query(inst, inst.query_row(0), -1.0);
    CHECK(st.candidates_scanned == 3);
    CHECK_FALSE(st.found());
}

TEST_CASE("radius progress: cluster balls shrink against the parent sphere") {
    const auto inst = two_cluster_instance(1024, 48, std::sqrt(2.0), 4, 29, 0.8, 0.05);
    ReductionParams p;
    p.seed = 29;
    const auto t = DecisionTree::build(inst, p);
    for (const auto& nd : t.nodes()) {
        if (nd.kind != NodeKind::process_sphere) continue;
        for (const auto c : nd.cluster_children) {
            const auto& ball = t.nodes()[c];
            CHECK(ball.R <= (1.0 - p.eps * p.eps / 4.0) * nd.R * (1.0 + 1e-9));
        }
    }
}

TEST_CASE("end-to-end recall on the two-cluster instance") {
    const auto inst = two_cluster_instance(2048, 64, std::sqrt(2.0), 200, 37, 0.9, 0.05);
    ReductionParams p;
    p.seed = 37;
    p.num_tables = 2;
    const auto t = DecisionTree::build(inst, p);
    const double mid = 0.5 * (inst.nominal_r() + std::sqrt(2.0));
    std::uint64_t hits = 0;
    for (std::uint64_t j = 0; j < inst.q_count(); ++j) {
        if (t.query(inst, inst.query_row(j), mid).found()) ++hits;
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(inst.q_count()) >= 0.8);
}

TEST_CASE("cross-module consistency: cluster-free work within 2x of the tree") {
    const double c = std::sqrt(2.0);
    const auto inst = instances::gen_sphere(2048, 64, c, 1.0, 100, 41);
    ReductionParams rp;
    rp.seed = 41;
    rp.rho_s = 4.0 / 3.0;
    rp.grid_cell = 4096.0;  // isolate the pseudo-random path from grid slicing
    const auto dt = DecisionTree::build(inst, rp);
    CHECK(dt.top_cluster_report().clusters.empty());
    auto tp = tree::select_params(2048, c, 1.0, 4.0 / 3.0);
    tp.seed = 41;
    const auto ft = tree::FilterTree::build(inst, tp);
    std::uint64_t wr = 0, wf = 0;
    for (std::uint64_t j = 0; j < inst.q_count(); ++j) {
        wr += dt.query(inst, inst.query_row(j), -1.0).work();
        wf += ft.query(inst, inst.query_row(j), -1.0).work();
    }
    const double ratio = static_cast<double>(wr) / static_cast<double>(wf);
    CHECK(ratio <= 2.0);
    CHECK(ratio >= 0.5);
}

TEST_CASE("serialization round trip and dot dump") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "capann_red_io";
    fs::create_directories(dir);
    const auto inst = two_cluster_instance(256, 24, std::sqrt(2.0), 8, 43, 0.8, 0.05);
    ReductionParams p;
    p.seed = 43;
    const auto t = DecisionTree::build(inst, p);
    const std::string path = (dir / "red.bin").string();
    t.save(path);
    const auto back = DecisionTree::load(path);
    CHECK(back.node_count() == t.node_count());
    CHECK(back.bucket_mass() == t.bucket_mass());
    for (std::uint64_t j = 0; j < inst.q_count(); ++j) {
        const auto a = t.query(inst, inst.query_row(j), 1.2);
        const auto b = back.query(inst, inst.query_row(j), 1.2);
        CHECK(a.result == b.result);
        CHECK(a.nodes_visited == b.nodes_visited);
        CHECK(a.candidates_scanned == b.candidates_scanned);
    }
    std::ostringstream dot;
    t.dump_dot(dot);
    CHECK(dot.str().find("digraph") != std::string::npos);
    CHECK(dot.str().find("lsf-step") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("resource cap aborts cleanly") {
    const auto inst = instances::gen_sphere(512, 32, std::sqrt(2.0), 1.0, 4, 51);
    ReductionParams p;
    p.seed = 51;
    p.max_nodes = 16;
    CHECK_THROWS_AS(DecisionTree::build(inst, p), tree::ResourceCapExceeded);
}
