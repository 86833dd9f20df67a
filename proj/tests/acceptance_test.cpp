// Acceptance suite: one test case per shipping criterion, each printing a
// single PASS/FAIL line. Tolerances are pinned here, in code.

#include "doctest.h"

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <vector>

#include "capann/boolean_fn.hpp"
#include "capann/bounds.hpp"
#include "capann/filter_tree.hpp"
#include "capann/gaussian_caps.hpp"
#include "capann/harness.hpp"
#include "capann/instances.hpp"
#include "capann/reduction.hpp"
#include "capann/rng.hpp"

using namespace capann;

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

void report(int id, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] acceptance %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, name,
                detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Two tight antipodal bundles plus uniform noise on the unit sphere.
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

TEST_CASE("acceptance 1: tree curve == Laarhoven curve on a 50-point grid") {
    const double t0 = now_s();
    double worst = 0.0;
    int points = 0;
    rng::Engine eng(1);
    while (points < 50) {
        const double c = 1.1 + 2.9 * eng.next_unit();
        const double alpha = 1.0 - 1.0 / (c * c);
        const double rho_s = 1.0 + (1.0 / (alpha * alpha) - 1.0) * eng.next_unit();
        const double via_tree = bounds::tree_tradeoff_rho_q(c, rho_s);
        const double via_eq1 =
            bounds::rho_q_from_rho_u(bounds::Curve::euclidean_eq1, c, rho_s - 1.0);
        worst = std::max(worst, std::fabs(via_tree - via_eq1));
        ++points;
    }
    const double elapsed = now_s() - t0;
    const bool pass = worst <= 1e-9 && elapsed < 1.0;
    report(1, "trade-off identity (analytic)", pass,
           fmt("max |tree - eq1| = %.3g over 50 grid points, %.3fs", worst, elapsed));
    CHECK(worst <= 1e-9);
    CHECK(elapsed < 1.0);
}

TEST_CASE("acceptance 2: named curve points") {
    bool pass = true;
    auto close = [&](double got, double want) {
        pass = pass && std::fabs(got - want) <= 1e-9;
        CHECK(got == doctest::Approx(want).epsilon(1e-9));
    };
    close(bounds::rho_q_from_rho_u(bounds::Curve::hamming_eq2, 2.0, 1.0 / 3.0), 1.0 / 3.0);
    close(bounds::rho_q_from_rho_u(bounds::Curve::hamming_eq2, 2.0, 0.0), 0.75);
    close(bounds::rho_u_from_rho_q(bounds::Curve::hamming_eq2, 2.0, 0.0), 3.0);
    for (const double c : {kSqrt2, 2.0}) {
        const double rho = 1.0 / (2.0 * c * c - 1.0);
        close(bounds::rho_q_from_rho_u(bounds::Curve::euclidean_eq1, c, rho), rho);
    }
    close(bounds::one_probe_space_exponent(2.0), 4.0);
    report(2, "named curve points (paper numbers)", pass,
           "eq2 c=2 (1/3,1/3) (0,3/4) (3,0); eq1 balanced sqrt2,2; one-probe 4");
}

TEST_CASE("acceptance 3: recall at bench scale") {
    const double t0 = now_s();
    bench::ExperimentSpec spec;
    spec.structure = bench::Structure::filter_tree;
    spec.metric = bench::MetricKind::sphere;
    spec.ladder = {4096};
    spec.d = 128;
    spec.c = kSqrt2;
    spec.q_count = 400;
    spec.rho_s_list = {4.0 / 3.0};
    spec.seeds = 5;
    spec.base_seed = 1;
    spec.success_factor = 100.0;
    spec.recall_target = 0.9;  // the success-lemma constant
    spec.threshold = bench::Threshold::planted_radius;
    const auto out = bench::run_experiment(spec);
    REQUIRE(out.errors.empty());
    REQUIRE(out.records.size() == 5);
    double recall = 0.0;
    std::uint32_t trees = 0;
    for (const auto& r : out.records) {
        recall += r.recall;
        trees = r.num_trees;
    }
    recall /= 5.0;
    const double elapsed = now_s() - t0;
    const bool pass = recall >= 0.85 && elapsed < 300.0;
    report(3, "recall on the random sphere instance", pass,
           fmt("mean recall %.4f over 5 seeds x 400 queries (%u trees), %.1fs",
               recall, trees, elapsed));
    CHECK(recall >= 0.85);
    CHECK(elapsed < 300.0);
}

TEST_CASE("acceptance 4: exponent scaling and monotone trade-off") {
    const double t0 = now_s();
    bench::ExperimentSpec spec;
    spec.structure = bench::Structure::filter_tree;
    spec.metric = bench::MetricKind::sphere;
    spec.ladder = {1 << 10, 1 << 12, 1 << 14, 1 << 16};
    spec.d = 128;
    spec.c = kSqrt2;
    spec.q_count = 400;
    spec.rho_s_list = {4.0 / 3.0};
    spec.seeds = 5;
    spec.base_seed = 1;
    spec.num_trees = 1;  // the lemmas' exponents describe the single tree
    spec.store_vectors = false;
    spec.threshold = bench::Threshold::planted_radius;
    const auto out = bench::run_experiment(spec);
    REQUIRE(out.errors.empty());
    const auto rep = bench::fit_and_compare(out.records, 1.0 / 3.0, 1.0 / 3.0, 0.15);

    // Monotone trade-off across rho_s at fixed n, 10 seeds.
    bench::ExperimentSpec sweep = spec;
    sweep.ladder = {1 << 10};
    sweep.d = 34;
    sweep.rho_s_list = {1.0, 4.0 / 3.0, 2.0};
    sweep.seeds = 10;
    sweep.q_count = 64;
    const auto sw = bench::run_experiment(sweep);
    REQUIRE(sw.errors.empty());
    double mean_work[3] = {0, 0, 0};
    for (const auto& r : sw.records) {
        const int idx = r.rho_s == 1.0 ? 0 : (r.rho_s == 2.0 ? 2 : 1);
        mean_work[idx] += r.mean_work / 10.0;
    }
    const bool monotone = mean_work[0] >= mean_work[1] && mean_work[1] >= mean_work[2];
    const double elapsed = now_s() - t0;
    const bool pass = rep.work_within_band && rep.space_within_band && monotone &&
                      elapsed < 1800.0;
    report(4, "exponent scaling (ladder fit + monotone trade-off)", pass,
           fmt("rho_q_hat=%.4f (target 1/3 +-0.15), space_hat=%.4f (target 4/3 "
               "+-0.15), work(rho_s=1,4/3,2)=(%.1f, %.1f, %.1f), %.0fs",
               rep.work_fit.slope, rep.space_fit.slope, mean_work[0], mean_work[1],
               mean_work[2], elapsed));
    CHECK(rep.work_within_band);
    CHECK(rep.space_within_band);
    CHECK(monotone);
    CHECK(elapsed < 1800.0);
}

TEST_CASE("acceptance 5: Boolean-function oracles") {
    rng::Engine eng(55);
    // Transform vs direct enumeration, d=8, 100 random functions.
    double max_diff = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        bounds::BooleanFn f(8);
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = 2.0 * eng.next_unit() - 1.0;
        const double sigma = eng.next_unit();
        const auto fast = bounds::noise_operator(f, sigma);
        // direct: E over y with per-coordinate keep probability sigma.
        for (std::size_t x = 0; x < f.size(); ++x) {
            double acc = 0.0;
            for (std::size_t y = 0; y < f.size(); ++y) {
                double w = 1.0;
                for (int b = 0; b < 8; ++b) {
                    const bool eq = ((x >> b) & 1) == ((y >> b) & 1);
                    w *= eq ? (1.0 + sigma) / 2.0 : (1.0 - sigma) / 2.0;
                }
                acc += w * f[y];
            }
            max_diff = std::max(max_diff, std::fabs(acc - fast[x]));
        }
    }
    // Hypercontractivity: 10^4 random nonnegative pairs, zero violations.
    std::uint64_t violations = 0;
    for (int rep = 0; rep < 10000; ++rep) {
        const int d = 1 + static_cast<int>(eng.next_below(10));
        const double sigma = eng.next_unit();
        const double p = 1.0 + 2.0 * eng.next_unit();
        const double q = 1.0 + sigma * sigma / (p - 1.0);
        bounds::BooleanFn f(d), g(d);
        for (std::size_t i = 0; i < f.size(); ++i) {
            f[i] = eng.next_unit();
            g[i] = eng.next_unit();
        }
        if (!bounds::check_hypercontractive(f, g, sigma, p, q).holds) ++violations;
    }
    const bool pass = max_diff <= 1e-12 && violations == 0;
    report(5, "Boolean-function oracles", pass,
           fmt("WHT-vs-direct max diff %.2e (<=1e-12); hypercontractive "
               "violations %llu / 10000",
               max_diff, static_cast<unsigned long long>(violations)));
    CHECK(max_diff <= 1e-12);
    CHECK(violations == 0);
}

TEST_CASE("acceptance 6: cap-probability oracles") {
    rng::Engine eng(66);
    // Quadrature vs 10^7-sample Monte Carlo on 50 random triples with p >= 1e-4.
    int tested = 0;
    int outside = 0;
    double worst_z = 0.0;
    while (tested < 50) {
        const double e1 = 3.0 * eng.next_unit() - 0.5;
        const double e2 = 3.0 * eng.next_unit() - 0.5;
        const double a = 1.9 * eng.next_unit() - 0.95;
        const auto exact = caps::joint_cap(e1, e2, a);
        if (exact.value < 1e-4) continue;
        ++tested;
        const auto mc = caps::mc_joint_cap(e1, e2, a, 10'000'000, 900 + tested);
        const double z = std::fabs(exact.value - mc.value) / mc.stderr_value;
        worst_z = std::max(worst_z, z);
        if (z > 4.0) ++outside;
    }
    // Sheppard point.
    double sheppard_err = 0.0;
    for (const double a : {-0.8, -0.3, 0.1, 0.5, 0.9}) {
        const double want = 0.25 + std::asin(a) / (2.0 * 3.141592653589793);
        sheppard_err = std::max(sheppard_err,
                                std::fabs(caps::joint_cap(0, 0, a).value - want));
    }
    // Asymptotic-exponent ratio, exponent / (-log joint_cap): inside [0.6, 1]
    // and monotonically approaching 1 at eta = 3..6, alpha = 1/2.
    bool ratio_ok = true;
    double prev = 0.0;
    std::string ratios;
    for (const double e : {3.0, 4.0, 5.0, 6.0}) {
        const double ratio = caps::joint_cap_asymptotic_exponent(e, e, 0.5) /
                             (-caps::joint_cap(e, e, 0.5).log_value);
        ratio_ok = ratio_ok && ratio >= 0.6 && ratio <= 1.0 && ratio > prev;
        prev = ratio;
        ratios += fmt("%.3f ", ratio);
    }
    const bool pass = outside == 0 && sheppard_err <= 1e-4 && ratio_ok;
    report(6, "cap-probability oracles", pass,
           fmt("MC z-scores max %.2f (50 triples, 1e7 samples); Sheppard err "
               "%.2e; exponent ratios %s",
               worst_z, sheppard_err, ratios.c_str()));
    CHECK(outside == 0);
    CHECK(sheppard_err <= 1e-4);
    CHECK(ratio_ok);
}

TEST_CASE("acceptance 7: robust-expansion sandwich") {
    const int d = 12;
    const double sigma = 0.5;
    const auto hp = bounds::ptw_schedule(std::pow(2.0, d), sigma);
    bool pass = true;
    double worst_ratio = 0.0;
    for (const double a : {1.0 / 8.0, 1.0 / 16.0, 1.0 / 64.0}) {
        for (const double gamma : {0.3, 0.5, 0.8}) {
            const auto est = bounds::estimate_robust_expansion(d, sigma, a, gamma);
            const double lb = bounds::robust_expansion_bound(
                sigma, 1.0 / est.a_measure, gamma, hp.p, hp.q);
            const bool sandwich = lb <= est.ratio + 1e-9;
            const double ratio = est.ratio / lb;
            worst_ratio = std::max(worst_ratio, ratio);
            pass = pass && sandwich && ratio <= 10.0;
            CHECK(sandwich);
            CHECK(ratio <= 10.0);
        }
    }
    report(7, "robust-expansion sandwich", pass,
           fmt("bound <= estimate on 9 (a, gamma) points; worst estimate/bound "
               "ratio %.2f (<= 10)",
               worst_ratio));
}

TEST_CASE("acceptance 8: reduction end-to-end and cross-module parity") {
    const double t0 = now_s();
    // (a) two-cluster + uniform-noise instance, recall >= 0.8 over 200 queries.
    const auto clustered = two_cluster_instance(4096, 64, kSqrt2, 200, 37, 0.9, 0.05);
    reduction::ReductionParams rp;
    rp.seed = 37;
    rp.rho_s = 4.0 / 3.0;
    rp.num_tables = 2;
    const auto dt = reduction::DecisionTree::build(clustered, rp);
    const double mid = 0.5 * (clustered.nominal_r() + kSqrt2 * clustered.R);
    std::uint64_t hits = 0;
    for (std::uint64_t j = 0; j < clustered.q_count(); ++j) {
        if (dt.query(clustered, clustered.query_row(j), mid).found()) ++hits;
    }
    const double recall = static_cast<double>(hits) / 200.0;

    // (b) cluster-free instance: exhaustive work within 2x of the bare tree,
    // matched seeds. The oversized grid cell keeps the comparison on the
    // pseudo-random path (the grid's own cut behavior is tested separately).
    double worst_ratio = 0.0;
    for (const std::uint64_t seed : {41, 42, 43}) {
        const auto plain = instances::gen_sphere(4096, 64, kSqrt2, 1.0, 100, seed);
        reduction::ReductionParams pp;
        pp.seed = seed;
        pp.rho_s = 4.0 / 3.0;
        pp.grid_cell = 4096.0;
        const auto red = reduction::DecisionTree::build(plain, pp);
        auto tp = tree::select_params(4096, kSqrt2, 1.0, 4.0 / 3.0);
        tp.seed = seed;
        const auto ft = tree::FilterTree::build(plain, tp);
        std::uint64_t wr = 0, wf = 0;
        for (std::uint64_t j = 0; j < plain.q_count(); ++j) {
            wr += red.query(plain, plain.query_row(j), -1.0).work();
            wf += ft.query(plain, plain.query_row(j), -1.0).work();
        }
        const double ratio = static_cast<double>(wr) / static_cast<double>(wf);
        worst_ratio = std::max(worst_ratio, std::max(ratio, 1.0 / ratio));
    }
    const double elapsed = now_s() - t0;
    const bool pass = recall >= 0.8 && worst_ratio <= 2.0;
    report(8, "reduction end-to-end + cross-module parity", pass,
           fmt("2-cluster recall %.3f (>=0.8, 200 queries); cluster-free work "
               "ratio <= %.2f (band 2x, 3 seeds), %.0fs",
               recall, worst_ratio, elapsed));
    CHECK(recall >= 0.8);
    CHECK(worst_ratio <= 2.0);
}

TEST_CASE("acceptance 9: instance statistics") {
    const auto inst = instances::gen_hamming(1024, 2048, 2.0, 200, 13);
    const auto st = instances::instance_stats(inst);
    const double se_mean = std::sqrt(2048.0 * 0.25 * 0.75) / std::sqrt(200.0);
    const bool unique_ok = st.unique_fraction >= 0.99;
    const bool mean_ok = std::fabs(st.planted_mean - 512.0) <= 3.0 * se_mean;
    report(9, "instance statistics (concentration)", unique_ok && mean_ok,
           fmt("unique fraction %.4f (>=0.99); planted mean %.2f vs 512 "
               "(3 sigma = %.2f)",
               st.unique_fraction, st.planted_mean, 3.0 * se_mean));
    CHECK(unique_ok);
    CHECK(mean_ok);
}
