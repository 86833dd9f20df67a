#include "doctest.h"

#include <cmath>
#include <sstream>

#include "capann/harness.hpp"

using namespace capann;
using bench::ExperimentSpec;
using bench::RunRecord;

namespace {

ExperimentSpec tiny_spec() {
    ExperimentSpec spec;
    spec.structure = bench::Structure::filter_tree;
    spec.metric = bench::MetricKind::sphere;
    spec.ladder = {256};
    spec.d = 24;
    spec.c = std::sqrt(2.0);
    spec.q_count = 32;
    spec.rho_s_list = {4.0 / 3.0};
    spec.seeds = 1;
    spec.base_seed = 5;
    return spec;
}

}  // namespace

TEST_CASE("run_experiment: one ladder point, one seed, one record") {
    const auto out = bench::run_experiment(tiny_spec());
    CHECK(out.errors.empty());
    REQUIRE(out.records.size() == 1);
    const auto& r = out.records.front();
    CHECK(r.n == 256);
    CHECK(r.q_count == 32);
    CHECK(r.recall >= 0.0);
    CHECK(r.recall <= 1.0);
    CHECK(r.space_mass > 0);
    CHECK(r.mean_work > 0.0);
}

TEST_CASE("run_experiment: determinism of counters") {
    const auto a = bench::run_experiment(tiny_spec());
    const auto b = bench::run_experiment(tiny_spec());
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].recall == b.records[i].recall);
        CHECK(a.records[i].mean_work == b.records[i].mean_work);
        CHECK(a.records[i].mean_nodes == b.records[i].mean_nodes);
        CHECK(a.records[i].space_nodes == b.records[i].space_nodes);
        CHECK(a.records[i].space_mass == b.records[i].space_mass);
    }
}

TEST_CASE("run_experiment: threads do not change results") {
    auto spec = tiny_spec();
    const auto a = bench::run_experiment(spec);
    spec.query_threads = 4;
    const auto b = bench::run_experiment(spec);
    CHECK(a.records.front().mean_work == b.records.front().mean_work);
    CHECK(a.records.front().recall == b.records.front().recall);
}

TEST_CASE("run_experiment: validation and per-record failure capture") {
    auto spec = tiny_spec();
    spec.ladder = {};
    CHECK_THROWS_AS(bench::run_experiment(spec), std::invalid_argument);
    spec = tiny_spec();
    spec.ladder = {256, 256};
    CHECK_THROWS_AS(bench::run_experiment(spec), std::invalid_argument);
    // A failing record (resource cap) is captured, not thrown.
    spec = tiny_spec();
    spec.ladder = {128, 256};
    spec.max_tree_nodes = 2;
    const auto out = bench::run_experiment(spec);
    CHECK(out.records.empty());
    CHECK(out.errors.size() == 2);
}

TEST_CASE("fit_loglog: synthetic slopes") {
    std::vector<std::pair<double, double>> pts;
    for (double n : {1024.0, 2048.0, 4096.0, 8192.0}) pts.emplace_back(n, 7.0 * std::sqrt(n));
    const auto f = bench::fit_loglog(pts);
    CHECK(f.slope == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(f.stderr_slope == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("fit_and_compare: synthetic records and band verdicts") {
    std::vector<RunRecord> records;
    for (const std::uint64_t n : {1024, 4096, 16384}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            RunRecord r;
            r.n = n;
            r.seed = seed;
            r.mean_work = 7.0 * std::sqrt(static_cast<double>(n));
            r.space_nodes = n;
            r.space_mass = static_cast<std::uint64_t>(
                std::pow(static_cast<double>(n), 4.0 / 3.0));
            records.push_back(r);
        }
    }
    const auto rep = bench::fit_and_compare(records, 0.5, 1.0 / 3.0, 0.15);
    CHECK(rep.work_fit.slope == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(rep.work_within_band);
    CHECK(rep.space_within_band);
    const auto bad = bench::fit_and_compare(records, 0.9, 1.0 / 3.0, 0.15);
    CHECK_FALSE(bad.work_within_band);
    std::vector<RunRecord> two(records.begin(), records.begin() + 6);
    CHECK_THROWS_AS(bench::fit_and_compare(two, 0.5, 0.3), std::invalid_argument);
}

TEST_CASE("CSV round trip is exact") {
    auto spec = tiny_spec();
    spec.seeds = 2;
    const auto out = bench::run_experiment(spec);
    std::stringstream ss;
    bench::emit_csv(out.records, ss);
    const auto back = bench::parse_csv(ss);
    REQUIRE(back.size() == out.records.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        const auto& a = out.records[i];
        const auto& b = back[i];
        CHECK(a.n == b.n);
        CHECK(a.d == b.d);
        CHECK(a.c == b.c);
        CHECK(a.rho_s == b.rho_s);
        CHECK(a.seed == b.seed);
        CHECK(a.recall == b.recall);
        CHECK(a.planted_rate == b.planted_rate);
        CHECK(a.mean_work == b.mean_work);
        CHECK(a.median_work == b.median_work);
        CHECK(a.space_nodes == b.space_nodes);
        CHECK(a.space_mass == b.space_mass);
        CHECK(a.r_verify == b.r_verify);
        CHECK(a.num_trees == b.num_trees);
    }
    std::stringstream bad("nonsense\n1,2,3\n");
    CHECK_THROWS(bench::parse_csv(bad));
}

TEST_CASE("records are reconstructible from their embedded inputs") {
    auto spec = tiny_spec();
    const auto first = bench::run_experiment(spec).records.front();
    // Rebuild a spec from the record's input fields and re-run.
    ExperimentSpec again;
    again.structure = first.structure;
    again.metric = first.metric;
    again.ladder = {first.n};
    again.d = first.d;
    again.c = first.c;
    again.R = first.R;
    again.q_count = first.q_count;
    again.rho_s_list = {first.rho_s};
    again.seeds = 1;
    again.base_seed = first.seed;
    again.threshold = first.threshold;
    again.success_factor = first.success_factor;
    again.num_trees = first.num_trees;
    const auto second = bench::run_experiment(again).records.front();
    CHECK(first.recall == second.recall);
    CHECK(first.planted_rate == second.planted_rate);
    CHECK(first.mean_work == second.mean_work);
    CHECK(first.space_nodes == second.space_nodes);
    CHECK(first.space_mass == second.space_mass);
}

TEST_CASE("spec JSON parsing") {
    const std::string text = R"({
        "structure": "reduction",
        "metric": "sphere",
        "ladder": [1024, 4096],
        "d": 64,
        "c": 1.4142135623730951,
        "queries": 100,
        "rho_s": [1.0, 2.0],
        "seeds": 3,
        "base_seed": 7,
        "threshold": "midpoint",
        "recall_target": 0.9,
        "store_vectors": false,
        "reduction": {"eps": 0.4, "tau": 0.05, "grid_cell": 500.0}
    })";
    const auto spec = ExperimentSpec::from_json_text(text);
    CHECK(spec.structure == bench::Structure::reduction);
    CHECK(spec.ladder == std::vector<std::uint64_t>{1024, 4096});
    CHECK(spec.d == 64);
    CHECK(spec.q_count == 100);
    CHECK(spec.rho_s_list.size() == 2);
    CHECK(spec.seeds == 3);
    CHECK(spec.base_seed == 7);
    CHECK(spec.recall_target == doctest::Approx(0.9));
    CHECK_FALSE(spec.store_vectors);
    CHECK(spec.reduction.eps == doctest::Approx(0.4));
    CHECK(spec.reduction.tau == doctest::Approx(0.05));
    CHECK(spec.reduction.grid_cell == doctest::Approx(500.0));
    CHECK_THROWS(ExperimentSpec::from_json_text("{\"metric\": \"bogus\"}"));
}

TEST_CASE("hamming-mapped metric embeds and runs") {
    ExperimentSpec spec = tiny_spec();
    spec.metric = bench::MetricKind::hamming_mapped;
    spec.d = 64;
    const auto out = bench::run_experiment(spec);
    CHECK(out.errors.empty());
    REQUIRE(out.records.size() == 1);
    // The embedded instance reports the sphere-side approximation.
    CHECK(out.records.front().c == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    // Plain hamming without the embedding is rejected.
    spec.metric = bench::MetricKind::hamming;
    const auto bad = bench::run_experiment(spec);
    CHECK(bad.records.empty());
    CHECK_FALSE(bad.errors.empty());
}
