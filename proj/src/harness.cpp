#include "capann/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace capann::bench {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

MetricKind metric_from_name(const std::string& s) {
    if (s == "sphere") return MetricKind::sphere;
    if (s == "hamming") return MetricKind::hamming;
    if (s == "hamming-mapped") return MetricKind::hamming_mapped;
    throw std::invalid_argument("unknown metric: " + s);
}

std::string metric_name(MetricKind m) {
    switch (m) {
        case MetricKind::sphere: return "sphere";
        case MetricKind::hamming: return "hamming";
        case MetricKind::hamming_mapped: return "hamming-mapped";
    }
    return "?";
}

Structure structure_from_name(const std::string& s) {
    if (s == "filter-tree") return Structure::filter_tree;
    if (s == "reduction") return Structure::reduction;
    throw std::invalid_argument("unknown structure: " + s);
}

std::string structure_name(Structure s) {
    return s == Structure::filter_tree ? "filter-tree" : "reduction";
}

Threshold threshold_from_name(const std::string& s) {
    if (s == "cr" || s == "catch-radius") return Threshold::catch_radius;
    if (s == "midpoint") return Threshold::midpoint;
    if (s == "r" || s == "planted-radius") return Threshold::planted_radius;
    throw std::invalid_argument("unknown threshold mode: " + s);
}

std::string threshold_name(Threshold t) {
    switch (t) {
        case Threshold::catch_radius: return "cr";
        case Threshold::midpoint: return "midpoint";
        case Threshold::planted_radius: return "r";
    }
    return "?";
}

// Effective sphere instance for a ladder point; Hamming inputs run the tree
// after the 1/sqrt(d) embedding.
instances::SphereInstance make_sphere(const ExperimentSpec& spec, std::uint64_t n,
                                      std::uint64_t seed) {
    const std::uint64_t d = spec.d ? spec.d : instances::default_dimension(n);
    switch (spec.metric) {
        case MetricKind::sphere:
            return instances::gen_sphere(n, d, spec.c, spec.R, spec.q_count, seed);
        case MetricKind::hamming_mapped: {
            // spec.c names the sphere-side approximation; the Hamming source
            // uses c^2 so that the embedding lands back on spec.c.
            const auto h =
                instances::gen_hamming(n, d, spec.c * spec.c, spec.q_count, seed);
            return instances::hamming_to_sphere(h);
        }
        case MetricKind::hamming:
            throw std::invalid_argument(
                "structure benchmarks need sphere geometry; use metric "
                "\"hamming-mapped\" to embed Hamming instances");
    }
    throw std::invalid_argument("bad metric");
}

double verify_radius(const ExperimentSpec& spec, const instances::SphereInstance& inst) {
    const double r = inst.nominal_r();
    switch (spec.threshold) {
        case Threshold::catch_radius: return inst.c * r;
        case Threshold::midpoint: return 0.5 * (r + 1.4142135623730951 * inst.R);
        case Threshold::planted_radius: return r * (1.0 + 1e-9);
    }
    return inst.c * r;
}

// Unmatchable threshold: forces the full traversal for work accounting.
constexpr double kExhaustive = -1.0;

template <typename QueryFn>
void run_queries(const instances::SphereInstance& inst, std::uint32_t threads,
                 QueryFn&& one, std::vector<tree::QueryStats>& out) {
    const std::uint64_t q = inst.q_count();
    out.resize(q);
    if (threads <= 1) {
        for (std::uint64_t j = 0; j < q; ++j) out[j] = one(j);
        return;
    }
    // Queries are deterministic and independent; a counter hands out ids.
    std::vector<std::thread> pool;
    std::atomic<std::uint64_t> next{0};
    for (std::uint32_t t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const std::uint64_t j = next.fetch_add(1);
                if (j >= q) return;
                out[j] = one(j);
            }
        });
    }
    for (auto& th : pool) th.join();
}

RunRecord summarize(const ExperimentSpec& spec, const instances::SphereInstance& inst,
                    double rho_s, std::uint64_t seed, double r_verify,
                    std::uint32_t num_trees,
                    const std::vector<tree::QueryStats>& recall_stats,
                    const std::vector<tree::QueryStats>& work_stats,
                    std::uint64_t space_nodes, std::uint64_t space_mass,
                    double build_ms, double query_ms) {
    RunRecord rec;
    rec.structure = spec.structure;
    rec.metric = spec.metric;
    rec.n = inst.n;
    rec.d = inst.d;
    rec.c = inst.c;
    rec.R = inst.R;
    rec.rho_s = rho_s;
    rec.seed = seed;
    rec.q_count = inst.q_count();
    rec.num_trees = num_trees;
    rec.success_factor = spec.success_factor;
    rec.threshold = spec.threshold;
    rec.r_verify = r_verify;
    rec.space_nodes = space_nodes;
    rec.space_mass = space_mass;
    rec.build_ms = build_ms;
    rec.query_ms = query_ms;
    std::uint64_t hits = 0, planted_hits = 0;
    for (std::size_t j = 0; j < recall_stats.size(); ++j) {
        if (recall_stats[j].found()) {
            ++hits;
            if (recall_stats[j].result == inst.planted[j]) ++planted_hits;
        }
    }
    const double qn = static_cast<double>(recall_stats.size());
    rec.recall = static_cast<double>(hits) / qn;
    rec.planted_rate = static_cast<double>(planted_hits) / qn;
    std::vector<double> work(work_stats.size());
    double sn = 0, si = 0, sc = 0;
    for (std::size_t j = 0; j < work_stats.size(); ++j) {
        const auto& st = work_stats[j];
        work[j] = static_cast<double>(st.work());
        sn += static_cast<double>(st.nodes_visited);
        si += static_cast<double>(st.inner_products);
        sc += static_cast<double>(st.candidates_scanned);
    }
    rec.mean_nodes = sn / qn;
    rec.mean_inner = si / qn;
    rec.mean_candidates = sc / qn;
    rec.mean_work = (sn + sc) / qn;
    std::sort(work.begin(), work.end());
    rec.median_work = work.empty() ? 0.0
                                   : (work.size() % 2 ? work[work.size() / 2]
                                                      : 0.5 * (work[work.size() / 2 - 1] +
                                                               work[work.size() / 2]));
    return rec;
}

RunRecord run_one(const ExperimentSpec& spec, std::uint64_t n, double rho_s,
                  std::uint64_t seed) {
    const instances::SphereInstance inst = make_sphere(spec, n, seed);
    const double r_verify = verify_radius(spec, inst);
    std::vector<tree::QueryStats> recall_stats, work_stats;

    if (spec.structure == Structure::filter_tree) {
        tree::SelectOptions opts;
        opts.success_factor = spec.success_factor;
        opts.recall_target = spec.recall_target;
        tree::TreeParams params = tree::select_params(n, inst.c, inst.R, rho_s, opts);
        params.seed = seed;
        params.store_vectors = spec.store_vectors;
        params.max_tree_nodes = spec.max_tree_nodes;
        if (spec.num_trees > 0) params.num_trees = spec.num_trees;
        const auto t0 = Clock::now();
        const tree::Forest forest = tree::Forest::build(inst, params);
        const double build_ms = ms_since(t0);
        const auto t1 = Clock::now();
        run_queries(
            inst, spec.query_threads,
            [&](std::uint64_t j) {
                return forest.query(inst, inst.query_row(j), r_verify);
            },
            recall_stats);
        run_queries(
            inst, spec.query_threads,
            [&](std::uint64_t j) {
                return forest.query(inst, inst.query_row(j), kExhaustive);
            },
            work_stats);
        return summarize(spec, inst, rho_s, seed, r_verify, params.num_trees,
                         recall_stats, work_stats, forest.node_count(),
                         forest.bucket_mass(), build_ms, ms_since(t1));
    }

    reduction::ReductionParams rp = spec.reduction;
    rp.seed = seed;
    rp.rho_s = rho_s;
    rp.success_factor = spec.success_factor;
    rp.recall_target = spec.recall_target;
    if (spec.num_trees > 0) rp.num_tables = spec.num_trees;
    const auto t0 = Clock::now();
    const reduction::DecisionTree dtree = reduction::DecisionTree::build(inst, rp);
    const double build_ms = ms_since(t0);
    const auto t1 = Clock::now();
    run_queries(
        inst, spec.query_threads,
        [&](std::uint64_t j) { return dtree.query(inst, inst.query_row(j), r_verify); },
        recall_stats);
    run_queries(
        inst, spec.query_threads,
        [&](std::uint64_t j) {
            return dtree.query(inst, inst.query_row(j), kExhaustive);
        },
        work_stats);
    return summarize(spec, inst, rho_s, seed, r_verify, dtree.params().num_tables,
                     recall_stats, work_stats, dtree.node_count(),
                     dtree.bucket_mass(), build_ms, ms_since(t1));
}

}  // namespace

RunOutcome run_experiment(const ExperimentSpec& spec) {
    if (spec.ladder.empty()) throw std::invalid_argument("run_experiment: empty ladder");
    if (!std::is_sorted(spec.ladder.begin(), spec.ladder.end()) ||
        std::adjacent_find(spec.ladder.begin(), spec.ladder.end()) != spec.ladder.end()) {
        throw std::invalid_argument("run_experiment: ladder must be strictly increasing");
    }
    if (spec.seeds < 1) throw std::invalid_argument("run_experiment: seeds must be >= 1");
    RunOutcome out;
    for (const std::uint64_t n : spec.ladder) {
        for (const double rho_s : spec.rho_s_list) {
            for (std::uint32_t s = 0; s < spec.seeds; ++s) {
                const std::uint64_t seed = spec.base_seed + s;
                try {
                    out.records.push_back(run_one(spec, n, rho_s, seed));
                } catch (const std::exception& e) {
                    std::ostringstream msg;
                    msg << "n=" << n << " rho_s=" << rho_s << " seed=" << seed << ": "
                        << e.what();
                    out.errors.push_back(msg.str());
                }
            }
        }
    }
    return out;
}

FitResult fit_loglog(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 2) throw std::invalid_argument("fit_loglog: need >= 2 points");
    const double m = static_cast<double>(points.size());
    double sx = 0, sy = 0;
    for (const auto& [x, y] : points) {
        sx += std::log(x);
        sy += std::log(y);
    }
    const double mx = sx / m, my = sy / m;
    double sxx = 0, sxy = 0;
    for (const auto& [x, y] : points) {
        const double dx = std::log(x) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(y) - my);
    }
    FitResult f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double rss = 0;
    for (const auto& [x, y] : points) {
        const double r = std::log(y) - (f.intercept + f.slope * std::log(x));
        rss += r * r;
    }
    f.stderr_slope =
        points.size() > 2 ? std::sqrt(rss / (m - 2.0) / sxx) : 0.0;
    return f;
}

CompareReport fit_and_compare(const std::vector<RunRecord>& records,
                              double predicted_rho_q, double predicted_rho_u,
                              double band) {
    // Aggregate by n: mean work and mean space across seeds.
    std::vector<std::pair<double, double>> work_pts, space_pts;
    std::vector<std::uint64_t> ns;
    for (const auto& r : records) {
        if (std::find(ns.begin(), ns.end(), r.n) == ns.end()) ns.push_back(r.n);
    }
    std::sort(ns.begin(), ns.end());
    if (ns.size() < 3) {
        throw std::invalid_argument("fit_and_compare: need >= 3 distinct ladder points");
    }
    for (const std::uint64_t n : ns) {
        double w = 0, s = 0;
        std::size_t cnt = 0;
        for (const auto& r : records) {
            if (r.n != n) continue;
            w += r.mean_work;
            s += r.space();
            ++cnt;
        }
        work_pts.emplace_back(static_cast<double>(n), w / static_cast<double>(cnt));
        space_pts.emplace_back(static_cast<double>(n), s / static_cast<double>(cnt));
    }
    CompareReport rep;
    rep.work_fit = fit_loglog(work_pts);
    rep.space_fit = fit_loglog(space_pts);
    rep.predicted_rho_q = predicted_rho_q;
    rep.predicted_rho_space = 1.0 + predicted_rho_u;
    rep.band = band;
    rep.work_within_band = std::fabs(rep.work_fit.slope - predicted_rho_q) <= band;
    rep.space_within_band =
        std::fabs(rep.space_fit.slope - rep.predicted_rho_space) <= band;
    return rep;
}

const char* const kCsvHeader =
    "csv_version,structure,metric,n,d,c,R,rho_s,seed,q_count,num_trees,"
    "success_factor,threshold,r_verify,recall,planted_rate,mean_nodes,"
    "mean_inner,mean_candidates,mean_work,median_work,space_nodes,space_mass,"
    "build_ms,query_ms";

void emit_csv(const std::vector<RunRecord>& records, std::ostream& out) {
    out << kCsvHeader << "\n";
    out.precision(17);
    for (const auto& r : records) {
        out << 1 << ',' << structure_name(r.structure) << ',' << metric_name(r.metric)
            << ',' << r.n << ',' << r.d << ',' << r.c << ',' << r.R << ',' << r.rho_s
            << ',' << r.seed << ',' << r.q_count << ',' << r.num_trees << ','
            << r.success_factor << ',' << threshold_name(r.threshold) << ','
            << r.r_verify << ',' << r.recall << ',' << r.planted_rate << ','
            << r.mean_nodes << ',' << r.mean_inner << ',' << r.mean_candidates << ','
            << r.mean_work << ',' << r.median_work << ',' << r.space_nodes << ','
            << r.space_mass << ',' << r.build_ms << ',' << r.query_ms << "\n";
    }
}

std::vector<RunRecord> parse_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("parse_csv: empty input");
    if (line != kCsvHeader) throw std::runtime_error("parse_csv: unknown header/version");
    std::vector<RunRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 25) throw std::runtime_error("parse_csv: bad field count");
        RunRecord r;
        std::size_t i = 1;
        r.structure = structure_from_name(f[i++]);
        r.metric = metric_from_name(f[i++]);
        r.n = std::stoull(f[i++]);
        r.d = std::stoull(f[i++]);
        r.c = std::stod(f[i++]);
        r.R = std::stod(f[i++]);
        r.rho_s = std::stod(f[i++]);
        r.seed = std::stoull(f[i++]);
        r.q_count = std::stoull(f[i++]);
        r.num_trees = static_cast<std::uint32_t>(std::stoul(f[i++]));
        r.success_factor = std::stod(f[i++]);
        r.threshold = threshold_from_name(f[i++]);
        r.r_verify = std::stod(f[i++]);
        r.recall = std::stod(f[i++]);
        r.planted_rate = std::stod(f[i++]);
        r.mean_nodes = std::stod(f[i++]);
        r.mean_inner = std::stod(f[i++]);
        r.mean_candidates = std::stod(f[i++]);
        r.mean_work = std::stod(f[i++]);
        r.median_work = std::stod(f[i++]);
        r.space_nodes = std::stoull(f[i++]);
        r.space_mass = std::stoull(f[i++]);
        r.build_ms = std::stod(f[i++]);
        r.query_ms = std::stod(f[i++]);
        records.push_back(r);
    }
    return records;
}

ExperimentSpec ExperimentSpec::from_json_text(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ExperimentSpec s;
    if (j.contains("structure")) s.structure = structure_from_name(j["structure"]);
    if (j.contains("metric")) s.metric = metric_from_name(j["metric"]);
    if (j.contains("ladder")) s.ladder = j["ladder"].get<std::vector<std::uint64_t>>();
    if (j.contains("n")) s.ladder = {j["n"].get<std::uint64_t>()};
    if (j.contains("d")) s.d = j["d"].get<std::uint64_t>();
    if (j.contains("c")) s.c = j["c"].get<double>();
    if (j.contains("R")) s.R = j["R"].get<double>();
    if (j.contains("queries")) s.q_count = j["queries"].get<std::uint64_t>();
    if (j.contains("rho_s")) {
        if (j["rho_s"].is_array()) {
            s.rho_s_list = j["rho_s"].get<std::vector<double>>();
        } else {
            s.rho_s_list = {j["rho_s"].get<double>()};
        }
    }
    if (j.contains("seeds")) s.seeds = j["seeds"].get<std::uint32_t>();
    if (j.contains("base_seed")) s.base_seed = j["base_seed"].get<std::uint64_t>();
    if (j.contains("threshold")) s.threshold = threshold_from_name(j["threshold"]);
    if (j.contains("success_factor")) s.success_factor = j["success_factor"].get<double>();
    if (j.contains("recall_target")) s.recall_target = j["recall_target"].get<double>();
    if (j.contains("num_trees")) s.num_trees = j["num_trees"].get<std::uint32_t>();
    if (j.contains("store_vectors")) s.store_vectors = j["store_vectors"].get<bool>();
    if (j.contains("max_tree_nodes")) s.max_tree_nodes = j["max_tree_nodes"].get<std::uint64_t>();
    if (j.contains("query_threads")) s.query_threads = j["query_threads"].get<std::uint32_t>();
    if (j.contains("out")) s.out_csv = j["out"].get<std::string>();
    if (j.contains("reduction")) {
        const auto& r = j["reduction"];
        if (r.contains("eps")) s.reduction.eps = r["eps"].get<double>();
        if (r.contains("delta")) s.reduction.delta = r["delta"].get<double>();
        if (r.contains("tau")) s.reduction.tau = r["tau"].get<double>();
        if (r.contains("K")) s.reduction.K = r["K"].get<std::uint32_t>();
        if (r.contains("grid_cell")) s.reduction.grid_cell = r["grid_cell"].get<double>();
        if (r.contains("cluster_radius_top")) {
            s.reduction.cluster_radius_top = r["cluster_radius_top"].get<double>();
        }
        if (r.contains("asymptotic_params")) {
            s.reduction.asymptotic_params = r["asymptotic_params"].get<bool>();
        }
        if (r.contains("far_pair_eta_convention")) {
            s.reduction.far_pair_eta_convention = r["far_pair_eta_convention"].get<bool>();
        }
        if (r.contains("max_nodes")) s.reduction.max_nodes = r["max_nodes"].get<std::uint64_t>();
        if (r.contains("r1")) s.reduction.r1 = r["r1"].get<double>();
        if (r.contains("r2")) s.reduction.r2 = r["r2"].get<double>();
    }
    return s;
}

ExperimentSpec ExperimentSpec::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open spec: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

}  // namespace capann::bench
