// capann command-line tool. Talks to the library exclusively through the
// shared C API in capann.h.

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "capann.h"

namespace {

int fail(capann_status rc) {
    std::fprintf(stderr, "error (%d): %s\n", static_cast<int>(rc), capann_last_error());
    return 1;
}

#define CHECK_RC(expr)                    \
    do {                                  \
        const capann_status rc_ = (expr); \
        if (rc_ != CAPANN_OK) return fail(rc_); \
    } while (0)

struct GenArgs {
    std::string metric = "sphere";
    std::uint64_t n = 1024, d = 0, queries = 100, seed = 1;
    double c = 2.0, R = 1.0;
    std::string out;
};

int cmd_gen(const GenArgs& a) {
    std::uint64_t d = a.d;
    if (d == 0) {
        const double log_n = std::log2(static_cast<double>(a.n < 4 ? 4 : a.n));
        d = static_cast<std::uint64_t>(std::ceil(log_n * std::log2(std::max(log_n, 2.0))));
    }
    const capann_metric m =
        a.metric == "hamming" ? CAPANN_METRIC_HAMMING : CAPANN_METRIC_SPHERE;
    CHECK_RC(capann_gen_instance(m, a.n, d, a.c, a.R, a.queries, a.seed, a.out.c_str()));
    std::printf("wrote %s (metric=%s n=%" PRIu64 " d=%" PRIu64 " c=%g queries=%" PRIu64 ")\n",
                a.out.c_str(), a.metric.c_str(), a.n, d, a.c, a.queries);
    return 0;
}

struct CapsArgs {
    double eta = 0.0, eta_prime = 0.0, alpha = 0.0;
    std::uint64_t mc_check = 0;
};

int cmd_caps(const CapsArgs& a) {
    double value, log_value, exponent = std::nan("");
    CHECK_RC(capann_joint_cap(a.eta, a.eta_prime, a.alpha, &value, &log_value));
    if (std::fabs(a.alpha) < 1.0) {
        CHECK_RC(capann_joint_cap_exponent(a.eta, a.eta_prime, a.alpha, &exponent));
    }
    std::printf("eta,eta_prime,alpha,value,log_value,asymptotic_exponent\n");
    std::printf("%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", a.eta, a.eta_prime, a.alpha,
                value, log_value, exponent);
    if (a.mc_check > 0) {
        double mc, se;
        CHECK_RC(capann_mc_joint_cap(a.eta, a.eta_prime, a.alpha, a.mc_check, 1, &mc, &se));
        std::printf("mc_value,mc_stderr,z\n%.17g,%.17g,%.6g\n", mc, se,
                    se > 0 ? (value - mc) / se : 0.0);
    }
    return 0;
}

struct BuildArgs {
    std::string instance, out;
    double rho_s = 4.0 / 3.0;
    std::uint64_t seed = 1;
    double success_factor = 100.0, recall_target = 0.0;
    std::uint32_t num_trees = 0;
};

int cmd_build(const BuildArgs& a) {
    capann_instance* inst = nullptr;
    CHECK_RC(capann_instance_open(a.instance.c_str(), &inst));
    capann_tree* tree = nullptr;
    const capann_status rc = capann_tree_build(inst, a.rho_s, a.seed, a.success_factor,
                                               a.recall_target, a.num_trees, &tree);
    if (rc != CAPANN_OK) {
        capann_instance_close(inst);
        return fail(rc);
    }
    capann_status save_rc = capann_tree_save(tree, a.out.c_str());
    std::uint64_t nodes = 0, mass = 0;
    capann_tree_space(tree, &nodes, &mass);
    capann_tree_close(tree);
    capann_instance_close(inst);
    if (save_rc != CAPANN_OK) return fail(save_rc);
    std::printf("wrote %s (nodes=%" PRIu64 " bucket_mass=%" PRIu64 ")\n", a.out.c_str(),
                nodes, mass);
    return 0;
}

struct QueryArgs {
    std::string tree, instance, report;
    double r_threshold = 0.0;
    bool reduction = false;
};

int cmd_query(const QueryArgs& a) {
    capann_instance* inst = nullptr;
    CHECK_RC(capann_instance_open(a.instance.c_str(), &inst));
    std::uint64_t q_count = 0;
    capann_instance_info(inst, nullptr, nullptr, nullptr, nullptr, nullptr, &q_count);

    FILE* out = stdout;
    if (!a.report.empty()) {
        out = std::fopen(a.report.c_str(), "w");
        if (!out) {
            capann_instance_close(inst);
            std::fprintf(stderr, "cannot open %s\n", a.report.c_str());
            return 1;
        }
    }
    std::fprintf(out, "query,found,result,distance,nodes_visited,inner_products,"
                      "candidates_scanned\n");
    auto emit = [&](std::uint64_t j, const capann_query_stats& st) {
        std::fprintf(out, "%" PRIu64 ",%d,%" PRId64 ",%.17g,%" PRIu64 ",%" PRIu64
                          ",%" PRIu64 "\n",
                     j, st.result >= 0 ? 1 : 0, st.result, st.distance,
                     st.nodes_visited, st.inner_products, st.candidates_scanned);
    };
    capann_status rc = CAPANN_OK;
    if (a.reduction) {
        capann_dtree* t = nullptr;
        rc = capann_dtree_open(a.tree.c_str(), inst, &t);
        if (rc == CAPANN_OK) {
            for (std::uint64_t j = 0; j < q_count && rc == CAPANN_OK; ++j) {
                capann_query_stats st;
                rc = capann_dtree_query(t, j, a.r_threshold, &st);
                if (rc == CAPANN_OK) emit(j, st);
            }
            capann_dtree_close(t);
        }
    } else {
        capann_tree* t = nullptr;
        rc = capann_tree_open(a.tree.c_str(), inst, &t);
        if (rc == CAPANN_OK) {
            for (std::uint64_t j = 0; j < q_count && rc == CAPANN_OK; ++j) {
                capann_query_stats st;
                rc = capann_tree_query(t, j, a.r_threshold, &st);
                if (rc == CAPANN_OK) emit(j, st);
            }
            capann_tree_close(t);
        }
    }
    if (out != stdout) std::fclose(out);
    capann_instance_close(inst);
    if (rc != CAPANN_OK) return fail(rc);
    return 0;
}

struct TradeoffArgs {
    std::string curve = "eq1";
    double c = 2.0;
    double rho_u = -1.0, rho_s = -1.0;
    int sweep = 0;
};

int cmd_tradeoff(const TradeoffArgs& a) {
    capann_curve curve = CAPANN_CURVE_EQ1;
    if (a.curve == "eq2") curve = CAPANN_CURVE_EQ2;
    else if (a.curve == "eq3") curve = CAPANN_CURVE_EQ3;
    else if (a.curve == "tree") curve = CAPANN_CURVE_TREE;
    else if (a.curve != "eq1") {
        std::fprintf(stderr, "unknown curve %s\n", a.curve.c_str());
        return 1;
    }
    std::printf("curve,c,rho_u,rho_q,residual\n");
    auto row = [&](double rho_u) -> int {
        double rho_q;
        CHECK_RC(capann_tradeoff_rho_q(curve, a.c, rho_u, &rho_q));
        // Residual by re-substitution through the inverse direction.
        double rho_u_back = rho_u;
        if (rho_q > 0) CHECK_RC(capann_tradeoff_rho_u(curve, a.c, rho_q, &rho_u_back));
        std::printf("%s,%.17g,%.17g,%.17g,%.3g\n", a.curve.c_str(), a.c, rho_u, rho_q,
                    std::fabs(rho_u_back - rho_u));
        return 0;
    };
    if (a.sweep > 1) {
        double rho_u_max;
        CHECK_RC(capann_tradeoff_rho_u_max(curve, a.c, &rho_u_max));
        for (int i = 0; i < a.sweep; ++i) {
            const double rho_u = rho_u_max * i / (a.sweep - 1);
            if (row(rho_u) != 0) return 1;
        }
        return 0;
    }
    double rho_u = a.rho_u;
    if (rho_u < 0 && a.rho_s >= 1.0) rho_u = a.rho_s - 1.0;
    if (rho_u < 0) {
        std::fprintf(stderr, "need --rho-u or --rho-s\n");
        return 1;
    }
    return row(rho_u);
}

struct ExpansionArgs {
    int d = 12;
    double sigma = 0.5, a = 1.0 / 16.0, gamma = 0.5;
};

int cmd_expansion(const ExpansionArgs& a) {
    double lb, ub;
    CHECK_RC(capann_expansion_eval(a.d, a.sigma, a.a, a.gamma, &lb, &ub));
    std::printf("d,sigma,a,gamma,bound,estimate,ratio\n");
    std::printf("%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.6g\n", a.d, a.sigma, a.a, a.gamma,
                lb, ub, ub > 0 ? ub / lb : 0.0);
    return 0;
}

struct ReduceBuildArgs {
    std::string instance, params, out, dump_dot;
};

int cmd_reduce_build(const ReduceBuildArgs& a) {
    capann_instance* inst = nullptr;
    CHECK_RC(capann_instance_open(a.instance.c_str(), &inst));
    capann_dtree* t = nullptr;
    std::string params_json = "{}";
    if (!a.params.empty()) {
        FILE* f = std::fopen(a.params.c_str(), "rb");
        if (!f) {
            capann_instance_close(inst);
            std::fprintf(stderr, "cannot open %s\n", a.params.c_str());
            return 1;
        }
        std::string text;
        char buf[4096];
        std::size_t got;
        while ((got = std::fread(buf, 1, sizeof(buf), f)) > 0) text.append(buf, got);
        std::fclose(f);
        params_json = text;
    }
    const capann_status rc = capann_dtree_build(inst, params_json.c_str(), &t);
    if (rc != CAPANN_OK) {
        capann_instance_close(inst);
        return fail(rc);
    }
    capann_status save_rc = CAPANN_OK;
    if (!a.out.empty()) save_rc = capann_dtree_save(t, a.out.c_str());
    if (save_rc == CAPANN_OK && !a.dump_dot.empty()) {
        save_rc = capann_dtree_dump_dot(t, a.dump_dot.c_str());
    }
    std::uint64_t nodes = 0, mass = 0;
    capann_dtree_space(t, &nodes, &mass);
    capann_dtree_close(t);
    capann_instance_close(inst);
    if (save_rc != CAPANN_OK) return fail(save_rc);
    std::printf("reduction tree: nodes=%" PRIu64 " bucket_mass=%" PRIu64 "%s%s\n", nodes,
                mass, a.out.empty() ? "" : " -> ", a.out.c_str());
    return 0;
}

struct BenchArgs {
    std::string spec, out;
    bool assert_bands = false;
};

int cmd_bench(const BenchArgs& a) {
    std::uint64_t errors = 0;
    CHECK_RC(capann_bench_run(a.spec.c_str(), a.out.empty() ? nullptr : a.out.c_str(),
                              a.assert_bands ? 1 : 0, &errors));
    if (errors > 0) {
        std::fprintf(stderr, "%" PRIu64 " records failed\n", errors);
    }
    std::printf("bench done%s%s\n", a.out.empty() ? "" : ", csv: ", a.out.c_str());
    return errors == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian-cap locality-sensitive filter ANN toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* sgen = app.add_subcommand("gen", "generate a planted random instance");
    sgen->add_option("--metric", gen.metric)->check(CLI::IsMember({"hamming", "sphere"}));
    sgen->add_option("--n", gen.n);
    sgen->add_option("--d", gen.d, "0 = ceil(log2 n * log2 log2 n)");
    sgen->add_option("--c", gen.c);
    sgen->add_option("--R", gen.R);
    sgen->add_option("--queries", gen.queries);
    sgen->add_option("--seed", gen.seed);
    sgen->add_option("--out", gen.out)->required();

    CapsArgs caps;
    auto* scaps = app.add_subcommand("caps", "Gaussian cap probability evaluator");
    scaps->add_option("--eta", caps.eta)->required();
    scaps->add_option("--eta-prime", caps.eta_prime)->required();
    scaps->add_option("--alpha", caps.alpha)->required();
    scaps->add_option("--mc-check", caps.mc_check, "Monte Carlo cross-check samples");

    BuildArgs build;
    auto* sbuild = app.add_subcommand("build", "build a filter tree over an instance");
    sbuild->add_option("--instance", build.instance)->required();
    sbuild->add_option("--rho-s", build.rho_s);
    sbuild->add_option("--seed", build.seed);
    sbuild->add_option("--success-factor", build.success_factor);
    sbuild->add_option("--recall-target", build.recall_target);
    sbuild->add_option("--num-trees", build.num_trees);
    sbuild->add_option("--out", build.out)->required();

    QueryArgs query;
    auto* squery = app.add_subcommand("query", "run an instance's queries through a tree");
    squery->add_option("--tree", query.tree)->required();
    squery->add_option("--instance", query.instance)->required();
    squery->add_option("--report", query.report, "CSV output path (default stdout)");
    squery->add_option("--r-threshold", query.r_threshold, "0 = catch radius c*r");
    squery->add_flag("--reduction", query.reduction, "the tree file is a reduction tree");

    TradeoffArgs tr;
    auto* str = app.add_subcommand("tradeoff", "trade-off curve evaluator");
    str->add_option("--curve", tr.curve)->check(CLI::IsMember({"eq1", "eq2", "eq3", "tree"}));
    str->add_option("--c", tr.c)->required();
    str->add_option("--rho-u", tr.rho_u);
    str->add_option("--rho-s", tr.rho_s);
    str->add_option("--sweep", tr.sweep, "emit this many points across the curve");

    ExpansionArgs ex;
    auto* sex = app.add_subcommand("expansion", "robust-expansion bound vs estimate");
    sex->add_option("--d", ex.d)->required();
    sex->add_option("--sigma", ex.sigma)->required();
    sex->add_option("--a", ex.a)->required();
    sex->add_option("--gamma", ex.gamma)->required();

    ReduceBuildArgs rb;
    auto* srb = app.add_subcommand("reduce-build", "build the worst-case reduction tree");
    srb->add_option("--instance", rb.instance)->required();
    srb->add_option("--params", rb.params, "JSON parameter file");
    srb->add_option("--out", rb.out);
    srb->add_option("--dump-dot", rb.dump_dot, "write the tree shape as graphviz");

    QueryArgs rq;
    auto* srq = app.add_subcommand("reduce-query", "query a reduction tree");
    srq->add_option("--tree", rq.tree)->required();
    srq->add_option("--instance", rq.instance)->required();
    srq->add_option("--report", rq.report);
    srq->add_option("--r-threshold", rq.r_threshold);

    BenchArgs bench;
    auto* sbench = app.add_subcommand("bench", "run a benchmark spec");
    sbench->add_option("--spec", bench.spec)->required();
    sbench->add_option("--out", bench.out);
    sbench->add_flag("--assert", bench.assert_bands);

    CLI11_PARSE(app, argc, argv);

    if (sgen->parsed()) return cmd_gen(gen);
    if (scaps->parsed()) return cmd_caps(caps);
    if (sbuild->parsed()) return cmd_build(build);
    if (squery->parsed()) return cmd_query(query);
    if (str->parsed()) return cmd_tradeoff(tr);
    if (sex->parsed()) return cmd_expansion(ex);
    if (srb->parsed()) return cmd_reduce_build(rb);
    if (srq->parsed()) {
        rq.reduction = true;
        return cmd_query(rq);
    }
    if (sbench->parsed()) return cmd_bench(bench);
    return 1;
}
