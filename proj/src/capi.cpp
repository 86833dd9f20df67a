#include "capann.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "capann/bounds.hpp"
#include "capann/boolean_fn.hpp"
#include "capann/filter_tree.hpp"
#include "capann/gaussian_caps.hpp"
#include "capann/harness.hpp"
#include "capann/instances.hpp"
#include "capann/reduction.hpp"

namespace {

thread_local std::string g_last_error;

capann_status set_error(capann_status code, const char* what) {
    g_last_error = what ? what : "";
    return code;
}

template <typename Fn>
capann_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const capann::caps::NoSolution& e) {
        return set_error(CAPANN_ERR_NO_SOLUTION, e.what());
    } catch (const capann::tree::ResourceCapExceeded& e) {
        return set_error(CAPANN_ERR_RESOURCE_CAP, e.what());
    } catch (const capann::bounds::OutOfRange& e) {
        return set_error(CAPANN_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::invalid_argument& e) {
        return set_error(CAPANN_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::runtime_error& e) {
        return set_error(CAPANN_ERR_IO, e.what());
    } catch (const std::exception& e) {
        return set_error(CAPANN_ERR_INTERNAL, e.what());
    }
}

capann::bounds::Curve to_curve(capann_curve c) {
    switch (c) {
        case CAPANN_CURVE_EQ1: return capann::bounds::Curve::euclidean_eq1;
        case CAPANN_CURVE_EQ2: return capann::bounds::Curve::hamming_eq2;
        case CAPANN_CURVE_EQ3: return capann::bounds::Curve::list_of_points_eq3;
        case CAPANN_CURVE_TREE: return capann::bounds::Curve::tree_appendix_b;
    }
    throw std::invalid_argument("unknown curve");
}

}  // namespace

struct capann_instance {
    capann::instances::Metric metric;
    capann::instances::HammingInstance hamming;
    capann::instances::SphereInstance sphere;  // native or embedded view

    const capann::instances::SphereInstance& as_sphere() const { return sphere; }
};

struct capann_tree {
    capann::tree::Forest forest;
    const capann_instance* inst;
};

struct capann_dtree {
    capann::reduction::DecisionTree tree;
    const capann_instance* inst;
};

extern "C" {

const char* capann_last_error(void) { return g_last_error.c_str(); }
const char* capann_version(void) { return "1.0.0"; }

/* ---------- caps ---------- */

capann_status capann_tail(double eta, double* value, double* log_value) {
    return guarded([&] {
        const auto t = capann::caps::tail(eta);
        if (value) *value = t.value;
        if (log_value) *log_value = t.log_value;
        return CAPANN_OK;
    });
}

capann_status capann_inv_tail(double p, double* eta) {
    return guarded([&] {
        const double x = capann::caps::inv_tail(p);
        if (eta) *eta = x;
        return CAPANN_OK;
    });
}

capann_status capann_joint_cap(double eta, double eta_prime, double alpha,
                               double* value, double* log_value) {
    return guarded([&] {
        const auto t = capann::caps::joint_cap(eta, eta_prime, alpha);
        if (value) *value = t.value;
        if (log_value) *log_value = t.log_value;
        return CAPANN_OK;
    });
}

capann_status capann_joint_cap_exponent(double eta, double eta_prime, double alpha,
                                        double* exponent) {
    return guarded([&] {
        const double e =
            capann::caps::joint_cap_asymptotic_exponent(eta, eta_prime, alpha);
        if (exponent) *exponent = e;
        return CAPANN_OK;
    });
}

capann_status capann_inv_joint_cap_eta_prime(double eta, double alpha,
                                             double target_p, double* eta_prime) {
    return guarded([&] {
        const double x = capann::caps::inv_joint_cap_eta_prime(eta, alpha, target_p);
        if (eta_prime) *eta_prime = x;
        return CAPANN_OK;
    });
}

capann_status capann_mc_joint_cap(double eta, double eta_prime, double alpha,
                                  uint64_t samples, uint64_t seed, double* value,
                                  double* stderr_value) {
    return guarded([&] {
        const auto est =
            capann::caps::mc_joint_cap(eta, eta_prime, alpha, samples, seed);
        if (value) *value = est.value;
        if (stderr_value) *stderr_value = est.stderr_value;
        return CAPANN_OK;
    });
}

/* ---------- bounds ---------- */

capann_status capann_tradeoff_rho_q(capann_curve curve, double c, double rho_u,
                                    double* rho_q) {
    return guarded([&] {
        const double v = capann::bounds::rho_q_from_rho_u(to_curve(curve), c, rho_u);
        if (rho_q) *rho_q = v;
        return CAPANN_OK;
    });
}

capann_status capann_tradeoff_rho_u(capann_curve curve, double c, double rho_q,
                                    double* rho_u) {
    return guarded([&] {
        const double v = capann::bounds::rho_u_from_rho_q(to_curve(curve), c, rho_q);
        if (rho_u) *rho_u = v;
        return CAPANN_OK;
    });
}

capann_status capann_tradeoff_rho_u_max(capann_curve curve, double c,
                                        double* rho_u_max) {
    return guarded([&] {
        const double v = capann::bounds::rho_u_max(to_curve(curve), c);
        if (rho_u_max) *rho_u_max = v;
        return CAPANN_OK;
    });
}

capann_status capann_tree_tradeoff_rho_q(double c, double rho_s, double* rho_q) {
    return guarded([&] {
        const double v = capann::bounds::tree_tradeoff_rho_q(c, rho_s);
        if (rho_q) *rho_q = v;
        return CAPANN_OK;
    });
}

capann_status capann_one_probe_space_exponent(double c, double* exponent) {
    return guarded([&] {
        const double v = capann::bounds::one_probe_space_exponent(c);
        if (exponent) *exponent = v;
        return CAPANN_OK;
    });
}

capann_status capann_robust_expansion_bound(double sigma, double m, double gamma,
                                            double p, double q, double* bound) {
    return guarded([&] {
        const double v = capann::bounds::robust_expansion_bound(sigma, m, gamma, p, q);
        if (bound) *bound = v;
        return CAPANN_OK;
    });
}

capann_status capann_ptw_schedule(double n, double sigma, double* p, double* q) {
    return guarded([&] {
        const auto hp = capann::bounds::ptw_schedule(n, sigma);
        if (p) *p = hp.p;
        if (q) *q = hp.q;
        return CAPANN_OK;
    });
}

capann_status capann_expansion_eval(int d, double sigma, double a_target,
                                    double gamma, double* lower_bound,
                                    double* upper_estimate) {
    return guarded([&] {
        const auto est =
            capann::bounds::estimate_robust_expansion(d, sigma, a_target, gamma);
        const auto hp = capann::bounds::ptw_schedule(
            std::pow(2.0, static_cast<double>(d)), sigma);
        const double lb = capann::bounds::robust_expansion_bound(
            sigma, 1.0 / est.a_measure, gamma, hp.p, hp.q);
        if (lower_bound) *lower_bound = lb;
        if (upper_estimate) *upper_estimate = est.ratio;
        return CAPANN_OK;
    });
}

/* ---------- instances ---------- */

capann_status capann_gen_instance(capann_metric metric, uint64_t n, uint64_t d,
                                  double c, double R, uint64_t q_count,
                                  uint64_t seed, const char* out_path) {
    return guarded([&] {
        if (!out_path) throw std::invalid_argument("out_path is null");
        if (metric == CAPANN_METRIC_HAMMING) {
            const auto inst = capann::instances::gen_hamming(n, d, c, q_count, seed);
            capann::instances::save_instance(inst, out_path);
        } else {
            const auto inst = capann::instances::gen_sphere(n, d, c, R, q_count, seed);
            capann::instances::save_instance(inst, out_path);
        }
        return CAPANN_OK;
    });
}

capann_status capann_instance_open(const char* path, capann_instance** out) {
    return guarded([&] {
        if (!path || !out) throw std::invalid_argument("null argument");
        auto inst = std::make_unique<capann_instance>();
        inst->metric = capann::instances::instance_metric(path);
        if (inst->metric == capann::instances::Metric::hamming) {
            inst->hamming = capann::instances::load_hamming(path);
            inst->sphere = capann::instances::hamming_to_sphere(inst->hamming);
        } else {
            inst->sphere = capann::instances::load_sphere(path);
        }
        *out = inst.release();
        return CAPANN_OK;
    });
}

void capann_instance_close(capann_instance* inst) { delete inst; }

capann_status capann_instance_info(const capann_instance* inst, capann_metric* metric,
                                   uint64_t* n, uint64_t* d, double* c, double* R,
                                   uint64_t* q_count) {
    return guarded([&] {
        if (!inst) throw std::invalid_argument("null instance");
        const bool ham = inst->metric == capann::instances::Metric::hamming;
        if (metric) *metric = ham ? CAPANN_METRIC_HAMMING : CAPANN_METRIC_SPHERE;
        if (ham) {
            if (n) *n = inst->hamming.n;
            if (d) *d = inst->hamming.d;
            if (c) *c = inst->hamming.c;
            if (R) *R = 0.0;
            if (q_count) *q_count = inst->hamming.q_count();
        } else {
            if (n) *n = inst->sphere.n;
            if (d) *d = inst->sphere.d;
            if (c) *c = inst->sphere.c;
            if (R) *R = inst->sphere.R;
            if (q_count) *q_count = inst->sphere.q_count();
        }
        return CAPANN_OK;
    });
}

capann_status capann_instance_stats(const capann_instance* inst, double threshold,
                                    double* unique_fraction, double* planted_mean,
                                    double* threshold_used) {
    return guarded([&] {
        if (!inst) throw std::invalid_argument("null instance");
        capann::instances::InstanceStats st;
        if (inst->metric == capann::instances::Metric::hamming) {
            st = capann::instances::instance_stats(inst->hamming, threshold);
        } else {
            st = capann::instances::instance_stats(inst->sphere, threshold);
        }
        if (unique_fraction) *unique_fraction = st.unique_fraction;
        if (planted_mean) *planted_mean = st.planted_mean;
        if (threshold_used) *threshold_used = st.threshold;
        return CAPANN_OK;
    });
}

/* ---------- filter tree ---------- */

capann_status capann_select_params(uint64_t n, double c, double R, double rho_s,
                                   double success_factor, double recall_target,
                                   capann_tree_params* out) {
    return guarded([&] {
        capann::tree::SelectOptions opts;
        opts.success_factor = success_factor;
        opts.recall_target = recall_target;
        const auto p = capann::tree::select_params(n, c, R, rho_s, opts);
        if (out) {
            out->K = p.K;
            out->T = p.T;
            out->eta = p.eta;
            out->eta_prime = p.eta_prime;
            out->R = p.R;
            out->rho_s = p.rho_s;
            out->seed = p.seed;
            out->success_factor = p.success_factor;
            out->num_trees = p.num_trees;
            out->store_vectors = p.store_vectors ? 1 : 0;
            out->predicted_rho_q = p.predicted_rho_q;
            out->joint_cap_planted = p.joint_cap_planted;
            out->recall_estimate = p.recall_estimate;
        }
        return CAPANN_OK;
    });
}

capann_status capann_tree_build(const capann_instance* inst, double rho_s,
                                uint64_t seed, double success_factor,
                                double recall_target, uint32_t num_trees,
                                capann_tree** out) {
    return guarded([&] {
        if (!inst || !out) throw std::invalid_argument("null argument");
        const auto& sphere = inst->as_sphere();
        capann::tree::SelectOptions opts;
        opts.success_factor = success_factor;
        opts.recall_target = recall_target;
        auto params = capann::tree::select_params(sphere.n, sphere.c, sphere.R,
                                                  rho_s, opts);
        params.seed = seed;
        if (num_trees > 0) params.num_trees = num_trees;
        auto tree = std::make_unique<capann_tree>(
            capann_tree{capann::tree::Forest::build(sphere, params), inst});
        *out = tree.release();
        return CAPANN_OK;
    });
}

capann_status capann_tree_save(const capann_tree* tree, const char* path) {
    return guarded([&] {
        if (!tree || !path) throw std::invalid_argument("null argument");
        // A forest serializes as its trees side by side in numbered files
        // when num_trees > 1; the plain path holds tree 0.
        const auto& trees = tree->forest.trees();
        for (std::size_t i = 0; i < trees.size(); ++i) {
            const std::string p =
                i == 0 ? std::string(path) : std::string(path) + "." + std::to_string(i);
            trees[i].save(p);
        }
        return CAPANN_OK;
    });
}

capann_status capann_tree_open(const char* path, const capann_instance* inst,
                               capann_tree** out) {
    return guarded([&] {
        if (!path || !inst || !out) throw std::invalid_argument("null argument");
        std::vector<capann::tree::FilterTree> trees;
        trees.push_back(capann::tree::FilterTree::load(path));
        const std::uint32_t total = trees.front().params().num_trees;
        for (std::uint32_t i = 1; i < total; ++i) {
            trees.push_back(capann::tree::FilterTree::load(
                std::string(path) + "." + std::to_string(i)));
        }
        auto params = trees.front().params();
        auto handle = std::make_unique<capann_tree>();
        handle->forest = capann::tree::Forest::from_trees(std::move(trees), params);
        handle->inst = inst;
        *out = handle.release();
        return CAPANN_OK;
    });
}

void capann_tree_close(capann_tree* tree) { delete tree; }

capann_status capann_tree_space(const capann_tree* tree, uint64_t* nodes,
                                uint64_t* bucket_mass) {
    return guarded([&] {
        if (!tree) throw std::invalid_argument("null tree");
        if (nodes) *nodes = tree->forest.node_count();
        if (bucket_mass) *bucket_mass = tree->forest.bucket_mass();
        return CAPANN_OK;
    });
}

capann_status capann_tree_query(const capann_tree* tree, uint64_t query_index,
                                double r_threshold, capann_query_stats* out) {
    return guarded([&] {
        if (!tree || !out) throw std::invalid_argument("null argument");
        const auto& sphere = tree->inst->as_sphere();
        if (query_index >= sphere.q_count()) {
            throw std::invalid_argument("query index out of range");
        }
        const double thr =
            r_threshold > 0.0 ? r_threshold : sphere.c * sphere.nominal_r();
        const auto st =
            tree->forest.query(sphere, sphere.query_row(query_index), thr);
        out->nodes_visited = st.nodes_visited;
        out->inner_products = st.inner_products;
        out->candidates_scanned = st.candidates_scanned;
        out->result = st.result;
        out->distance = st.distance_found;
        return CAPANN_OK;
    });
}

/* ---------- reduction ---------- */

capann_status capann_dtree_build(const capann_instance* inst,
                                 const char* params_json, capann_dtree** out) {
    return guarded([&] {
        if (!inst || !out) throw std::invalid_argument("null argument");
        capann::bench::ExperimentSpec spec;
        if (params_json && std::strlen(params_json) > 0) {
            spec = capann::bench::ExperimentSpec::from_json_text(params_json);
        }
        auto rp = spec.reduction;
        rp.rho_s = spec.rho_s_list.front();
        rp.success_factor = spec.success_factor;
        rp.recall_target = spec.recall_target;
        if (spec.num_trees > 0) rp.num_tables = spec.num_trees;
        rp.seed = spec.base_seed;
        auto handle = std::make_unique<capann_dtree>(capann_dtree{
            capann::reduction::DecisionTree::build(inst->as_sphere(), rp), inst});
        *out = handle.release();
        return CAPANN_OK;
    });
}

capann_status capann_dtree_save(const capann_dtree* t, const char* path) {
    return guarded([&] {
        if (!t || !path) throw std::invalid_argument("null argument");
        t->tree.save(path);
        return CAPANN_OK;
    });
}

capann_status capann_dtree_open(const char* path, const capann_instance* inst,
                                capann_dtree** out) {
    return guarded([&] {
        if (!path || !inst || !out) throw std::invalid_argument("null argument");
        auto handle = std::make_unique<capann_dtree>(
            capann_dtree{capann::reduction::DecisionTree::load(path), inst});
        *out = handle.release();
        return CAPANN_OK;
    });
}

void capann_dtree_close(capann_dtree* t) { delete t; }

capann_status capann_dtree_query(const capann_dtree* t, uint64_t query_index,
                                 double r_threshold, capann_query_stats* out) {
    return guarded([&] {
        if (!t || !out) throw std::invalid_argument("null argument");
        const auto& sphere = t->inst->as_sphere();
        if (query_index >= sphere.q_count()) {
            throw std::invalid_argument("query index out of range");
        }
        const double thr =
            r_threshold > 0.0 ? r_threshold : sphere.c * sphere.nominal_r();
        const auto st = t->tree.query(sphere, sphere.query_row(query_index), thr);
        out->nodes_visited = st.nodes_visited;
        out->inner_products = st.inner_products;
        out->candidates_scanned = st.candidates_scanned;
        out->result = st.result;
        out->distance = st.distance_found;
        return CAPANN_OK;
    });
}

capann_status capann_dtree_dump_dot(const capann_dtree* t, const char* path) {
    return guarded([&] {
        if (!t || !path) throw std::invalid_argument("null argument");
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open for writing");
        t->tree.dump_dot(out);
        return CAPANN_OK;
    });
}

capann_status capann_dtree_space(const capann_dtree* t, uint64_t* nodes,
                                 uint64_t* bucket_mass) {
    return guarded([&] {
        if (!t) throw std::invalid_argument("null tree");
        if (nodes) *nodes = t->tree.node_count();
        if (bucket_mass) *bucket_mass = t->tree.bucket_mass();
        return CAPANN_OK;
    });
}

/* ---------- bench ---------- */

capann_status capann_bench_run(const char* spec_json_path, const char* out_csv_path,
                               int assert_bands, uint64_t* per_record_errors) {
    return guarded([&] {
        if (!spec_json_path) throw std::invalid_argument("null spec path");
        auto spec = capann::bench::ExperimentSpec::from_json_file(spec_json_path);
        if (out_csv_path) spec.out_csv = out_csv_path;
        const auto outcome = capann::bench::run_experiment(spec);
        if (per_record_errors) *per_record_errors = outcome.errors.size();
        if (!spec.out_csv.empty()) {
            std::ofstream out(spec.out_csv);
            if (!out) throw std::runtime_error("cannot open CSV output");
            capann::bench::emit_csv(outcome.records, out);
        }
        if (assert_bands && !outcome.errors.empty()) {
            throw std::runtime_error("bench: " + outcome.errors.front());
        }
        return CAPANN_OK;
    });
}

}  // extern "C"
