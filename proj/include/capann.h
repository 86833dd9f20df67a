/* capann — C API for the Gaussian-cap filter ANN library.
 *
 * All functions return a capann_status; CAPANN_OK is 0. On error,
 * capann_last_error() returns a message describing the most recent failure
 * on the calling thread. Objects are opaque handles released with their
 * matching *_close function.
 */

#ifndef CAPANN_H
#define CAPANN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum capann_status {
    CAPANN_OK = 0,
    CAPANN_ERR_INVALID_ARGUMENT = 1,
    CAPANN_ERR_NO_SOLUTION = 2,
    CAPANN_ERR_IO = 3,
    CAPANN_ERR_RESOURCE_CAP = 4,
    CAPANN_ERR_INTERNAL = 5,
} capann_status;

typedef enum capann_metric {
    CAPANN_METRIC_HAMMING = 0,
    CAPANN_METRIC_SPHERE = 1,
} capann_metric;

typedef enum capann_curve {
    CAPANN_CURVE_EQ1 = 0,   /* Euclidean sphere trade-off */
    CAPANN_CURVE_EQ2 = 1,   /* Hamming trade-off */
    CAPANN_CURVE_EQ3 = 2,   /* list-of-points lower-bound boundary */
    CAPANN_CURVE_TREE = 3,  /* filter-tree equation (equivalent to EQ1) */
} capann_curve;

const char* capann_last_error(void);
const char* capann_version(void);

/* ---------- Gaussian cap probabilities ---------- */

capann_status capann_tail(double eta, double* value, double* log_value);
capann_status capann_inv_tail(double p, double* eta);
capann_status capann_joint_cap(double eta, double eta_prime, double alpha,
                               double* value, double* log_value);
capann_status capann_joint_cap_exponent(double eta, double eta_prime, double alpha,
                                        double* exponent);
capann_status capann_inv_joint_cap_eta_prime(double eta, double alpha,
                                             double target_p, double* eta_prime);
capann_status capann_mc_joint_cap(double eta, double eta_prime, double alpha,
                                  uint64_t samples, uint64_t seed, double* value,
                                  double* stderr_value);

/* ---------- Trade-off and lower-bound evaluators ---------- */

capann_status capann_tradeoff_rho_q(capann_curve curve, double c, double rho_u,
                                    double* rho_q);
capann_status capann_tradeoff_rho_u(capann_curve curve, double c, double rho_q,
                                    double* rho_u);
capann_status capann_tradeoff_rho_u_max(capann_curve curve, double c, double* rho_u_max);
capann_status capann_tree_tradeoff_rho_q(double c, double rho_s, double* rho_q);
capann_status capann_one_probe_space_exponent(double c, double* exponent);
capann_status capann_robust_expansion_bound(double sigma, double m, double gamma,
                                            double p, double q, double* bound);
capann_status capann_ptw_schedule(double n, double sigma, double* p, double* q);
/* Constructive sandwich around the robust expansion at dimension d: the
 * analytic lower bound under the ptw schedule for n = 2^d, and the greedy
 * upper estimate. */
capann_status capann_expansion_eval(int d, double sigma, double a_target,
                                    double gamma, double* lower_bound,
                                    double* upper_estimate);

/* ---------- Instances ---------- */

typedef struct capann_instance capann_instance;

capann_status capann_gen_instance(capann_metric metric, uint64_t n, uint64_t d,
                                  double c, double R, uint64_t q_count,
                                  uint64_t seed, const char* out_path);
capann_status capann_instance_open(const char* path, capann_instance** out);
void capann_instance_close(capann_instance* inst);
capann_status capann_instance_info(const capann_instance* inst, capann_metric* metric,
                                   uint64_t* n, uint64_t* d, double* c, double* R,
                                   uint64_t* q_count);
/* threshold 0 selects the midpoint default; see the library docs. */
capann_status capann_instance_stats(const capann_instance* inst, double threshold,
                                    double* unique_fraction, double* planted_mean,
                                    double* threshold_used);

/* ---------- Filter tree ---------- */

typedef struct capann_tree capann_tree;

typedef struct capann_tree_params {
    uint32_t K;
    uint64_t T;
    double eta;
    double eta_prime;
    double R;
    double rho_s;
    uint64_t seed;
    double success_factor;
    uint32_t num_trees;
    int store_vectors;
    double predicted_rho_q;
    double joint_cap_planted;
    double recall_estimate;
} capann_tree_params;

capann_status capann_select_params(uint64_t n, double c, double R, double rho_s,
                                   double success_factor, double recall_target,
                                   capann_tree_params* out);
/* Hamming instances are embedded onto the sphere first. */
capann_status capann_tree_build(const capann_instance* inst, double rho_s,
                                uint64_t seed, double success_factor,
                                double recall_target, uint32_t num_trees,
                                capann_tree** out);
capann_status capann_tree_save(const capann_tree* tree, const char* path);
capann_status capann_tree_open(const char* path, const capann_instance* inst,
                               capann_tree** out);
void capann_tree_close(capann_tree* tree);
capann_status capann_tree_space(const capann_tree* tree, uint64_t* nodes,
                                uint64_t* bucket_mass);

typedef struct capann_query_stats {
    uint64_t nodes_visited;
    uint64_t inner_products;
    uint64_t candidates_scanned;
    int64_t result;  /* point id, or -1 on miss */
    double distance;
} capann_query_stats;

/* r_threshold <= 0 selects the catch radius c*r of the instance. */
capann_status capann_tree_query(const capann_tree* tree, uint64_t query_index,
                                double r_threshold, capann_query_stats* out);

/* ---------- Appendix-C reduction ---------- */

typedef struct capann_dtree capann_dtree;

capann_status capann_dtree_build(const capann_instance* inst,
                                 const char* params_json, capann_dtree** out);
capann_status capann_dtree_save(const capann_dtree* t, const char* path);
capann_status capann_dtree_open(const char* path, const capann_instance* inst,
                                capann_dtree** out);
void capann_dtree_close(capann_dtree* t);
capann_status capann_dtree_query(const capann_dtree* t, uint64_t query_index,
                                 double r_threshold, capann_query_stats* out);
capann_status capann_dtree_dump_dot(const capann_dtree* t, const char* path);
capann_status capann_dtree_space(const capann_dtree* t, uint64_t* nodes,
                                 uint64_t* bucket_mass);

/* ---------- Benchmark harness ---------- */

/* Runs the experiment described by the JSON spec file and writes the CSV.
 * With assert_bands != 0 the status is CAPANN_ERR_INTERNAL when any
 * configured acceptance band fails. per_record_errors (optional) receives
 * the number of records that failed to run. */
capann_status capann_bench_run(const char* spec_json_path, const char* out_csv_path,
                               int assert_bands, uint64_t* per_record_errors);

#ifdef __cplusplus
}
#endif

#endif /* CAPANN_H */
