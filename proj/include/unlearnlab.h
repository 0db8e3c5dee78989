/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface of the unlearning laboratory. All objects are opaque handles
 * created by *_new / *_load / *_generate functions and released with the
 * matching *_free function. Every fallible call returns a ul_status; on
 * failure ul_last_error() describes the error for the calling thread.
 *
 * String results are copied into caller buffers: pass buf = NULL or a too
 * small capacity to learn the required size (including the terminating NUL)
 * through *needed; UL_ERR_SIZE is returned when the buffer is too small.
 */
#ifndef UNLEARNLAB_H
#define UNLEARNLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define UL_API __declspec(dllexport)
#else
#define UL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ul_status {
  UL_OK = 0,
  UL_ERR_INVALID_CONFIG = 1,
  UL_ERR_DOMAIN = 2,
  UL_ERR_NUMERIC = 3,
  UL_ERR_INVALID_BATCH = 4,
  UL_ERR_SIZE = 5,
  UL_ERR_IO = 6,
  UL_ERR_LAYOUT_MISMATCH = 7,
  UL_ERR_UNDEFINED_INPUT = 8,
  UL_ERR_BASE_MODEL = 9,
  UL_ERR_NULL_ARGUMENT = 10,
  UL_ERR_INTERNAL = 11
} ul_status;

typedef struct ul_config ul_config;
typedef struct ul_world ul_world;
typedef struct ul_model ul_model;
typedef struct ul_run ul_run;

UL_API const char* ul_version(void);
UL_API const char* ul_status_string(ul_status status);
/* Message of the most recent failure on this thread; empty after success. */
UL_API const char* ul_last_error(void);

/* Experiment configuration (key = value text format). */
UL_API ul_status ul_config_new(ul_config** out);
UL_API ul_status ul_config_load(const char* path, ul_config** out);
UL_API ul_status ul_config_set(ul_config* cfg, const char* key, const char* value);
UL_API ul_status ul_config_get(const ul_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);
UL_API ul_status ul_config_text(const ul_config* cfg, char* buf, size_t cap, size_t* needed);
UL_API ul_status ul_config_hash(const ul_config* cfg, char* buf, size_t cap, size_t* needed);
UL_API ul_status ul_config_validate(const ul_config* cfg);
UL_API void ul_config_free(ul_config* cfg);

/* Output root from UNLEARN_LAB_OUT, or "runs". */
UL_API ul_status ul_default_output_root(char* buf, size_t cap, size_t* needed);

/* Synthetic worlds. Generation uses the world.* keys and seed of cfg. */
UL_API ul_status ul_world_generate(const ul_config* cfg, ul_world** out);
UL_API ul_status ul_world_load(const char* path, ul_world** out);
UL_API ul_status ul_world_save(const ul_world* world, const char* path);
UL_API ul_status ul_world_info(const ul_world* world, size_t* entities, size_t* forget, size_t* vocab_size,
                               uint64_t* seed);
UL_API void ul_world_free(ul_world* world);

/* Models. trace_csv_path may be NULL. */
UL_API ul_status ul_base_train(const ul_config* cfg, const ul_world* world, const char* trace_csv_path,
                               ul_model** out, double* final_nll);
UL_API ul_status ul_model_load(const char* path, ul_model** out);
UL_API ul_status ul_model_save(const ul_model* model, const char* path);
UL_API ul_status ul_model_param_count(const ul_model* model, size_t* count);
UL_API void ul_model_free(ul_model* model);

/* Samples the frozen base model under the forget directive and writes the
 * reference cache as JSON lines. */
UL_API ul_status ul_reference_build(const ul_config* cfg, const ul_world* world, const ul_model* base,
                                    const char* path);

/* Method names: pubg, ga, npo, random, reject, bg. references_path is read
 * by pubg and bg; when NULL they sample a fresh reference set. trace_csv_path
 * may be NULL. */
UL_API ul_status ul_unlearn(const ul_config* cfg, const ul_world* world, const ul_model* base, const char* method,
                            const char* references_path, const char* trace_csv_path, ul_model** out);

/* Greedy-decodes every image (forget seen, forget unseen, retain) and writes
 * the per-row evaluation CSV. directive != 0 prompts with the directive. */
UL_API ul_status ul_evaluate(const ul_config* cfg, const ul_world* world, const ul_model* model, const char* label,
                             int directive, const char* csv_path);

/* Renders report.md and summary.csv of a run directory. *gaps receives the
 * number of missing or unreadable inputs. */
UL_API ul_status ul_report(const char* run_dir, size_t* gaps);

typedef struct ul_kl_result {
  size_t sequences;
  double reference_mass;
  double kl;
  double expected_nll;
  double entropy;
  double max_grad_diff;
  double max_grad_abs;
  double mc_mean;
  double mc_stderr;
  double mc_dir_mean;
  double mc_dir_stderr;
  double exact_dir;
  int grad_ok;
  int entropy_ok;
  int mc_ok;
} ul_kl_result;

/* Checks on a fully enumerable instance that the gradient of the exact
 * sequence KL equals the gradient of the expected reference NLL, and that the
 * sampled estimator is unbiased. vocab <= 8, max_len <= 3. */
UL_API ul_status ul_verify_kl(size_t vocab_size, size_t max_len, uint64_t seed, size_t samples, ul_kl_result* out);

/* Full pipeline. out_dir may be NULL to keep everything in memory. */
UL_API ul_status ul_run_experiment(const ul_config* cfg, const char* out_dir, ul_run** out);
UL_API ul_status ul_run_error_count(const ul_run* run, size_t* count);
/* Returned strings live as long as the run handle. */
UL_API ul_status ul_run_error(const ul_run* run, size_t index, const char** message);
/* Behavioural acceptance checks on the main cell. */
UL_API ul_status ul_run_check_count(const ul_run* run, size_t* count);
UL_API ul_status ul_run_check(const ul_run* run, size_t index, int* criterion, int* passed, const char** name,
                              const char** detail);
UL_API void ul_run_free(ul_run* run);

#ifdef __cplusplus
}
#endif

#endif /* UNLEARNLAB_H */
