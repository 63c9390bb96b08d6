/* C interface to the obac library. Every function returns an obac_status;
 * on failure obac_last_error() describes the problem for the calling thread.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with obac_string_free. */
#ifndef OBAC_OBAC_H
#define OBAC_OBAC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define OBAC_API __declspec(dllexport)
#else
#define OBAC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum obac_status {
  OBAC_OK = 0,
  OBAC_FAILED_CHECK = 1, /* ran to completion but a verified property failed */
  OBAC_ERR_CONFIG = 2,
  OBAC_ERR_IO = 3,
  OBAC_ERR_FORMAT = 4,
  OBAC_ERR_NUMERIC = 5,
  OBAC_ERR_STATE = 6,
  OBAC_ERR_DIMENSION = 7,
  OBAC_ERR_LOOKUP = 8,
  OBAC_ERR_COVERAGE = 9,
  OBAC_ERR_INTERNAL = 10
} obac_status;

typedef enum obac_log_level {
  OBAC_LOG_DEBUG = 0,
  OBAC_LOG_INFO = 1,
  OBAC_LOG_WARNING = 2,
  OBAC_LOG_ERROR = 3,
  OBAC_LOG_SILENT = 4
} obac_log_level;

typedef struct obac_plan obac_plan;
typedef struct obac_agent obac_agent;

OBAC_API const char* obac_version(void);
/* Message of the last failing call on this thread ("" when none). */
OBAC_API const char* obac_last_error(void);
OBAC_API const char* obac_status_name(obac_status status);
OBAC_API void obac_string_free(char* s);
OBAC_API obac_status obac_set_log_level(obac_log_level level);

/* ---- experiment plans ---------------------------------------------------- */

/* Plan with every default (pendulum, seed 0, 30000 steps, out "runs"). */
OBAC_API obac_status obac_plan_new(obac_plan** out);
/* Parses a key = value plan file; unknown keys are OBAC_ERR_CONFIG. */
OBAC_API obac_status obac_plan_load(const char* path, obac_plan** out);
OBAC_API obac_status obac_plan_parse(const char* text, obac_plan** out);
OBAC_API void obac_plan_free(obac_plan* plan);
/* Sets a plan key ("env", "seeds", ...) or an agent key ("agent.lambda").
 * The plan is revalidated; on error it is left unchanged. */
OBAC_API obac_status obac_plan_set(obac_plan* plan, const char* key, const char* value);
/* Current value of a key; OBAC_ERR_LOOKUP when unset. */
OBAC_API obac_status obac_plan_get(const obac_plan* plan, const char* key, char** value);
OBAC_API obac_status obac_plan_serialize(const obac_plan* plan, char** text);

/* ---- experiments ----------------------------------------------------------
 * Each writes its files under the plan's output directory and returns a JSON
 * report. Failed seeds do not stop the others; the status is then the code of
 * the first failure while the report is still produced. */

OBAC_API obac_status obac_run_experiment(const obac_plan* plan, char** report_json);
OBAC_API obac_status obac_run_ablation(const obac_plan* plan, char** report_json);
OBAC_API obac_status obac_run_noise(const obac_plan* plan, const double* sigmas, size_t n_sigmas,
                                    char** report_json);
OBAC_API obac_status obac_run_motivating(const obac_plan* plan, char** report_json);
/* Writes <run_dir>/curves.csv. `seeds` may be NULL when n_seeds is 0. */
OBAC_API obac_status obac_emit_curves(const char* run_dir, const uint64_t* seeds, size_t n_seeds, const char* metric,
                                      char** csv_path);

/* ---- tabular oracle ------------------------------------------------------ */

/* Runs the tabular property suite. Returns OBAC_FAILED_CHECK when a
 * non-informational property fails; the report lists every property. */
OBAC_API obac_status obac_tabular_verify(uint64_t seed, char** report_json);
/* Offline optimal policy of a fixture file (which must carry a dataset). */
OBAC_API obac_status obac_tabular_offline_optimum(const char* fixture_path, char** report_json);

/* ---- single agents ------------------------------------------------------- */

/* Agent for one seed of a plan (the plan's first seed when seed is ignored). */
OBAC_API obac_status obac_agent_new(const obac_plan* plan, uint64_t seed, obac_agent** out);
OBAC_API obac_status obac_agent_load(const char* checkpoint_path, obac_agent** out);
OBAC_API void obac_agent_free(obac_agent* agent);
OBAC_API obac_status obac_agent_step(obac_agent* agent, int64_t env_steps);
OBAC_API obac_status obac_agent_env_steps(const obac_agent* agent, int64_t* out);
OBAC_API obac_status obac_agent_save(const obac_agent* agent, const char* checkpoint_path);
/* Mean deterministic return over `episodes` fresh episodes seeded by `seed`. */
OBAC_API obac_status obac_agent_evaluate(const obac_agent* agent, int episodes, uint64_t seed, double* mean_return);

#ifdef __cplusplus
}
#endif

#endif /* OBAC_OBAC_H */
