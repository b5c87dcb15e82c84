#ifndef NHSYNC_H
#define NHSYNC_H

/* C interface to the nhsync library. Every function returns an nhsync_status;
 * on failure nhsync_last_error() gives a message for the calling thread.
 * Strings handed out by the library are released with nhsync_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NHSYNC_API __declspec(dllexport)
#else
#define NHSYNC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nhsync_status {
  NHSYNC_OK = 0,
  NHSYNC_INVALID_ARGUMENT = 1,
  NHSYNC_DOMAIN = 2,
  NHSYNC_INTEGRATION_FAILURE = 3,
  NHSYNC_NAN_FAILURE = 4,
  NHSYNC_INTERNAL_CONSISTENCY = 5,
  NHSYNC_CHART_ESCAPE = 6,
  NHSYNC_NO_INVARIANT_GRAPH = 7,
  NHSYNC_INSUFFICIENT_SAMPLING = 8,
  NHSYNC_INSUFFICIENT_DATA = 9,
  NHSYNC_PRECONDITION = 10,
  NHSYNC_NH_RATIO_VIOLATION = 11,
  NHSYNC_CONFIG = 12,
  NHSYNC_IO = 13
} nhsync_status;

/* Process exit codes used by run. */
#define NHSYNC_EXIT_OK 0
#define NHSYNC_EXIT_CONFIG 2
#define NHSYNC_EXIT_NUMERICAL 3

typedef struct nhsync_config nhsync_config;
typedef struct nhsync_graph nhsync_graph;

NHSYNC_API const char* nhsync_version(void);
/* Message of the last failure on this thread, "" if none. Valid until the next call. */
NHSYNC_API const char* nhsync_last_error(void);
NHSYNC_API const char* nhsync_status_name(int status);
NHSYNC_API void nhsync_string_free(char* s);

/* Experiment configs */
NHSYNC_API int nhsync_config_parse(const char* json_text, nhsync_config** out);
NHSYNC_API int nhsync_config_load(const char* path, nhsync_config** out);
NHSYNC_API void nhsync_config_free(nhsync_config* config);
/* Normalised config as pretty JSON. */
NHSYNC_API int nhsync_config_normalized(const nhsync_config* config, char** out);
NHSYNC_API int nhsync_config_set_seed(nhsync_config* config, uint64_t seed);
NHSYNC_API int nhsync_config_set_threads(nhsync_config* config, size_t threads);
NHSYNC_API int nhsync_config_set_output_dir(nhsync_config* config, const char* dir);

/* Runs the experiment. exit_code gets one of NHSYNC_EXIT_*; summary (optional)
 * gets a JSON object {exit_code, output_dir, artifacts, error, message}.
 * Returns NHSYNC_OK whenever the run was attempted, whatever its outcome. */
NHSYNC_API int nhsync_run(const nhsync_config* config, int* exit_code, char** summary);

/* Numerics */
NHSYNC_API int nhsync_persistence_threshold(double alpha, double a, double* out);
/* Return-time statistics from n increasing section crossing times. */
NHSYNC_API int nhsync_coherence(const double* crossing_times, size_t n, double* mean_return,
                                double* spread, double* coherence_index);

/* forcing: 0 zero, 1 single tone, 2 two-tone default. */
NHSYNC_API int nhsync_poincare_graph_solve(double alpha, double a, double omega, double gamma,
                                           int forcing, double forcing_frequency, size_t grid,
                                           double tol, nhsync_graph** out);
NHSYNC_API void nhsync_graph_free(nhsync_graph* graph);
NHSYNC_API size_t nhsync_graph_torus_dim(const nhsync_graph* graph);
NHSYNC_API size_t nhsync_graph_normal_dim(const nhsync_graph* graph);
/* angles has torus_dim entries, out has normal_dim entries. */
NHSYNC_API int nhsync_graph_eval(const nhsync_graph* graph, const double* angles, double* out);

#ifdef __cplusplus
}
#endif

#endif
