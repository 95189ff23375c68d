/* Plain-C boundary of the continuous-time navigation library.
 *
 * Every entry point returns a status int in the same categories the command
 * line tool uses as exit codes:
 *   0  success
 *   2  configuration / input error (bad scenario, bad options, bad data)
 *   3  solver or internal runtime failure
 *   4  file I/O failure
 * On any nonzero return, ctnav_last_error() describes the failure; the
 * string is thread-local and valid until the next failing call on the same
 * thread. Handles are opaque and must be released with the matching _free
 * function; every _free tolerates NULL.
 */
#ifndef CTNAV_C_API_H
#define CTNAV_C_API_H

#include <stdint.h>

#if defined(_WIN32)
#define CTNAV_API __declspec(dllexport)
#else
#define CTNAV_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct ctnav_scenario ctnav_scenario;
typedef struct ctnav_result ctnav_result;
typedef struct ctnav_compare_report ctnav_compare_report;

/* Library semantic version, e.g. "0.1.0". Never fails. */
CTNAV_API const char* ctnav_version(void);

/* Message of the most recent failure on this thread ("" if none yet). */
CTNAV_API const char* ctnav_last_error(void);

/* ---- scenarios ---------------------------------------------------------- */

CTNAV_API int ctnav_scenario_load(const char* path, ctnav_scenario** out);
CTNAV_API int ctnav_scenario_parse(const char* text, ctnav_scenario** out);
CTNAV_API void ctnav_scenario_free(ctnav_scenario* scn);

/* Write the synthesized sensor streams plus ground truth as CSV files into
 * out_dir (created if missing). */
CTNAV_API int ctnav_synth(const ctnav_scenario* scn, const char* out_dir);

/* ---- estimation runs ---------------------------------------------------- */

typedef struct ctnav_run_options {
  int tight;            /* 1 = raw-measurement fusion, 0 = position fixes   */
  int gp_model;         /* 0 = constant velocity, 1 = constant acceleration */
  int loss;             /* 0 = none, 1 = cauchy, 2 = huber                  */
  double loss_scale;    /* robust kernel scale, > 0                         */
  double lag_s;         /* smoothing window length in seconds               */
  int override_seed;    /* 1 = replace the scenario seed with .seed         */
  uint64_t seed;
  int use_imu;          /* per-sensor enables (GNSS/PVT follow `tight`)     */
  int use_odometry;
  int use_speed;
  const char* out_dir;  /* NULL or "" = keep results in memory only         */
} ctnav_run_options;

/* Fill an options struct with the defaults (tight, constant-acceleration
 * prior, Cauchy loss of scale 1, 3 s lag, all sensors on). Call this before
 * setting individual fields so newly added fields stay initialized. */
CTNAV_API void ctnav_run_options_init(ctnav_run_options* opts);

CTNAV_API int ctnav_run(const ctnav_scenario* scn, const ctnav_run_options* opts,
                        ctnav_result** out);

typedef struct ctnav_metrics {
  double rmse_2d_m;
  double rmse_3d_m;
  double max_2d_err_m;
  double rmse_vel_mps;
  double mean_yaw_err_deg;
  double smoothness_s;
  double mean_iterations;
  double wall_time_s;
  int64_t published_n;
  int32_t window_count;
  int32_t max_iterations;
} ctnav_metrics;

typedef struct ctnav_routing {
  int64_t synchronized_n;
  int64_t interpolated_n;
  int64_t dropped_n;
  int64_t cached_n;
  int64_t evicted_n;
} ctnav_routing;

CTNAV_API int ctnav_result_metrics(const ctnav_result* res, ctnav_metrics* out);
CTNAV_API int ctnav_result_routing(const ctnav_result* res, ctnav_routing* out);

/* Serialized artifacts. The returned strings are owned by the result handle
 * and stay valid until ctnav_result_free. */
CTNAV_API const char* ctnav_result_metrics_json(ctnav_result* res);
CTNAV_API const char* ctnav_result_routing_json(ctnav_result* res);
CTNAV_API const char* ctnav_result_trajectory_csv(ctnav_result* res);

CTNAV_API void ctnav_result_free(ctnav_result* res);

/* ---- metric regression comparison --------------------------------------- */

/* Compare two metrics.json files (reference first). A metric regresses when
 * candidate > reference * (1 + rel_tol) within numerical slack. */
CTNAV_API int ctnav_compare(const char* metrics_a, const char* metrics_b, double rel_tol,
                            ctnav_compare_report** out);
CTNAV_API int ctnav_compare_regressed(const ctnav_compare_report* rep); /* 0 / 1 */
CTNAV_API const char* ctnav_compare_render(ctnav_compare_report* rep);
CTNAV_API void ctnav_compare_free(ctnav_compare_report* rep);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* CTNAV_C_API_H */
