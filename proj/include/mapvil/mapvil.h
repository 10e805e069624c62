/* C interface of the map-based visual-inertial localization library.
 *
 * Every function returns an mvl_status. On failure a description is
 * available from mvl_last_error() on the calling thread until the next call.
 * Handles are opaque and released with the matching *_free function; strings
 * returned through out-structs stay valid while their handle lives.
 */
#ifndef MAPVIL_H
#define MAPVIL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MVL_API
#else
#define MVL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mvl_status {
  MVL_OK = 0,
  MVL_ERR_ARGUMENT = 1, /* null handle, bad value passed to a setter */
  MVL_ERR_CONFIG = 2,   /* invalid configuration file or combination */
  MVL_ERR_IO = 3,       /* unreadable or unwritable file */
  MVL_ERR_RUNTIME = 4   /* failure while simulating, filtering or evaluating */
} mvl_status;

typedef struct mvl_config mvl_config;
typedef struct mvl_summary mvl_summary;
typedef struct mvl_obs_report mvl_obs_report;

MVL_API const char *mvl_version(void);
MVL_API const char *mvl_last_error(void);
MVL_API const char *mvl_status_name(mvl_status s);

/* ---- configuration ---- */
MVL_API mvl_status mvl_config_default(mvl_config **out);
MVL_API mvl_status mvl_config_load(const char *path, mvl_config **out);
MVL_API void mvl_config_free(mvl_config *cfg);
MVL_API mvl_status mvl_config_set_seed(mvl_config *cfg, uint64_t seed);
MVL_API mvl_status mvl_config_set_runs(mvl_config *cfg, int runs);
MVL_API mvl_status mvl_config_set_out(mvl_config *cfg, const char *dir);
/* Comma-separated variant names or "all". */
MVL_API mvl_status mvl_config_set_variants(mvl_config *cfg, const char *list);
/* "perfect" or "imperfect". */
MVL_API mvl_status mvl_config_set_map_mode(mvl_config *cfg, const char *mode);
MVL_API mvl_status mvl_config_set_threads(mvl_config *cfg, int threads);
/* Output directory; valid until the next setter call on cfg. */
MVL_API const char *mvl_config_out(const mvl_config *cfg);
MVL_API mvl_status mvl_config_write(const mvl_config *cfg, const char *path);

/* ---- simulation and experiments ---- */

/* Writes truth, IMU samples and both map bundles of Monte Carlo run `run`. */
MVL_API mvl_status mvl_simulate(const mvl_config *cfg, int run, const char *dir);

typedef void (*mvl_progress_fn)(void *user, const char *variant, uint64_t seed, int done, int total);

/* Runs every configured variant over every seed and writes all artifacts
 * under the output directory. `progress` may be null. */
MVL_API mvl_status mvl_run(const mvl_config *cfg, mvl_progress_fn progress, void *user, mvl_summary **out);

/* Re-evaluates the run records under `dir` (as written by mvl_run) and
 * rewrites summary.csv and rpe.csv there. `cfg` supplies metric options and
 * may be null for defaults. */
MVL_API mvl_status mvl_metrics(const char *dir, const mvl_config *cfg, mvl_summary **out);

/* NaN marks values a variant does not have (relative metrics of vio). */
typedef struct mvl_variant_summary {
  const char *variant;
  const char *chart;
  const char *map_mode;
  int runs;
  double rmse_orientation_deg, rmse_position_m;
  double rmse_rel_orientation_deg, rmse_rel_position_m;
  double nees_orientation, nees_position, nees_pose;
  double nees_rel_orientation, nees_rel_position;
  double ate_local_m, ate_map_m;
} mvl_variant_summary;

MVL_API size_t mvl_summary_count(const mvl_summary *s);
MVL_API mvl_status mvl_summary_get(const mvl_summary *s, size_t i, mvl_variant_summary *out);
/* CSV text identical to summary.csv; valid while s lives. */
MVL_API const char *mvl_summary_csv(const mvl_summary *s);
MVL_API void mvl_summary_free(mvl_summary *s);

/* ---- observability suite ---- */
typedef struct mvl_case_result {
  const char *name;
  int claimed_dim, numeric_dim;
  double basis_residual;
  int degenerate, pass;
} mvl_case_result;

/* Every analyzed case over the configured random trajectories. Writes the
 * report as CSV to `report_path` unless it is null. */
MVL_API mvl_status mvl_observability(const mvl_config *cfg, const char *report_path, mvl_obs_report **out);
MVL_API size_t mvl_obs_count(const mvl_obs_report *r);
MVL_API mvl_status mvl_obs_get(const mvl_obs_report *r, size_t i, mvl_case_result *out);
MVL_API int mvl_obs_all_pass(const mvl_obs_report *r);
MVL_API void mvl_obs_free(mvl_obs_report *r);

/* ---- update cost ---- */
#define MVL_TIMING_MAX_POINTS 32

typedef struct mvl_timing_result {
  size_t points;
  int m[MVL_TIMING_MAX_POINTS];
  double schmidt_us[MVL_TIMING_MAX_POINTS];
  double full_us[MVL_TIMING_MAX_POINTS];
  /* Growth slopes fit t(m) - t(0); raw slopes fit t(m). NaN if undefined. */
  double schmidt_slope, full_slope;
  double schmidt_slope_raw, full_slope_raw;
  int active_dim;
} mvl_timing_result;

/* Times the Schmidt and full updates over the configured keyframe counts
 * (m = 0 is always included). Writes CSV to `report_path` unless null. */
MVL_API mvl_status mvl_timing(const mvl_config *cfg, const char *report_path, mvl_timing_result *out);

#ifdef __cplusplus
}
#endif

#endif /* MAPVIL_H */
