#ifndef SCP_H
#define SCP_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ScpStatus {
  SCP_STATUS_OK = 0,
  /**
   * Invalid configuration, argument or input data.
   */
  SCP_STATUS_CONFIG = 2,
  /**
   * A modelling assumption failed (degenerate map, support mismatch, ...).
   */
  SCP_STATUS_ASSUMPTION = 3,
  /**
   * Numerical failure.
   */
  SCP_STATUS_NUMERIC = 4,
  SCP_STATUS_NULL_POINTER = 5,
  /**
   * Output buffer too small; the required length is written where documented.
   */
  SCP_STATUS_BUFFER_TOO_SMALL = 6,
  SCP_STATUS_PANIC = 7,
} ScpStatus;

/**
 * Compiled probability measure on a domain.
 */
typedef struct ScpDensity ScpDensity;

/**
 * Parameter box.
 */
typedef struct ScpDomain ScpDomain;

/**
 * Quantity-of-interest map.
 */
typedef struct ScpMap ScpMap;

/**
 * Solution together with the prior it reweights.
 */
typedef struct ScpSolution ScpSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * The pointer stays valid until the next `scp_*` call on the same thread.
 */
const char *scp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *scp_version(void);

/**
 * Creates a box domain from `dim` lower and upper bounds.
 *
 * # Safety
 * `lower` and `upper` must point to `dim` doubles; `out` must be writable.
 */
enum ScpStatus scp_domain_new(const double *lower,
                              const double *upper,
                              size_t dim,
                              struct ScpDomain **out);

/**
 * # Safety
 * `domain` must come from [`scp_domain_new`] or be null.
 */
void scp_domain_free(struct ScpDomain *domain);

/**
 * Builds a registered map (`"ellipse"`, `"powerlaw"`). `params_json` is an
 * optional JSON object of numeric parameters, e.g. `{"r": 0.3}`.
 *
 * # Safety
 * `id` must be a NUL-terminated string; `params_json` NUL-terminated or null.
 */
enum ScpStatus scp_map_new(const char *id, const char *params_json, struct ScpMap **out);

/**
 * # Safety
 * `map` must come from [`scp_map_new`] or be null.
 */
void scp_map_free(struct ScpMap *map);

/**
 * # Safety
 * `x` must point to `dim` doubles and `out` to one writable double.
 */
enum ScpStatus scp_map_eval(const struct ScpMap *map, const double *x, size_t dim, double *out);

/**
 * Gradient norm of the map at `x`.
 *
 * # Safety
 * As for [`scp_map_eval`].
 */
enum ScpStatus scp_map_gram_factor(const struct ScpMap *map,
                                   const double *x,
                                   size_t dim,
                                   double *out);

/**
 * Compiles a density spec given as JSON (same schema as the TOML configs,
 * e.g. `{"kind": "uniform"}`) on `domain`.
 *
 * # Safety
 * `spec_json` must be NUL-terminated; `domain` a live handle.
 */
enum ScpStatus scp_density_new(const char *spec_json,
                               const struct ScpDomain *domain,
                               struct ScpDensity **out);

/**
 * # Safety
 * `density` must come from [`scp_density_new`] or be null.
 */
void scp_density_free(struct ScpDensity *density);

/**
 * # Safety
 * `x` must point to `dim` doubles and `out` to one writable double.
 */
enum ScpStatus scp_density_eval(const struct ScpDensity *density,
                                const double *x,
                                size_t dim,
                                double *out);

/**
 * Draws `count` points into `out` (row-major, `count * dim` doubles).
 * `required`, if non-null, receives the number of doubles needed.
 *
 * # Safety
 * `out` must hold `capacity` doubles.
 */
enum ScpStatus scp_density_sample(const struct ScpDensity *density,
                                  size_t count,
                                  uint64_t seed,
                                  double *out,
                                  size_t capacity,
                                  size_t *required);

/**
 * Solves on `n_prior` prior draws for the observed outputs `observed`,
 * with `n_bins` equal-width output bins and a `grid` of cells per axis.
 *
 * # Safety
 * `observed` must hold `n_observed` doubles and `grid` `grid_dim` counts.
 */
enum ScpStatus scp_solve(const struct ScpMap *map,
                         const struct ScpDomain *domain,
                         const struct ScpDensity *prior,
                         const double *observed,
                         size_t n_observed,
                         size_t n_prior,
                         size_t n_bins,
                         const size_t *grid,
                         size_t grid_dim,
                         uint64_t seed,
                         struct ScpSolution **out);

/**
 * # Safety
 * `solution` must come from [`scp_solve`] or be null.
 */
void scp_solution_free(struct ScpSolution *solution);

/**
 * Number of grid cells, or 0 for a null handle.
 *
 * # Safety
 * `solution` must be a live handle or null.
 */
size_t scp_solution_n_cells(const struct ScpSolution *solution);

/**
 * Observed mass that could not be assigned to any cell.
 *
 * # Safety
 * `solution` must be a live handle; `out` writable.
 */
enum ScpStatus scp_solution_unassigned_mass(const struct ScpSolution *solution, double *out);

/**
 * Row-major cell masses (last axis fastest).
 *
 * # Safety
 * `out` must hold `capacity` doubles.
 */
enum ScpStatus scp_solution_cell_masses(const struct ScpSolution *solution,
                                        double *out,
                                        size_t capacity,
                                        size_t *required);

/**
 * Draws `count` points from the solution (row-major).
 *
 * # Safety
 * `out` must hold `capacity` doubles.
 */
enum ScpStatus scp_solution_sample(const struct ScpSolution *solution,
                                   size_t count,
                                   uint64_t seed,
                                   double *out,
                                   size_t capacity,
                                   size_t *required);

/**
 * Total-variation distance between two mass vectors of length `n`.
 *
 * # Safety
 * `a` and `b` must hold `n` doubles; `out` writable.
 */
enum ScpStatus scp_tv_distance(const double *a, const double *b, size_t n, double *out);

/**
 * Runs an experiment config (`kind`: solve, stability, local_limit, weak,
 * audit or concrete) and writes its artifacts into `out_dir`.
 *
 * # Safety
 * All arguments must be NUL-terminated strings.
 */
enum ScpStatus scp_run_experiment(const char *config_path, const char *kind, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCP_H */
