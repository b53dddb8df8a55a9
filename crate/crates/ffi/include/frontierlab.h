#ifndef FRONTIERLAB_H
#define FRONTIERLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlStatus {
  FL_STATUS_OK = 0,
  FL_STATUS_NULL_POINTER = 1,
  FL_STATUS_INVALID_ARGUMENT = 2,
  FL_STATUS_NUMERICAL = 3,
  FL_STATUS_IO = 4,
  FL_STATUS_FORMAT = 5,
  FL_STATUS_PANIC = 6,
} FlStatus;

// A named market preset with its time grid and initial wealth.
typedef struct FlMarket FlMarket;

// Trained network parameters.
typedef struct FlNetwork FlNetwork;

// Message of the last failure on this thread; empty if none. The pointer is
// valid until the next failing call on the same thread.
const char *fl_last_error(void);

// Reads a `.net` file written by the `frontier` command.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum FlStatus fl_network_load(const char *path, struct FlNetwork **out);

// # Safety
// `net` must come from `fl_network_load` and not have been freed.
void fl_network_free(struct FlNetwork *net);

// # Safety
// `net` must be a live handle; the out pointers must be writable.
enum FlStatus fl_network_shape(const struct FlNetwork *net,
                               size_t *n_inputs,
                               size_t *n_outputs,
                               size_t *n_params);

// Evaluates the network on `batch` samples. `inputs` holds `batch` rows of
// `n_inputs` values; `outputs` receives `batch` rows of `n_outputs`.
//
// # Safety
// `inputs` and `outputs` must hold `batch * n_inputs` and
// `batch * n_outputs` doubles.
enum FlStatus fl_network_forward(const struct FlNetwork *net,
                                 const double *inputs,
                                 size_t batch,
                                 double *outputs);

// Looks up a market preset by name, e.g. `"bs4-continuous"` or `"heston4"`.
//
// # Safety
// `name` must be NUL-terminated and `out` writable.
enum FlStatus fl_market_preset(const char *name, struct FlMarket **out);

// # Safety
// `market` must come from `fl_market_preset` and not have been freed.
void fl_market_free(struct FlMarket *market);

// # Safety
// `market` must be a live handle and `out` writable.
enum FlStatus fl_market_n_assets(const struct FlMarket *market, size_t *out);

// Exact mean and variance of the continuously rebalanced optimal wealth.
//
// # Safety
// `market` must be a live handle; `mean` and `variance` writable.
enum FlStatus fl_analytic_closed_form(const struct FlMarket *market,
                                      double beta,
                                      double *mean,
                                      double *variance);

// Monte Carlo mean and variance (with standard errors) of the optimal
// control applied on the preset's grid.
//
// # Safety
// `market` must be a live handle; the four out pointers writable.
enum FlStatus fl_analytic_point(const struct FlMarket *market,
                                double beta,
                                size_t n_sims,
                                uint64_t seed,
                                double *mean,
                                double *variance,
                                double *se_mean,
                                double *se_variance);

// Moves `w` onto `Σ = 1` inside `[lo, hi]`, adjusting coordinates in
// `order` (NULL for `0, 1, …, d-1`).
//
// # Safety
// `w`, `lo`, `hi` and `out` must hold `d` doubles; `order`, if not NULL,
// `d` indices.
enum FlStatus fl_project_to_budget(const double *w,
                                   const double *lo,
                                   const double *hi,
                                   const size_t *order,
                                   size_t d,
                                   double *out);

// Empirical CVaR at level `alpha` of the loss `x0 - x` over `n` samples.
//
// # Safety
// `x` must hold `n` doubles and `out` be writable.
enum FlStatus fl_cvar_empirical(const double *x, size_t n, double alpha, double x0, double *out);

// Runs the sweep described by a TOML config file and writes its outputs,
// as the `frontier` command does. `out_dir` may be NULL to keep the
// config's directory.
//
// # Safety
// `config_path` and, if not NULL, `out_dir` must be NUL-terminated.
enum FlStatus fl_run_frontier(const char *config_path, const char *out_dir);

#endif  /* FRONTIERLAB_H */
