#ifndef TIVASIM_H
#define TIVASIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Bit flags for selecting controllers in a Monte-Carlo run.
#define TIVA_PID 1

#define TIVA_NMPC 2

#define TIVA_MMPC 4

typedef enum TivaStatus {
  TIVA_STATUS_OK = 0,
  TIVA_STATUS_NULL_POINTER = 1,
  TIVA_STATUS_INVALID_ARGUMENT = 2,
  TIVA_STATUS_PARAMETER_DOMAIN = 3,
  TIVA_STATUS_CONFIG = 4,
  TIVA_STATUS_NUMERICAL = 5,
  TIVA_STATUS_IO = 6,
  TIVA_STATUS_PANIC = 7,
} TivaStatus;

typedef enum TivaController {
  TIVA_CONTROLLER_PID = 0,
  TIVA_CONTROLLER_NMPC = 1,
  TIVA_CONTROLLER_MMPC = 2,
} TivaController;

// Per-sample trace columns.
typedef enum TivaColumn {
  TIVA_COLUMN_TIME_S = 0,
  TIVA_COLUMN_BIS_TRUE = 1,
  TIVA_COLUMN_BIS_MEASURED = 2,
  TIVA_COLUMN_Y_REF = 3,
  TIVA_COLUMN_PROPOFOL_MG_S = 4,
  TIVA_COLUMN_REMIFENTANIL_UG_S = 5,
  // Selected model index, -1 when the controller has none.
  TIVA_COLUMN_MODEL_INDEX = 6,
  TIVA_COLUMN_SOLVE_MS = 7,
} TivaColumn;

typedef struct TivaConfig TivaConfig;

typedef struct TivaMonteCarlo TivaMonteCarlo;

typedef struct TivaTrace TivaTrace;

// Induction metrics of one run. Times are in minutes; NaN means the event
// never happened.
typedef struct TivaMetrics {
  double tt_min;
  double bis_nadir;
  double st10_min;
  double st20_min;
  double us;
} TivaMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library from the same thread.
const char *tiva_last_error(void);

// Library version as a static NUL-terminated string.
const char *tiva_version(void);

struct TivaConfig *tiva_config_new_default(void);

// Parses a TOML document; missing keys take their defaults.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a writable pointer.
enum TivaStatus tiva_config_from_toml(const char *toml, struct TivaConfig **out);

// Serializes the configuration as TOML. Free with [`tiva_string_free`].
//
// # Safety
// `config` must come from this library.
char *tiva_config_to_toml(const struct TivaConfig *config);

// Sets the run length in seconds.
//
// # Safety
// `config` must come from this library.
enum TivaStatus tiva_config_set_duration(struct TivaConfig *config, double duration_s);

// Sets the measurement-noise standard deviation (BIS units; 0 disables).
//
// # Safety
// `config` must come from this library.
enum TivaStatus tiva_config_set_noise(struct TivaConfig *config, double noise_std);

// # Safety
// `config` must come from this library and not be used afterwards.
void tiva_config_free(struct TivaConfig *config);

// Simulates patient `patient_index` of the cohort drawn from `seed`.
//
// # Safety
// `config` must come from this library and `out` be writable.
enum TivaStatus tiva_run_patient(const struct TivaConfig *config,
                                 enum TivaController controller,
                                 uint64_t seed,
                                 size_t patient_index,
                                 struct TivaTrace **out);

// Simulates the nominal reference patient.
//
// # Safety
// `config` must come from this library and `out` be writable.
enum TivaStatus tiva_run_nominal(const struct TivaConfig *config,
                                 enum TivaController controller,
                                 struct TivaTrace **out);

// Number of samples in the trace, 0 for null.
//
// # Safety
// `trace` must come from this library.
size_t tiva_trace_len(const struct TivaTrace *trace);

// Copies one column into `buf`, which must hold `tiva_trace_len` values.
//
// # Safety
// `trace` must come from this library; `buf` must point to `len` doubles.
enum TivaStatus tiva_trace_column(const struct TivaTrace *trace,
                                  enum TivaColumn column,
                                  double *buf,
                                  size_t len);

// Induction metrics against a ±5 band around the configured target.
//
// # Safety
// Pointers must come from this library; `out` must be writable.
enum TivaStatus tiva_trace_metrics(const struct TivaTrace *trace,
                                   const struct TivaConfig *config,
                                   struct TivaMetrics *out);

// # Safety
// `trace` must come from this library and not be used afterwards.
void tiva_trace_free(struct TivaTrace *trace);

// Runs `n_patients` under every controller selected in `controllers`
// (`TIVA_PID | TIVA_NMPC | TIVA_MMPC`). `parallelism` 0 means one thread.
//
// # Safety
// `config` must come from this library and `out` be writable.
enum TivaStatus tiva_monte_carlo(const struct TivaConfig *config,
                                 size_t n_patients,
                                 uint32_t controllers,
                                 uint64_t seed,
                                 size_t parallelism,
                                 struct TivaMonteCarlo **out);

// Per-controller summary statistics as JSON. Free with [`tiva_string_free`].
//
// # Safety
// `mc` must come from this library.
char *tiva_monte_carlo_summary_json(const struct TivaMonteCarlo *mc);

// Per-run metrics as CSV. Free with [`tiva_string_free`].
//
// # Safety
// `mc` must come from this library.
char *tiva_monte_carlo_metrics_csv(const struct TivaMonteCarlo *mc);

// Largest MPC solve time over all runs, in milliseconds.
//
// # Safety
// `mc` must come from this library.
double tiva_monte_carlo_max_solve_ms(const struct TivaMonteCarlo *mc);

// # Safety
// `mc` must come from this library and not be used afterwards.
void tiva_monte_carlo_free(struct TivaMonteCarlo *mc);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void tiva_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIVASIM_H */
