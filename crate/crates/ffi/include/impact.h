#ifndef IMPACT_H
#define IMPACT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ImpactStatus {
  IMPACT_STATUS_OK = 0,
  IMPACT_STATUS_NULL_POINTER = 1,
  IMPACT_STATUS_INVALID_UTF8 = 2,
  IMPACT_STATUS_PARSE = 3,
  IMPACT_STATUS_INVALID_ARGUMENT = 4,
  IMPACT_STATUS_NOT_FOUND = 5,
  IMPACT_STATUS_ACCOUNTING = 6,
  IMPACT_STATUS_PANIC = 7,
} ImpactStatus;

typedef enum ImpactMethod {
  IMPACT_METHOD_RUNTIME = 0,
  IMPACT_METHOD_ENERGY = 1,
  IMPACT_METHOD_PEAK = 2,
  IMPACT_METHOD_EBA = 3,
  IMPACT_METHOD_CBA = 4,
} ImpactMethod;

/**
 * Opaque collection of per-region carbon-intensity series.
 */
typedef struct ImpactIntensity ImpactIntensity;

/**
 * Opaque set of machines.
 */
typedef struct ImpactMachineSet ImpactMachineSet;

typedef struct ImpactParams {
  double beta;
  double annual_rate;
  /**
   * Use the mean intensity over the run instead of the value at start.
   */
  bool integrated;
} ImpactParams;

/**
 * One run of a job on one machine.
 */
typedef struct ImpactExecution {
  double duration_s;
  double energy_j;
  uint32_t cores_used;
  /**
   * Epoch seconds.
   */
  double start_time;
} ImpactExecution;

/**
 * Price plus its two components. For EBA the parts are the measured and
 * potential halves; for CBA, operational and embodied grams. Other methods
 * leave both parts at zero.
 */
typedef struct ImpactQuote {
  double amount;
  double part_a;
  double part_b;
} ImpactQuote;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * NUL-terminated) and returns the full message length in bytes, excluding
 * the terminator. `buf` may be null when `len` is 0.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t impact_last_error_message(char *buf, size_t len);

/**
 * Parses a machine fixture (TOML text).
 *
 * # Safety
 * `toml` must be a valid C string and `out` a valid pointer.
 */
enum ImpactStatus impact_machines_parse(const char *toml, struct ImpactMachineSet **out);

/**
 * Loads a machine fixture from a file.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum ImpactStatus impact_machines_load(const char *path, struct ImpactMachineSet **out);

/**
 * Number of machines in the set, or 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t impact_machines_count(const struct ImpactMachineSet *set);

/**
 * # Safety
 * `set` must be null or a handle not yet freed.
 */
void impact_machines_free(struct ImpactMachineSet *set);

/**
 * Creates an empty intensity collection.
 */
struct ImpactIntensity *impact_intensity_new(void);

/**
 * Adds a series loaded from an hourly intensity file, replacing any series
 * for the same region.
 *
 * # Safety
 * `book` must be a live handle and `path` a valid C string.
 */
enum ImpactStatus impact_intensity_load(struct ImpactIntensity *book, const char *path);

/**
 * Adds a flat series of `hours` hourly values starting at `start` (epoch
 * seconds, hour aligned).
 *
 * # Safety
 * `book` must be a live handle and `region` a valid C string.
 */
enum ImpactStatus impact_intensity_add_constant(struct ImpactIntensity *book,
                                                const char *region,
                                                int64_t start,
                                                size_t hours,
                                                double g_per_kwh);

/**
 * # Safety
 * `book` must be null or a handle not yet freed.
 */
void impact_intensity_free(struct ImpactIntensity *book);

/**
 * Default parameters: beta 1, annual rate 0.4, intensity at start.
 */
struct ImpactParams impact_params_default(void);

/**
 * Prices one execution on `machine_id` under `method`. `intensity` may be
 * null except for CBA; `params` may be null for the defaults.
 *
 * # Safety
 * Pointers must be null where allowed or valid otherwise.
 */
enum ImpactStatus impact_quote(const struct ImpactMachineSet *machines,
                               const char *machine_id,
                               enum ImpactMethod method,
                               const struct ImpactExecution *exec,
                               const struct ImpactIntensity *intensity,
                               const struct ImpactParams *params,
                               struct ImpactQuote *out);

/**
 * Whole-machine embodied carbon attributed per hour (g/h) during
 * machine-year `age` under accelerated depreciation.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ImpactStatus impact_hourly_carbon_rate(double total_embodied_g,
                                            double annual_rate,
                                            int64_t age,
                                            double *out);

/**
 * Same as [`impact_hourly_carbon_rate`] for straight-line depreciation.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ImpactStatus impact_linear_hourly_carbon_rate(double total_embodied_g,
                                                   uint32_t lifetime_years,
                                                   int64_t age,
                                                   double *out);

/**
 * Accelerated-to-linear rate ratio at `age`.
 */
double impact_accelerated_to_linear_ratio(double annual_rate, uint32_t lifetime_years, int32_t age);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMPACT_H */
