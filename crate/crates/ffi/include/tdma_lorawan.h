#ifndef TDMA_LORAWAN_H
#define TDMA_LORAWAN_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_POINTER = 1,
  TL_STATUS_INVALID_ARGUMENT = 2,
  TL_STATUS_CONFIG = 3,
  TL_STATUS_SATURATED = 4,
  TL_STATUS_RUNTIME = 5,
  TL_STATUS_IO = 6,
  TL_STATUS_PANIC = 7,
} TlStatus;

/**
 * Opaque scenario configuration.
 */
typedef struct TlConfig TlConfig;

/**
 * Opaque result of one simulation run.
 */
typedef struct TlReport TlReport;

/**
 * Opaque slot scheduler over a channel × slot grid whose first cell is
 * reserved for access.
 */
typedef struct TlScheduler TlScheduler;

typedef struct TlSummary {
  uint64_t nodes;
  uint64_t seed;
  uint64_t sent;
  uint64_t delivered;
  uint64_t lost_collision;
  uint64_t lost_below_sensitivity;
  uint64_t dropped;
  uint64_t sync_events;
  double pdr;
  double pdr_ci95;
  double throughput_kbps;
  double utilization;
  /**
   * Infinite when nothing was delivered.
   */
  double energy_mj_per_success;
  double total_energy_mj;
  /**
   * Nonzero when some device never obtained a resource block.
   */
  uint8_t infeasible;
} TlSummary;

typedef struct TlAllocation {
  uint32_t channel;
  uint32_t first_slot;
  uint32_t n_slots;
  uint8_t is_reuse;
} TlAllocation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *tl_last_error(void);

/**
 * Airtime in ms of `payload_bytes` with explicit header, CRC on and
 * automatic low-data-rate optimisation.
 *
 * # Safety
 * `out_ms` must be null or point to writable memory for one `double`.
 */
enum TlStatus tl_time_on_air_ms(uint8_t sf,
                                uint32_t bw_hz,
                                uint8_t cr,
                                uint16_t preamble,
                                size_t payload_bytes,
                                double *out_ms);

/**
 * Smallest guard keeping adjacent slots apart under the given worst-case
 * sync error, drift and hardware jitter, all in ms.
 */
double tl_min_guard_time_ms(double sync_err_max_ms, double drift_max_ms, double hw_max_ms);

/**
 * Downlink control messages per delivered uplink over a session.
 */
double tl_control_overhead_eta(double t_up_s, double t_session_s);

/**
 * A configuration holding every default.
 */
struct TlConfig *tl_config_new(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be null or writable.
 */
enum TlStatus tl_config_load(const char *path, struct TlConfig **out);

/**
 * Sets one key and re-validates; on failure the configuration is unchanged.
 *
 * # Safety
 * `cfg` must come from this library; `key` and `value` must be
 * NUL-terminated strings.
 */
enum TlStatus tl_config_set(struct TlConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must be null or come from this library and not be used afterwards.
 */
void tl_config_free(struct TlConfig *cfg);

/**
 * Runs one seed. An infeasible scenario still succeeds and is flagged in
 * the summary.
 *
 * # Safety
 * `cfg` must come from this library; `out` must be null or writable.
 */
enum TlStatus tl_run(const struct TlConfig *cfg, uint64_t seed, struct TlReport **out);

/**
 * # Safety
 * `report` must come from this library; `out` must be null or writable.
 */
enum TlStatus tl_report_summary(const struct TlReport *report, struct TlSummary *out);

/**
 * Header plus the summary row, as a string the caller releases with
 * [`tl_string_free`]. Null on failure.
 *
 * # Safety
 * `report` must be null or come from this library.
 */
char *tl_report_csv(const struct TlReport *report);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void tl_string_free(char *s);

/**
 * # Safety
 * `report` must be null or come from this library and not be used afterwards.
 */
void tl_report_free(struct TlReport *report);

/**
 * Null when the grid is empty.
 */
struct TlScheduler *tl_scheduler_new(size_t channels, size_t slots, double slot_ms, uint8_t reuse);

/**
 * Grants a single-slot block to `dev_id`.
 *
 * # Safety
 * `sched` must come from this library; `out` must be null or writable.
 */
enum TlStatus tl_scheduler_allocate(struct TlScheduler *sched,
                                    uint32_t dev_id,
                                    uint8_t sf,
                                    size_t payload_bytes,
                                    uint8_t priority,
                                    double t_now_ms,
                                    struct TlAllocation *out);

/**
 * Refreshes a device's activity time. Returns 1 if it holds a block.
 *
 * # Safety
 * `sched` must be null or come from this library.
 */
uint8_t tl_scheduler_report(struct TlScheduler *sched, uint32_t dev_id, double t_now_ms);

/**
 * Frees blocks idle for longer than `t_release_ms`; returns how many.
 *
 * # Safety
 * `sched` must be null or come from this library.
 */
size_t tl_scheduler_reclaim(struct TlScheduler *sched, double t_now_ms, double t_release_ms);

/**
 * # Safety
 * `sched` must be null or come from this library and not be used afterwards.
 */
void tl_scheduler_free(struct TlScheduler *sched);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TDMA_LORAWAN_H */
