#ifndef SOUNDSCAPE_H
#define SOUNDSCAPE_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_ARGUMENT = 1,
  SS_STATUS_INVALID_UTF8 = 2,
  SS_STATUS_SCENARIO = 3,
  SS_STATUS_SIMULATION = 4,
  SS_STATUS_DECODE = 5,
  SS_STATUS_ENCODE = 6,
  SS_STATUS_BUFFER_TOO_SMALL = 7,
  SS_STATUS_UNKNOWN_ZONE = 8,
  SS_STATUS_CONSUMED = 9,
  SS_STATUS_PANIC = 99,
} SsStatus;

typedef struct SsScenario SsScenario;

typedef struct SsSimulation SsSimulation;

typedef struct SsTrace SsTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after success.
// Valid until the next call on this thread.
const char *ss_last_error(void);

// Library version, static storage.
const char *ss_version(void);

// # Safety
// `s` must come from this library and not have been freed.
void ss_string_free(char *s);

// Parse and resolve a scenario from TOML text. `base_dir` (may be null)
// anchors relative fixture paths.
//
// # Safety
// `toml` and `base_dir` must be NUL-terminated or null; `out` must be writable.
enum SsStatus ss_scenario_parse(const char *toml, const char *base_dir, struct SsScenario **out);

// Virtual window `[start, end)` in milliseconds.
//
// # Safety
// `scenario` must be a live handle; out-pointers must be writable.
enum SsStatus ss_scenario_window(const struct SsScenario *scenario,
                                 int64_t *start_ms,
                                 int64_t *end_ms);

// # Safety
// `scenario` must come from [`ss_scenario_parse`] and not have been freed.
void ss_scenario_free(struct SsScenario *scenario);

// Start a step-wise simulation. The scenario stays owned by the caller.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum SsStatus ss_sim_new(const struct SsScenario *scenario, struct SsSimulation **out);

// Advance one virtual second. `more` is false once the window is done.
//
// # Safety
// `sim` must be a live handle; `more` must be writable.
enum SsStatus ss_sim_step(struct SsSimulation *sim, bool *more);

// # Safety
// `sim` must be a live handle; `now_ms` must be writable.
enum SsStatus ss_sim_now(struct SsSimulation *sim, int64_t *now_ms);

// Latest modelled level of a zone and how many voices make it up.
//
// # Safety
// `sim` must be a live handle, `zone` NUL-terminated, out-pointers writable.
enum SsStatus ss_sim_zone_level(struct SsSimulation *sim,
                                const char *zone,
                                double *level_dba,
                                size_t *voices);

// Close the simulation into a trace. The handle must still be freed.
//
// # Safety
// `sim` must be a live handle; `out` must be writable.
enum SsStatus ss_sim_finish(struct SsSimulation *sim, struct SsTrace **out);

// # Safety
// `sim` must come from [`ss_sim_new`] and not have been freed.
void ss_sim_free(struct SsSimulation *sim);

// Run the whole scenario as fast as possible.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum SsStatus ss_run(const struct SsScenario *scenario, struct SsTrace **out);

// Trace in its text form; free with [`ss_string_free`].
//
// # Safety
// `trace` must be a live handle; `out` must be writable.
enum SsStatus ss_trace_render(const struct SsTrace *trace, char **out);

// Parse a trace from its text form.
//
// # Safety
// `text` must be NUL-terminated; `out` must be writable.
enum SsStatus ss_trace_parse(const char *text, struct SsTrace **out);

// Check a trace against its scenario. `passed` reports the verdict; the
// optional `report_json` receives the full report.
//
// # Safety
// Handles must be live; `passed` writable; `report_json` writable or null.
enum SsStatus ss_trace_check(const struct SsTrace *trace,
                             const struct SsScenario *scenario,
                             bool *passed,
                             char **report_json);

// Compare onsets of two traces. `equivalent` is true when every onset
// matches within `tolerance_ms`; the optional `detail` says how close.
//
// # Safety
// Handles must be live; `equivalent` writable; `detail` writable or null.
enum SsStatus ss_trace_equivalent(const struct SsTrace *reference,
                                  const struct SsTrace *other,
                                  int64_t tolerance_ms,
                                  bool *equivalent,
                                  char **detail);

// # Safety
// `trace` must come from this library and not have been freed.
void ss_trace_free(struct SsTrace *trace);

// Decode a control datagram and write its canonical encoding into `buf`.
// `written` receives the length, or the needed size on
// `SS_STATUS_BUFFER_TOO_SMALL`.
//
// # Safety
// `bytes` must point to `len` readable bytes, `buf` to `cap` writable bytes
// (or be null with `cap` 0), `written` must be writable.
enum SsStatus ss_wire_canonicalize(const uint8_t *bytes,
                                   size_t len,
                                   uint8_t *buf,
                                   size_t cap,
                                   size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOUNDSCAPE_H */
