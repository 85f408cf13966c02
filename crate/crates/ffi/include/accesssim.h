#ifndef ACCESSSIM_H
#define ACCESSSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum AsimStatus {
  ASIM_STATUS_OK = 0,
  ASIM_STATUS_NULL_POINTER = 1,
  ASIM_STATUS_INVALID_UTF8 = 2,
  ASIM_STATUS_CONFIG_ERROR = 3,
  ASIM_STATUS_RUNTIME_ERROR = 4,
  ASIM_STATUS_OUT_OF_RANGE = 5,
  ASIM_STATUS_BUFFER_TOO_SMALL = 6,
  ASIM_STATUS_FRAME_ERROR = 7,
  ASIM_STATUS_PANIC = 8,
} AsimStatus;

// The outcome of one simulation run.
typedef struct AsimReport AsimReport;

// A parsed, validated scenario.
typedef struct AsimScenario AsimScenario;

// One subscriber's row of the report.
typedef struct AsimRow {
  uint16_t subscriber;
  // 1 for a shared-plan member, 0 for legacy.
  uint8_t shared;
  uint64_t offered_bytes;
  uint64_t delivered_bytes;
  uint64_t dropped_bytes;
  double goodput_bps;
  double mean_delay_ns;
  uint64_t p95_delay_ns;
  uint64_t p99_delay_ns;
  double drop_ratio;
} AsimRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The message attached to the last failing call on this thread, or an
// empty string. Valid until the next call on the same thread.
const char *asim_last_error(void);

// Library version as a static string.
const char *asim_version(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void asim_string_free(char *s);

// Parses and validates a scenario in the `key = value` configuration format.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum AsimStatus asim_scenario_parse(const char *text, struct AsimScenario **out);

// # Safety
// `scenario` must be null or a live handle; it is invalid afterwards.
void asim_scenario_free(struct AsimScenario *scenario);

// # Safety
// `scenario` must be a live handle.
enum AsimStatus asim_scenario_set_seed(struct AsimScenario *scenario, uint64_t seed);

// # Safety
// `scenario` must be a live handle.
enum AsimStatus asim_scenario_set_duration_ns(struct AsimScenario *scenario, uint64_t duration_ns);

// A copy of `scenario` in which every shared member runs as a legacy
// subscriber and no group exists.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum AsimStatus asim_scenario_legacy_reference(const struct AsimScenario *scenario,
                                               struct AsimScenario **out);

// The canonical text form of `scenario`, or null on a null handle.
//
// # Safety
// `scenario` must be null or a live handle.
char *asim_scenario_dump(const struct AsimScenario *scenario);

// Builds the topology and simulates it to the configured duration.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum AsimStatus asim_run(const struct AsimScenario *scenario, struct AsimReport **out);

// # Safety
// `report` must be null or a live handle; it is invalid afterwards.
void asim_report_free(struct AsimReport *report);

// Number of subscriber rows, 0 on a null handle.
//
// # Safety
// `report` must be null or a live handle.
size_t asim_report_row_count(const struct AsimReport *report);

// Row `index`, in ascending subscriber order.
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum AsimStatus asim_report_row(const struct AsimReport *report, size_t index, struct AsimRow *out);

// Simulated end time of the run in nanoseconds, 0 on a null handle.
//
// # Safety
// `report` must be null or a live handle.
uint64_t asim_report_end_ns(const struct AsimReport *report);

// Writes 1 to `out` if every shaper stayed within its envelope.
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum AsimStatus asim_report_all_conformant(const struct AsimReport *report, uint8_t *out);

// Writes 1 to `out` if every shared member of `run` achieved at least
// 98% of its goodput in `reference`.
//
// # Safety
// Both handles must be live; `out` must be writable.
enum AsimStatus asim_report_no_disadvantage(const struct AsimReport *run,
                                            const struct AsimReport *reference,
                                            uint8_t *out);

// Per-subscriber report as CSV with a header line.
//
// # Safety
// `report` must be null or a live handle.
char *asim_report_csv(const struct AsimReport *report);

// Per-shaper conformance verdicts as CSV with a header line.
//
// # Safety
// `report` must be null or a live handle.
char *asim_report_verdicts_csv(const struct AsimReport *report);

// Run summary, one `key value` pair per line.
//
// # Safety
// `report` must be null or a live handle.
char *asim_report_summary(const struct AsimReport *report);

// Encodes an Ethernet frame with FCS. `vids` lists tags in push order:
// the first becomes the C-TAG, later ones S-TAGs. The payload is padded
// to the minimum frame size.
//
// # Safety
// `dst` and `src` point to 6 bytes, `vids` to `n_vids` values, `payload`
// to `payload_len` bytes, `buf` to `cap` writable bytes, `written` is
// writable. `vids` and `payload` may be null when their length is 0.
enum AsimStatus asim_frame_encode(const uint8_t *dst,
                                  const uint8_t *src,
                                  uint16_t ethertype,
                                  const uint16_t *vids,
                                  size_t n_vids,
                                  const uint8_t *payload,
                                  size_t payload_len,
                                  uint8_t *buf,
                                  size_t cap,
                                  size_t *written);

// Validates a serialized frame and reports its tag depth and outermost
// VID (0 when untagged).
//
// # Safety
// `bytes` points to `len` bytes; `vid` and `depth` are writable.
enum AsimStatus asim_frame_outer_vid(const uint8_t *bytes,
                                     size_t len,
                                     uint16_t *vid,
                                     size_t *depth);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACCESSSIM_H */
