#ifndef MSDG_H
#define MSDG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum MsdgStatus {
  MSDG_STATUS_OK = 0,
  MSDG_STATUS_NULL_POINTER = 1,
  MSDG_STATUS_INVALID_UTF8 = 2,
  MSDG_STATUS_INVALID_ARGUMENT = 3,
  MSDG_STATUS_FORMAT = 4,
  MSDG_STATUS_CONFIG = 5,
  MSDG_STATUS_DOMAIN = 6,
  MSDG_STATUS_NUMERICAL = 7,
  MSDG_STATUS_VERIFICATION = 8,
  MSDG_STATUS_IO = 9,
  MSDG_STATUS_OUT_OF_RANGE = 10,
  MSDG_STATUS_PANIC = 11,
} MsdgStatus;

/*
 Parsed run configuration.
 */
typedef struct MsdgConfig MsdgConfig;

/*
 A finished run with everything needed to write its artifacts.
 */
typedef struct MsdgRun MsdgRun;

/*
 One history row. Values that were not computed are NaN.
 */
typedef struct MsdgHistoryRecord {
  size_t iteration;
  size_t sub_iteration;
  size_t dof;
  double e_a;
  double e_2;
  double sum_residual_sq;
  double eta_sq;
  double theta;
  double contraction_ratio;
  double wall_ms;
} MsdgHistoryRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Parses a configuration file. On success `*out` owns a new handle.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsdgStatus msdg_config_from_file(const char *path, struct MsdgConfig **out);

/*
 Parses configuration text.

 # Safety
 `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsdgStatus msdg_config_from_str(const char *text, struct MsdgConfig **out);

/*
 Replaces the seed.

 # Safety
 `config` must be a handle from this library or null.
 */
enum MsdgStatus msdg_config_set_seed(struct MsdgConfig *config, uint64_t seed);

/*
 # Safety
 `config` must be a handle from this library or null; it is invalid afterwards.
 */
void msdg_config_free(struct MsdgConfig *config);

/*
 Runs the solver. With `verify` nonzero the certified bound is computed
 and checked; a failed check still produces a run handle and returns
 `MSDG_STATUS_VERIFICATION`.

 # Safety
 `config` must be a live handle and `out` a valid pointer.
 */
enum MsdgStatus msdg_run(const struct MsdgConfig *config, bool verify, struct MsdgRun **out);

/*
 Number of history rows, 0 for a null handle.

 # Safety
 `run` must be a live handle or null.
 */
size_t msdg_run_history_len(const struct MsdgRun *run);

/*
 Copies history row `index` into `*record`.

 # Safety
 `run` must be a live handle and `record` a valid pointer.
 */
enum MsdgStatus msdg_run_record(const struct MsdgRun *run,
                                size_t index,
                                struct MsdgHistoryRecord *record);

/*
 Number of failed verification checks (0 when not verified or all passed).

 # Safety
 `run` must be a live handle or null.
 */
size_t msdg_run_verification_failures(const struct MsdgRun *run);

/*
 Writes `history.csv`, `summary.txt` and the configured extras into `dir`.

 # Safety
 `run` must be a live handle and `dir` a NUL-terminated string.
 */
enum MsdgStatus msdg_run_write_outputs(const struct MsdgRun *run, const char *dir);

/*
 # Safety
 `run` must be a handle from this library or null; it is invalid afterwards.
 */
void msdg_run_free(struct MsdgRun *run);

/*
 Message of the last failed call on this thread, empty after a success.
 Valid until the next call into the library from the same thread.
 */
const char *msdg_last_error_message(void);

/*
 Library version, a static string.
 */
const char *msdg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSDG_H */
