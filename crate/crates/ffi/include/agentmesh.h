#ifndef AGENTMESH_H
#define AGENTMESH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes shared by every fallible call.
 */
typedef enum AmStatus {
  AM_STATUS_OK = 0,
  AM_STATUS_NULL_ARGUMENT = 1,
  AM_STATUS_INVALID_UTF8 = 2,
  AM_STATUS_CONFIG = 3,
  AM_STATUS_SETUP = 4,
  AM_STATUS_INVALID_REQUEST = 5,
  AM_STATUS_OUT_OF_RANGE = 6,
  AM_STATUS_IO = 7,
  AM_STATUS_PANIC = 99,
} AmStatus;

typedef enum AmTaskStatus {
  AM_TASK_STATUS_CLEAN_PASS = 0,
  AM_TASK_STATUS_FIXED = 1,
  AM_TASK_STATUS_NEEDS_ATTENTION = 2,
  AM_TASK_STATUS_SKIPPED = 3,
} AmTaskStatus;

typedef enum AmVerdict {
  AM_VERDICT_APPROVED = 0,
  AM_VERDICT_NEEDS_WORK = 1,
  AM_VERDICT_UNKNOWN = 2,
} AmVerdict;

/*
 Opaque run configuration.
 */
typedef struct AmConfig AmConfig;

/*
 Opaque result of one run.
 */
typedef struct AmReport AmReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null if none.

 The pointer stays valid until the next failing call on the same thread.
 */
const char *am_last_error_message(void);

/*
 A configuration holding the defaults.
 */
struct AmConfig *am_config_new(void);

/*
 # Safety
 `config` must be null or a pointer from [`am_config_new`] not yet freed.
 */
void am_config_free(struct AmConfig *config);

/*
 Layers a TOML file over `config`.

 # Safety
 `config` must be a live handle; `path` a NUL-terminated string.
 */
enum AmStatus am_config_load_file(struct AmConfig *config, const char *path);

/*
 Sets one key using the same names and syntax as the config file.

 # Safety
 `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum AmStatus am_config_set(struct AmConfig *config, const char *key, const char *value);

/*
 Runs the whole pipeline for `request`.

 On [`AmStatus::Ok`], `*out_report` receives a report even if the run
 aborted part way; inspect [`am_report_exit_code`]. Any other status means
 no model call was made and `*out_report` is set to null.

 # Safety
 `config` must be a live handle, `request` a NUL-terminated string and
 `out_report` writable.
 */
enum AmStatus am_run(const struct AmConfig *config,
                     const char *request,
                     struct AmReport **out_report);

/*
 # Safety
 `report` must be null or a pointer from [`am_run`] not yet freed.
 */
void am_report_free(struct AmReport *report);

/*
 Process exit code the CLI would use: 0, 1 or 2. Returns -1 for null.

 # Safety
 `report` must be null or a live handle.
 */
int32_t am_report_exit_code(const struct AmReport *report);

/*
 # Safety
 `report` must be null or a live handle.
 */
enum AmVerdict am_report_verdict(const struct AmReport *report);

/*
 Number of planned tasks; 0 when planning never finished.

 # Safety
 `report` must be null or a live handle.
 */
size_t am_report_task_count(const struct AmReport *report);

/*
 Status of the task at zero-based `index`.

 # Safety
 `report` must be a live handle and `out_status` writable.
 */
enum AmStatus am_report_task_status(const struct AmReport *report,
                                    size_t index,
                                    enum AmTaskStatus *out_status);

/*
 Writes source files, plan, review, transcript and report into `out_dir`.

 # Safety
 `report` must be a live handle; `out_dir` a NUL-terminated string.
 */
enum AmStatus am_report_write_outputs(const struct AmReport *report, const char *out_dir);

/*
 The run summary as JSON (the same document as `report.json`), or null.

 # Safety
 `report` must be null or a live handle. Free the result with
 [`am_string_free`].
 */
char *am_report_to_json(const struct AmReport *report);

/*
 Parses planner output into a JSON array of `{index, title, detail}`.

 Returns null when the text is not a valid plan; the reason is available
 from [`am_last_error_message`].

 # Safety
 `text` must be null or a NUL-terminated string. Free the result with
 [`am_string_free`].
 */
char *am_parse_plan_json(const char *text);

/*
 # Safety
 `s` must be null or a string returned by this library, not yet freed.
 */
void am_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGENTMESH_H */
