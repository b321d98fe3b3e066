#ifndef REMS_H
#define REMS_H

/* Generated by cbindgen. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Which record of a robot a key refers to.
 */
typedef enum RemsSpace {
  REMS_SPACE_INPUT = 0,
  REMS_SPACE_STATE = 1,
  REMS_SPACE_OUTPUT = 2,
} RemsSpace;

typedef enum RemsStatus {
  REMS_STATUS_OK = 0,
  REMS_STATUS_NULL_POINTER = 1,
  REMS_STATUS_INVALID_UTF8 = 2,
  REMS_STATUS_INVALID_ARGUMENT = 3,
  REMS_STATUS_UNKNOWN_KEY = 4,
  REMS_STATUS_RECORD = 5,
  REMS_STATUS_DEFINITION = 6,
  REMS_STATUS_BACKEND = 7,
  REMS_STATUS_BUFFER_TOO_SMALL = 8,
  REMS_STATUS_PANIC = 9,
} RemsStatus;

/**
 * A robot definition composed with an implementation, stepped by the caller.
 */
typedef struct RemsRobot RemsRobot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf`. Returns the
 * message length including the terminator; 0 means no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t rems_last_error(char *buf, size_t len);

/**
 * Convert `value` between two unit names, e.g. `"rad/s"` to `"rpm"`.
 *
 * # Safety
 * `from` and `to` must be NUL-terminated strings; `out` must be writable.
 */
enum RemsStatus rems_convert_unit(double value, const char *from, const char *to, double *out);

/**
 * Create a robot from a built-in definition and an implementation reference
 * (`analytical`, `emulated:<profile>`, `bridge:<url>`), initialized at t = 0.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable. The
 * returned handle is released with [`rems_robot_free`].
 */
enum RemsStatus rems_robot_new(const char *definition,
                               const char *implementation,
                               uint64_t seed,
                               struct RemsRobot **out);

/**
 * Close and release a robot. Null is ignored.
 *
 * # Safety
 * `robot` must come from [`rems_robot_new`] and not be used afterwards.
 */
void rems_robot_free(struct RemsRobot *robot);

/**
 * Set one input key. `unit` may be null to use the schema's unit.
 *
 * # Safety
 * `robot` must be a live handle; strings must be NUL-terminated.
 */
enum RemsStatus rems_robot_set_input(struct RemsRobot *robot,
                                     const char *key,
                                     double value,
                                     const char *unit);

/**
 * Advance the robot by `dt` seconds with the current input.
 *
 * # Safety
 * `robot` must be a live handle.
 */
enum RemsStatus rems_robot_step(struct RemsRobot *robot, double dt);

/**
 * Read one key of the latest input, state or output. `unit` may be null.
 *
 * # Safety
 * `robot` must be a live handle; strings must be NUL-terminated; `out`
 * must be writable.
 */
enum RemsStatus rems_robot_get(const struct RemsRobot *robot,
                               enum RemsSpace space,
                               const char *key,
                               const char *unit,
                               double *out);

/**
 * Simulated time of the latest step.
 *
 * # Safety
 * `robot` must be a live handle; `out` must be writable.
 */
enum RemsStatus rems_robot_time(const struct RemsRobot *robot, double *out);

/**
 * Whether the latest observation was stale.
 *
 * # Safety
 * `robot` must be a live handle; `out` must be writable.
 */
enum RemsStatus rems_robot_is_stale(const struct RemsRobot *robot, bool *out);

/**
 * Number of keys in one record of the robot.
 *
 * # Safety
 * `robot` must be a live handle; `out` must be writable.
 */
enum RemsStatus rems_robot_key_count(const struct RemsRobot *robot,
                                     enum RemsSpace space,
                                     size_t *out);

/**
 * Copy the `index`-th key of a record into `buf`. `needed` (nullable)
 * receives the required size including the terminator.
 *
 * # Safety
 * `robot` must be a live handle; `buf` must be null or point to `len`
 * writable bytes.
 */
enum RemsStatus rems_robot_key_name(const struct RemsRobot *robot,
                                    enum RemsSpace space,
                                    size_t index,
                                    char *buf,
                                    size_t len,
                                    size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REMS_H */
