#ifndef ADMIT_H
#define ADMIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdmitStatus {
  ADMIT_STATUS_OK = 0,
  ADMIT_STATUS_NULL_ARGUMENT = 1,
  ADMIT_STATUS_INVALID_UTF8 = 2,
  ADMIT_STATUS_PARSE_ERROR = 3,
  ADMIT_STATUS_MODEL_ERROR = 4,
  ADMIT_STATUS_PANIC = 5,
} AdmitStatus;

typedef enum AdmitModel {
  ADMIT_MODEL_BUSY_WINDOW = 0,
  ADMIT_MODEL_SINGLE_BLOCKING = 1,
} AdmitModel;

/**
 * Opaque session handle.
 */
typedef struct AdmitSession AdmitSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a session from a service repository text and a platform text. On
 * success `*out` receives a handle to release with
 * [`admit_session_free`].
 *
 * # Safety
 * String arguments are valid NUL-terminated strings; `out` is writable.
 */
enum AdmitStatus admit_session_new(const char *services,
                                   const char *platform,
                                   struct AdmitSession **out);

/**
 * # Safety
 * `s` is null or a live session handle; it must not be used afterwards.
 */
void admit_session_free(struct AdmitSession *s);

/**
 * Add a contract to the deployed software model.
 *
 * # Safety
 * `s` is a live session; `contract` a valid NUL-terminated string.
 */
enum AdmitStatus admit_session_add_contract(struct AdmitSession *s, const char *contract);

/**
 * Set the running configuration from its text form.
 *
 * # Safety
 * `s` is a live session; `config` a valid NUL-terminated string.
 */
enum AdmitStatus admit_session_set_config(struct AdmitSession *s, const char *config);

/**
 * Queue a request to add a new component.
 *
 * # Safety
 * `s` is a live session; `contract` a valid NUL-terminated string.
 */
enum AdmitStatus admit_session_request_add(struct AdmitSession *s, const char *contract);

/**
 * Queue a request to replace a component's contract.
 *
 * # Safety
 * `s` is a live session; `contract` a valid NUL-terminated string.
 */
enum AdmitStatus admit_session_request_update(struct AdmitSession *s, const char *contract);

/**
 * Queue a request to remove a component.
 *
 * # Safety
 * `s` is a live session; `component` a valid NUL-terminated string.
 */
enum AdmitStatus admit_session_request_remove(struct AdmitSession *s, const char *component);

/**
 * Drop all queued requests.
 *
 * # Safety
 * `s` is a live session.
 */
enum AdmitStatus admit_session_clear_requests(struct AdmitSession *s);

/**
 * Negotiate the queued requests. `*accepted` is set to whether a feasible
 * configuration was found; the answer and trace texts are then available.
 * The session's model and configuration are left untouched.
 *
 * # Safety
 * `s` is a live session; `accepted` is writable.
 */
enum AdmitStatus admit_session_negotiate(struct AdmitSession *s,
                                         enum AdmitModel model,
                                         bool *accepted);

/**
 * Text of the last answer; empty before the first negotiation.
 *
 * # Safety
 * `s` is null or a live session.
 */
const char *admit_session_answer(const struct AdmitSession *s);

/**
 * Trace of the last negotiation; empty before the first negotiation.
 *
 * # Safety
 * `s` is null or a live session.
 */
const char *admit_session_trace(const struct AdmitSession *s);

/**
 * Message of the last failed call on this thread, or null.
 */
const char *admit_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADMIT_H */
