#ifndef CRYSTAL_H
#define CRYSTAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CrystalStatus {
  CRYSTAL_STATUS_OK = 0,
  CRYSTAL_STATUS_NULL_ARGUMENT = 1,
  CRYSTAL_STATUS_INVALID_UTF8 = 2,
  CRYSTAL_STATUS_INVALID_JSON = 3,
  CRYSTAL_STATUS_IO = 4,
  CRYSTAL_STATUS_INVALID_GRAPH = 5,
  /*
   The edit was audited but not applied; the result JSON says why.
   */
  CRYSTAL_STATUS_REJECTED = 6,
  CRYSTAL_STATUS_DIALOGUE = 7,
  CRYSTAL_STATUS_INTERNAL = 8,
} CrystalStatus;

/*
 An engine plus the rule set its sessions are gated by.
 */
typedef struct CrystalEngine CrystalEngine;

typedef struct CrystalSession CrystalSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *crystal_version(void);

/*
 Message for the last failed call on this thread, or NULL. Valid until
 the next call into the library from the same thread.
 */
const char *crystal_last_error(void);

/*
 # Safety
 `s` must be NULL or a string previously returned by this library.
 */
void crystal_string_free(char *s);

/*
 Loads a checksummed graph file.

 # Safety
 `path` must be a valid C string and `out` a writable pointer.
 */
enum CrystalStatus crystal_engine_open(const char *path, struct CrystalEngine **out);

/*
 Builds an engine from bare graph JSON with the default configuration.

 # Safety
 `graph_json` must be a valid C string and `out` a writable pointer.
 */
enum CrystalStatus crystal_engine_from_json(const char *graph_json, struct CrystalEngine **out);

/*
 # Safety
 `engine` must be NULL or a handle from this library not yet freed.
 */
void crystal_engine_free(struct CrystalEngine *engine);

/*
 Canonical JSON of the current graph.

 # Safety
 `engine` must be a live handle and `out` a writable pointer.
 */
enum CrystalStatus crystal_engine_graph_json(struct CrystalEngine *engine, char **out);

/*
 # Safety
 `engine` must be a live handle and `path` a valid C string.
 */
enum CrystalStatus crystal_engine_save(struct CrystalEngine *engine, const char *path);

/*
 Replaces the rule set that gates session answers.

 # Safety
 `engine` must be a live handle and `rules_json` a valid C string.
 */
enum CrystalStatus crystal_engine_set_rules(struct CrystalEngine *engine, const char *rules_json);

/*
 Applies one edit (`{"payload": ..., "actor": ...}`) and writes the
 audited result. Returns `Rejected` when the edit was refused; the result
 JSON is written either way.

 # Safety
 `engine` must be a live handle, `edit_json` a valid C string and `out`
 NULL or a writable pointer.
 */
enum CrystalStatus crystal_engine_apply_edit(struct CrystalEngine *engine,
                                             const char *edit_json,
                                             char **out);

/*
 Opens a session over a snapshot of the engine's current graph.

 # Safety
 `engine` must be a live handle, `session_id` a valid C string and `out`
 a writable pointer.
 */
enum CrystalStatus crystal_session_open(struct CrystalEngine *engine,
                                        const char *session_id,
                                        struct CrystalSession **out);

/*
 # Safety
 `session` must be NULL or a handle from this library not yet freed.
 */
void crystal_session_free(struct CrystalSession *session);

/*
 One user turn; writes the system move as JSON.

 # Safety
 Both handles must be live, `utterance` a valid C string and `out` a
 writable pointer.
 */
enum CrystalStatus crystal_session_step(struct CrystalSession *session,
                                        struct CrystalEngine *engine,
                                        const char *utterance,
                                        char **out);

/*
 Current dialogue state as JSON.

 # Safety
 `session` must be a live handle and `out` a writable pointer.
 */
enum CrystalStatus crystal_session_state_json(struct CrystalSession *session, char **out);

/*
 Folds outcome feedback for a closed session into the engine; writes the
 per-edge summary as JSON.

 # Safety
 Both handles must be live, `feedback_json` a valid C string and `out`
 NULL or a writable pointer.
 */
enum CrystalStatus crystal_session_feedback(struct CrystalSession *session,
                                            struct CrystalEngine *engine,
                                            const char *feedback_json,
                                            char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRYSTAL_H */
