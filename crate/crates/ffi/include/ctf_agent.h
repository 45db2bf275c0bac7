#ifndef CTF_AGENT_H
#define CTF_AGENT_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtfStatus {
  CTF_OK = 0,
  CTF_ERR_NULL = 1,
  CTF_ERR_UTF8 = 2,
  CTF_ERR_IO = 3,
  CTF_ERR_CONFIG = 4,
  CTF_ERR_FORMAT = 5,
  CTF_ERR_PANIC = 6,
} CtfStatus;

/**
 * A set of trajectories analysed together.
 */
typedef struct CtfCorpus CtfCorpus;

/**
 * A trajectory read from disk.
 */
typedef struct CtfTrajectory CtfTrajectory;

/**
 * Soliloquy verdict for one response.
 */
typedef struct CtfSoliloquy {
  bool is_soliloquy;
  uintptr_t code_block_count;
  uintptr_t marker_count;
} CtfSoliloquy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on the same thread.
 */
const char *ctf_last_error(void);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void ctf_string_free(char *s);

/**
 * # Safety
 * `response` must be a NUL-terminated string; `out` must be writable.
 */
enum CtfStatus ctf_detect_soliloquy(const char *response, struct CtfSoliloquy *out);

/**
 * Extracts the action from a model response. Returns `CTF_ERR_FORMAT`
 * with the format-error observation when there is no code block.
 *
 * # Safety
 * `response` must be a NUL-terminated string; `action_out` must be writable.
 */
enum CtfStatus ctf_parse_action(const char *response, char **action_out);

/**
 * Checks `candidate` against the flag of the challenge in `challenge_dir`.
 *
 * # Safety
 * Pointers must be valid NUL-terminated strings; `correct` must be writable.
 */
enum CtfStatus ctf_verify_flag(const char *challenge_dir, const char *candidate, bool *correct);

/**
 * Runs one episode with default run and sandbox settings. `out_path` may be
 * null; `exit_status_out` receives the exit status name.
 *
 * # Safety
 * String pointers must be valid or, for `out_path`, null.
 */
enum CtfStatus ctf_run_challenge(const char *challenge_dir,
                                 const char *model_config,
                                 const char *out_path,
                                 char **exit_status_out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CtfStatus ctf_trajectory_open(const char *path, struct CtfTrajectory **out);

/**
 * # Safety
 * `t` must come from `ctf_trajectory_open` or be null.
 */
void ctf_trajectory_free(struct CtfTrajectory *t);

/**
 * Number of steps; 0 for null.
 *
 * # Safety
 * `t` must be a live handle or null.
 */
uintptr_t ctf_trajectory_steps(const struct CtfTrajectory *t);

/**
 * Exit status name, or "unfinished" when the footer is missing.
 *
 * # Safety
 * `t` must be a live handle; `out` must be writable.
 */
enum CtfStatus ctf_trajectory_exit_status(const struct CtfTrajectory *t, char **out);

/**
 * Leakage verdict as JSON (`applicable`, `leaked`, `rule`, `evidence`).
 *
 * # Safety
 * `t` must be a live handle; `out` must be writable.
 */
enum CtfStatus ctf_trajectory_leakage_json(const struct CtfTrajectory *t, char **out);

struct CtfCorpus *ctf_corpus_new(void);

/**
 * Copies `t` into the corpus; the trajectory handle stays owned by the caller.
 *
 * # Safety
 * Both handles must be live.
 */
enum CtfStatus ctf_corpus_add(struct CtfCorpus *c, const struct CtfTrajectory *t);

/**
 * Summary report over the corpus as JSON.
 *
 * # Safety
 * `c` must be a live handle; `out` must be writable.
 */
enum CtfStatus ctf_corpus_report_json(const struct CtfCorpus *c, char **out);

/**
 * # Safety
 * `c` must come from `ctf_corpus_new` or be null.
 */
void ctf_corpus_free(struct CtfCorpus *c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTF_AGENT_H */
