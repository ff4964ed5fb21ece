#ifndef CMT_H
#define CMT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CmtStatus {
  CMT_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  CMT_STATUS_NULL_POINTER = 1,
  /**
   * Arguments or file contents failed validation.
   */
  CMT_STATUS_INVALID_INPUT = 2,
  /**
   * A file could not be read.
   */
  CMT_STATUS_IO = 3,
  /**
   * The result is undefined for this input (e.g. AUROC with one class).
   */
  CMT_STATUS_UNDEFINED = 4,
  /**
   * A caller-provided buffer is too small.
   */
  CMT_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Internal failure, including caught panics.
   */
  CMT_STATUS_INTERNAL = 6,
} CmtStatus;

/**
 * A trained checkpoint.
 */
typedef struct CmtModel CmtModel;

/**
 * A rollout input directory (`layer_<i>.cmt` plus `sidecar.json`) with
 * its rollout matrix.
 */
typedef struct CmtRollout CmtRollout;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *cmt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cmt_version(void);

/**
 * AUROC of `n` scores against 0/1 labels.
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable elements and `out` to
 * one writable `double`.
 */
enum CmtStatus cmt_auroc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Average precision of `n` scores against 0/1 labels.
 *
 * # Safety
 * As for [`cmt_auroc`].
 */
enum CmtStatus cmt_auprc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Attention rollout over `n_layers` row-major `n×n` matrices stored back
 * to back in `layers`; writes the `n×n` result to `out`.
 *
 * # Safety
 * `layers` must hold `n_layers·n·n` doubles and `out` room for `n·n`.
 */
enum CmtStatus cmt_rollout(const double *layers, size_t n_layers, size_t n, double *out);

/**
 * Reads a rollout directory and computes its rollout.
 *
 * # Safety
 * `dir` must be a NUL-terminated path and `out` a writable handle slot.
 */
enum CmtStatus cmt_rollout_load(const char *dir, struct CmtRollout **out);

/**
 * Number of tokens, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle from [`cmt_rollout_load`].
 */
size_t cmt_rollout_size(const struct CmtRollout *h);

/**
 * Copies the `n×n` rollout matrix into `out` (capacity `len`).
 *
 * # Safety
 * `h` must be a live handle and `out` must hold `len` doubles.
 */
enum CmtStatus cmt_rollout_matrix(const struct CmtRollout *h, double *out, size_t len);

/**
 * # Safety
 * `h` must be null or a handle from [`cmt_rollout_load`] not freed before.
 */
void cmt_rollout_free(struct CmtRollout *h);

/**
 * Loads a checkpoint directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated path and `out` a writable handle slot.
 */
enum CmtStatus cmt_model_load(const char *dir, struct CmtModel **out);

/**
 * Logits per hour, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle from [`cmt_model_load`].
 */
size_t cmt_model_n_outputs(const struct CmtModel *h);

/**
 * EHR width the model expects, or 0 for a null handle.
 *
 * # Safety
 * As for [`cmt_model_n_outputs`].
 */
size_t cmt_model_d_ehr(const struct CmtModel *h);

/**
 * Note row width (embedding plus time feature), or 0 for a null handle.
 *
 * # Safety
 * As for [`cmt_model_n_outputs`].
 */
size_t cmt_model_d_cn(const struct CmtModel *h);

/**
 * Runs the model with dropout off on already scaled inputs.
 *
 * `ehr` is `hours×d_ehr` row-major, `notes` is `n_notes×d_cn` (visible
 * notes only) with entry hours `note_times`. Writes `hours×n_outputs`
 * logits into `out` (capacity `len`).
 *
 * # Safety
 * Pointers must reference buffers of the stated sizes; `notes` and
 * `note_times` may be null when `n_notes` is 0.
 */
enum CmtStatus cmt_model_predict(const struct CmtModel *h,
                                 const float *ehr,
                                 size_t hours,
                                 const float *notes,
                                 const double *note_times,
                                 size_t n_notes,
                                 float *out,
                                 size_t len);

/**
 * # Safety
 * `h` must be null or a handle from [`cmt_model_load`] not freed before.
 */
void cmt_model_free(struct CmtModel *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CMT_H */
