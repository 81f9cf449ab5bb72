#ifndef LUMOS_H
#define LUMOS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C ABI.
 */
typedef enum LumosStatus {
  LUMOS_STATUS_OK = 0,
  LUMOS_STATUS_NULL_POINTER = 1,
  LUMOS_STATUS_INVALID_ARGUMENT = 2,
  LUMOS_STATUS_IO = 3,
  LUMOS_STATUS_FORMAT = 4,
  LUMOS_STATUS_SHAPE = 5,
  LUMOS_STATUS_EXECUTION = 6,
  LUMOS_STATUS_PANIC = 7,
} LumosStatus;

/**
 * Opaque compact model.
 */
typedef struct LumosModel LumosModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lumos_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lumos_version(void);

/**
 * Parses a serialized model held in memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` to a writable pointer
 * slot. On success `*out` owns a model to be released with
 * [`lumos_model_free`]; on failure `*out` is set to NULL.
 */
enum LumosStatus lumos_model_from_bytes(const uint8_t *data, size_t len, struct LumosModel **out);

/**
 * Reads and parses a `.lum` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer slot.
 * Ownership rules as for [`lumos_model_from_bytes`].
 */
enum LumosStatus lumos_model_load(const char *path, struct LumosModel **out);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle from this library not yet freed.
 */
void lumos_model_free(struct LumosModel *model);

/**
 * Values per sample of the full (unselected) model input; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lumos_model_input_width(const struct LumosModel *model);

/**
 * Values per sample of the model output; 0 for NULL or empty models.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lumos_model_output_width(const struct LumosModel *model);

/**
 * Weight and bias elements; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lumos_model_param_count(const struct LumosModel *model);

/**
 * Copies the kept input unit indices into `out` (capacity `cap`) and stores
 * their total count in `*count`. With `cap` too small nothing is copied and
 * `LUMOS_STATUS_SHAPE` is returned; `*count` still tells the required size.
 *
 * # Safety
 * `model` must be a live handle, `count` writable, and `out` valid for `cap`
 * writes (may be NULL when `cap` is 0).
 */
enum LumosStatus lumos_model_input_features(const struct LumosModel *model,
                                            size_t *out,
                                            size_t cap,
                                            size_t *count);

/**
 * Runs `rows` samples of full-width input (`rows · input_width` values,
 * row-major) and writes `rows · output_width` values to `output`. Graph
 * models are not supported through this interface.
 *
 * # Safety
 * `input` must be valid for `rows · input_width` reads and `output` for
 * `output_len` writes; `model` must be a live handle.
 */
enum LumosStatus lumos_model_forward(const struct LumosModel *model,
                                     const double *input,
                                     size_t rows,
                                     double *output,
                                     size_t output_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUMOS_H */
