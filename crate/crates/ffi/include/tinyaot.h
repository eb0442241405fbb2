#ifndef TINYAOT_H
#define TINYAOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of an FFI call.
typedef enum TinyaotStatus {
  TINYAOT_STATUS_OK = 0,
  TINYAOT_STATUS_NULL_ARGUMENT = 1,
  TINYAOT_STATUS_INVALID_UTF8 = 2,
  TINYAOT_STATUS_IO = 3,
  TINYAOT_STATUS_FORMAT = 4,
  TINYAOT_STATUS_RANGE = 5,
  TINYAOT_STATUS_SHAPE = 6,
  TINYAOT_STATUS_UNSUPPORTED = 7,
  TINYAOT_STATUS_OVERFLOW = 8,
  TINYAOT_STATUS_INFEASIBLE = 9,
  TINYAOT_STATUS_SIZE = 10,
  TINYAOT_STATUS_EMIT = 11,
  TINYAOT_STATUS_PANIC = 12,
} TinyaotStatus;

// A compiled, memory-planned model. Opaque to C.
typedef struct TinyaotModel TinyaotModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or NULL.
// The pointer stays valid until the next failing call on the same thread.
const char *tinyaot_last_error_message(void);

// Loads the model at `path`, folds its constants and plans its memory.
// A `ram_budget` of 0 means no budget. On success `*out` receives a
// handle to release with [`tinyaot_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum TinyaotStatus tinyaot_model_load(const char *path,
                                      size_t ram_budget,
                                      struct TinyaotModel **out);

// Releases a model handle. NULL is ignored.
//
// # Safety
// `model` must come from [`tinyaot_model_load`] and not be used afterwards.
void tinyaot_model_free(struct TinyaotModel *model);

// Number of i8 elements `predict` reads. 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t tinyaot_model_input_len(const struct TinyaotModel *model);

// Number of i8 elements `predict` writes. 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t tinyaot_model_output_len(const struct TinyaotModel *model);

// Peak RAM working set of the planned model in bytes. 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t tinyaot_model_peak_ram_bytes(const struct TinyaotModel *model);

// Bytes of constant data the model embeds. 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t tinyaot_model_flash_bytes(const struct TinyaotModel *model);

// Runs one inference.
//
// # Safety
// `input` must point to `input_len` readable bytes and `output` to
// `output_len` writable bytes.
enum TinyaotStatus tinyaot_model_predict(const struct TinyaotModel *model,
                                         const int8_t *input,
                                         size_t input_len,
                                         int8_t *output,
                                         size_t output_len);

// Emits the model's inference source. On success `*out` receives a
// NUL-terminated string to release with [`tinyaot_string_free`].
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum TinyaotStatus tinyaot_model_emit_source(const struct TinyaotModel *model, char **out);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void tinyaot_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TINYAOT_H */
