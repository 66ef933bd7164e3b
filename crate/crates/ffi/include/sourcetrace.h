/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SOURCETRACE_H
#define SOURCETRACE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum StStatus {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_ARGUMENT = 1,
  ST_STATUS_INVALID_ARGUMENT = 2,
  ST_STATUS_IO = 3,
  ST_STATUS_CORRUPT_FILE = 4,
  ST_STATUS_DIM_MISMATCH = 5,
  ST_STATUS_NUMERICAL = 6,
  ST_STATUS_BUFFER_TOO_SMALL = 7,
  ST_STATUS_PANIC = 8,
  ST_STATUS_INTERNAL = 9,
} StStatus;

/*
 A trained model loaded from a checkpoint.
 */
typedef struct StModel StModel;

/*
 A loaded embedding file.
 */
typedef struct StTable StTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *st_version(void);

/*
 Copy the calling thread's last error message into `buf` (truncating to `cap`).

 Returns the buffer size needed for the full message, or 0 if there is none.

 # Safety
 `buf` must be null or point to `cap` writable bytes.
 */
size_t st_last_error(char *buf, size_t cap);

/*
 Load an STEB embedding file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum StStatus st_table_load(const char *path, struct StTable **out);

/*
 # Safety
 `table` must be null or a handle from [`st_table_load`] not yet freed.
 */
void st_table_free(struct StTable *table);

/*
 Number of vectors; 0 for a null handle.

 # Safety
 `table` must be null or a live handle.
 */
size_t st_table_len(const struct StTable *table);

/*
 # Safety
 `table` must be null or a live handle.
 */
size_t st_table_dim(const struct StTable *table);

/*
 Number of classes; 0 for an unlabeled table.

 # Safety
 `table` must be null or a live handle.
 */
size_t st_table_n_classes(const struct StTable *table);

/*
 Row-major `len x dim` vectors, valid while the handle lives.

 # Safety
 `table` must be null or a live handle.
 */
const float *st_table_vectors(const struct StTable *table);

/*
 `len` class indices, or null for an unlabeled table. Valid while the handle lives.

 # Safety
 `table` must be null or a live handle.
 */
const uint16_t *st_table_labels(const struct StTable *table);

/*
 Copy class name `index` into `buf`; `needed` receives the size including the NUL.

 Returns `BufferTooSmall` (after writing a truncated name) when `cap < needed`.

 # Safety
 `table` must be a live handle, `buf` null or `cap` writable bytes, `needed` null or valid.
 */
enum StStatus st_table_class_name(const struct StTable *table,
                                  size_t index,
                                  char *buf,
                                  size_t cap,
                                  size_t *needed);

/*
 Load a model checkpoint.

 # Safety
 `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum StStatus st_model_load(const char *path, struct StModel **out);

/*
 # Safety
 `model` must be null or a handle from [`st_model_load`] not yet freed.
 */
void st_model_free(struct StModel *model);

/*
 # Safety
 `model` must be null or a live handle.
 */
size_t st_model_n_classes(const struct StModel *model);

/*
 Input widths; `d_in_b` is 0 for single-view architectures.

 # Safety
 `model` must be a live handle; the out-pointers must be valid.
 */
enum StStatus st_model_input_dims(const struct StModel *model, size_t *d_in_a, size_t *d_in_b);

/*
 Class probabilities for `n` rows, written row-major into `out` (`n x n_classes`).

 `b` may be null for single-view models; fusion models require it.

 # Safety
 `a` must hold `n * d_a` floats, `b` null or `n * d_b` floats, `out` `out_len` floats.
 */
enum StStatus st_model_predict_proba(const struct StModel *model,
                                     const float *a,
                                     size_t n,
                                     size_t d_a,
                                     const float *b,
                                     size_t d_b,
                                     float *out,
                                     size_t out_len);

/*
 Binary equal error rate of `n` scores; `positive[i]` is non-zero for target trials.

 # Safety
 `scores` and `positive` must hold `n` elements; `out` must be valid.
 */
enum StStatus st_eer_binary(const double *scores, const uint8_t *positive, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOURCETRACE_H */
