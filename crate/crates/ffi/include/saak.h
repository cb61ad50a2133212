#ifndef SAAK_H
#define SAAK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SaakFilter {
  SAAK_FILTER_TRUNCATE = 0,
  SAAK_FILTER_SCALE = 1,
  SAAK_FILTER_CLIP = 2,
} SaakFilter;

// Result code of every fallible call.
typedef enum SaakStatus {
  SAAK_STATUS_OK = 0,
  SAAK_STATUS_NULL_POINTER = 1,
  SAAK_STATUS_INVALID_ARGUMENT = 2,
  // Image or coefficient geometry does not fit the model.
  SAAK_STATUS_SHAPE = 3,
  // Output buffer length differs from the required length.
  SAAK_STATUS_BUFFER_SIZE = 4,
  SAAK_STATUS_IO = 5,
  // Malformed model file.
  SAAK_STATUS_FORMAT = 6,
  SAAK_STATUS_NUMERICAL = 7,
  // A Rust panic was caught at the boundary.
  SAAK_STATUS_INTERNAL = 8,
} SaakStatus;

// Opaque handle to a loaded model.
typedef struct SaakModelHandle SaakModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *saak_version(void);

// Message for the most recent failure on this thread, or NULL if the last
// call succeeded. The pointer stays valid until the next call on this thread.
const char *saak_last_error_message(void);

// Loads a model file. On success `*out` owns a handle that must be released
// with [`saak_model_free`].
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum SaakStatus saak_model_load(const char *path, struct SaakModelHandle **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `handle` must come from [`saak_model_load`] and not be used afterwards.
void saak_model_free(struct SaakModelHandle *handle);

// Writes the model's block side, stage count and input channel count.
//
// # Safety
// All pointers must be valid.
enum SaakStatus saak_model_config(const struct SaakModelHandle *handle,
                                  size_t *spatial,
                                  size_t *stages,
                                  size_t *in_channels);

// Number of final-stage coefficient channels.
//
// # Safety
// All pointers must be valid.
enum SaakStatus saak_model_spectral_dim(const struct SaakModelHandle *handle, size_t *out);

// Shape of the coefficient tensor produced for an image of the given shape.
//
// # Safety
// All pointers must be valid.
enum SaakStatus saak_coefficient_shape(const struct SaakModelHandle *handle,
                                       size_t height,
                                       size_t width,
                                       size_t channels,
                                       size_t *out_height,
                                       size_t *out_width,
                                       size_t *out_channels);

// Forward transform of one image into `out`, whose length must equal the
// product of the dimensions from [`saak_coefficient_shape`].
//
// # Safety
// `image` must hold `height·width·channels` values and `out` `out_len`.
enum SaakStatus saak_forward(const struct SaakModelHandle *handle,
                             const double *image,
                             size_t height,
                             size_t width,
                             size_t channels,
                             double *out,
                             size_t out_len);

// Inverse transform of final-stage coefficients back to an image of shape
// `height × width × channels`. With `clamp`, pixels are clipped to `[0, 1]`.
//
// # Safety
// `coefficients` must hold `coefficients_len` values and `out` `out_len`.
enum SaakStatus saak_inverse(const struct SaakModelHandle *handle,
                             const double *coefficients,
                             size_t coefficients_len,
                             size_t height,
                             size_t width,
                             size_t channels,
                             bool clamp,
                             double *out,
                             size_t out_len);

// Filters the `count` lowest-variance AC channels of the image's
// coefficients and reconstructs. `parameter` is the scale factor or clip
// bound; a negative value selects the default, and truncation ignores it.
//
// # Safety
// `image` must hold `height·width·channels` values and `out` `out_len`.
enum SaakStatus saak_defend(const struct SaakModelHandle *handle,
                            const double *image,
                            size_t height,
                            size_t width,
                            size_t channels,
                            enum SaakFilter filter,
                            size_t count,
                            double parameter,
                            bool clamp,
                            double *out,
                            size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAAK_H */
