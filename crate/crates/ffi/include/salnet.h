#ifndef SALNET_H
#define SALNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum SalnetStatus {
  SALNET_STATUS_OK = 0,
  SALNET_STATUS_NULL_POINTER = 1,
  SALNET_STATUS_INVALID_ARGUMENT = 2,
  SALNET_STATUS_DIMENSION = 3,
  SALNET_STATUS_NUMERICAL = 4,
  SALNET_STATUS_IO = 5,
  SALNET_STATUS_FORMAT = 6,
  SALNET_STATUS_PANIC = 7,
} SalnetStatus;

/**
 * Decoded recording session handle.
 */
typedef struct SalnetDataset SalnetDataset;

/**
 * Adaptation layer handle.
 */
typedef struct SalnetLayer SalnetLayer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *salnet_last_error_message(void);

/**
 * Writes the row-major 2x3 affine matrix for the seven coefficients
 * `tx, ty, phi, sx, sy, shx, shy`.
 *
 * # Safety
 * `params` must point to 7 doubles and `out` to 6 writable doubles.
 */
enum SalnetStatus salnet_compose_affine(const double *params, double *out);

/**
 * Samples the `height x width` image `input` at `height * width`
 * normalized coordinates given as interleaved `x, y` pairs. `wrap_axis`
 * is -1 for zero padding, 0 to wrap columns, 1 to wrap rows.
 *
 * # Safety
 * `input` and `out` hold `height * width` doubles, `coords` twice that.
 */
enum SalnetStatus salnet_bilinear_sample(const double *input,
                                         size_t height,
                                         size_t width,
                                         const double *coords,
                                         int32_t wrap_axis,
                                         double *out);

/**
 * Creates an identity layer with zero baseline for a `height x width`
 * array with electrode spacing `ied_mm`. `circumferential_axis` is the
 * axis that wraps around the limb, 0 for columns or 1 for rows.
 *
 * # Safety
 * `out` must be a valid pointer; the handle is released with [`salnet_layer_free`].
 */
enum SalnetStatus salnet_layer_new(size_t height,
                                   size_t width,
                                   double ied_mm,
                                   int32_t circumferential_axis,
                                   struct SalnetLayer **out);

/**
 * Releases a layer. Null is ignored.
 *
 * # Safety
 * `layer` must come from [`salnet_layer_new`] and not be used afterwards.
 */
void salnet_layer_free(struct SalnetLayer *layer);

/**
 * Number of image pixels the layer expects.
 *
 * # Safety
 * `layer` must be a live handle or null (which yields 0).
 */
size_t salnet_layer_len(const struct SalnetLayer *layer);

/**
 * # Safety
 * `layer` must be live and `params` point to 7 doubles.
 */
enum SalnetStatus salnet_layer_set_params(struct SalnetLayer *layer, const double *params);

/**
 * # Safety
 * `layer` must be live and `out` point to 7 writable doubles.
 */
enum SalnetStatus salnet_layer_get_params(const struct SalnetLayer *layer, double *out);

/**
 * # Safety
 * `layer` must be live and `bias` hold `len` doubles.
 */
enum SalnetStatus salnet_layer_set_bias(struct SalnetLayer *layer, const double *bias, size_t len);

/**
 * # Safety
 * `layer` must be live and `out` hold `len` writable doubles.
 */
enum SalnetStatus salnet_layer_get_bias(const struct SalnetLayer *layer, double *out, size_t len);

/**
 * Freezes the comma-separated groups in `names` (from `tx`, `ty`, `phi`,
 * `sx`, `sy`, `shx`, `shy`, `bias`); all others become trainable.
 *
 * # Safety
 * `layer` must be live and `names` a NUL-terminated string.
 */
enum SalnetStatus salnet_layer_set_frozen(struct SalnetLayer *layer, const char *names);

/**
 * Enables or disables wrapping along the circumferential axis.
 *
 * # Safety
 * `layer` must be live.
 */
enum SalnetStatus salnet_layer_set_wrap(struct SalnetLayer *layer, bool wrap);

/**
 * Subtracts the baseline from `input` and resamples it into `out`.
 *
 * # Safety
 * `layer` must be live; `input` and `out` hold `len` doubles.
 */
enum SalnetStatus salnet_layer_forward(const struct SalnetLayer *layer,
                                       const double *input,
                                       double *out,
                                       size_t len);

/**
 * Backpropagates `upstream` (the loss gradient at the layer output).
 * Writes 7 affine gradients, `len` baseline gradients and `len` input
 * gradients; frozen groups receive zeros. Any output pointer may be null
 * to skip it.
 *
 * # Safety
 * `layer` must be live; `input` and `upstream` hold `len` doubles; non-null
 * outputs hold 7, `len` and `len` writable doubles.
 */
enum SalnetStatus salnet_layer_backward(const struct SalnetLayer *layer,
                                        const double *input,
                                        const double *upstream,
                                        size_t len,
                                        double *d_affine,
                                        double *d_bias,
                                        double *d_input);

/**
 * Reads a BSAC1 container from `path`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid; release the handle with
 * [`salnet_dataset_free`].
 */
enum SalnetStatus salnet_dataset_read(const char *path, struct SalnetDataset **out);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `ds` must come from [`salnet_dataset_read`] and not be used afterwards.
 */
void salnet_dataset_free(struct SalnetDataset *ds);

/**
 * Array shape, sampling rate, electrode spacing and segment count.
 *
 * # Safety
 * `ds` must be live; every output pointer must be valid.
 */
enum SalnetStatus salnet_dataset_info(const struct SalnetDataset *ds,
                                      size_t *height,
                                      size_t *width,
                                      double *fs,
                                      double *ied_mm,
                                      size_t *n_segments);

/**
 * Borrows segment `index`: its label (65535 marks rest), the number of
 * time samples, and a pointer to `n_samples * height * width` floats laid
 * out time-major. The pointer lives as long as the dataset.
 *
 * # Safety
 * `ds` must be live; every output pointer must be valid.
 */
enum SalnetStatus salnet_dataset_segment(const struct SalnetDataset *ds,
                                         size_t index,
                                         uint16_t *label,
                                         size_t *n_samples,
                                         const float **samples);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SALNET_H */
