#ifndef DYNSPLIT_H
#define DYNSPLIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_INVALID_ARGUMENT = 2,
  DS_STATUS_IO = 3,
  DS_STATUS_PARSE = 4,
  DS_STATUS_SHAPE = 5,
  DS_STATUS_WIRE = 6,
  DS_STATUS_CONTRACT = 7,
  DS_STATUS_BUFFER_TOO_SMALL = 8,
  DS_STATUS_INSUFFICIENT_SAMPLES = 9,
  DS_STATUS_PANIC = 10,
} DsStatus;

/**
 * Which latent code to produce or expect.
 */
typedef enum DsMode {
  DS_MODE_INFORMATIVE = 0,
  DS_MODE_COMPRESSED = 1,
} DsMode;

/**
 * Opaque handle to a trained two-mode model.
 */
typedef struct DsModel DsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *ds_last_error(void);

/**
 * Loads a phase-2 checkpoint. Free the handle with [`ds_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DsStatus ds_model_load(const char *path, struct DsModel **out);

/**
 * # Safety
 * `model` must come from [`ds_model_load`] and not be used afterwards.
 */
void ds_model_free(struct DsModel *model);

/**
 * Window length `T`, features `D` and classes `K` of the model.
 *
 * # Safety
 * `model` must be a live handle; out-pointers may be null to skip a value.
 */
enum DsStatus ds_model_dims(const struct DsModel *model,
                            size_t *timesteps,
                            size_t *features,
                            size_t *classes);

/**
 * Latent payload size in bytes for `mode` (code dimension times 4).
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum DsStatus ds_model_payload_bytes(const struct DsModel *model, enum DsMode mode, size_t *out);

/**
 * Full forward pass on one window (`T x D` values, time-major) in `mode`,
 * writing `T x K` class probabilities.
 *
 * # Safety
 * `inputs` must hold `inputs_len` values and `out_probs` `out_cap` values.
 */
enum DsStatus ds_model_infer(const struct DsModel *model,
                             const double *inputs,
                             size_t inputs_len,
                             enum DsMode mode,
                             double *out_probs,
                             size_t out_cap);

/**
 * Device side: encodes one window and writes the wire message
 * (`5 + payload` bytes) into `out_msg`.
 *
 * # Safety
 * `inputs` must hold `inputs_len` values, `out_msg` `out_cap` bytes and
 * `out_written` must be writable.
 */
enum DsStatus ds_model_encode(const struct DsModel *model,
                              const double *inputs,
                              size_t inputs_len,
                              enum DsMode mode,
                              uint8_t *out_msg,
                              size_t out_cap,
                              size_t *out_written);

/**
 * Edge side: decodes a wire message and writes `T x K` probabilities.
 *
 * # Safety
 * `msg` must hold `msg_len` bytes and `out_probs` `out_cap` values.
 */
enum DsStatus ds_model_decode(const struct DsModel *model,
                              const uint8_t *msg,
                              size_t msg_len,
                              double *out_probs,
                              size_t out_cap);

/**
 * Size of the message header preceding the payload.
 */
size_t ds_wire_header_bytes(void);

/**
 * Encodes `len` code values (rounded to f32) as a wire message.
 *
 * # Safety
 * `code` must hold `len` values, `out_msg` `out_cap` bytes.
 */
enum DsStatus ds_wire_encode(enum DsMode mode,
                             const double *code,
                             size_t len,
                             uint8_t *out_msg,
                             size_t out_cap,
                             size_t *out_written);

/**
 * Decodes a wire message into its mode and f32 code values.
 *
 * # Safety
 * `msg` must hold `msg_len` bytes, `out_code` `out_cap` floats.
 */
enum DsStatus ds_wire_decode(const uint8_t *msg,
                             size_t msg_len,
                             enum DsMode *out_mode,
                             float *out_code,
                             size_t out_cap,
                             size_t *out_len);

/**
 * Gaussian-copula MI in bits between `x` (`n x dx`) and `y` (`n x dy`).
 *
 * # Safety
 * `x` must hold `n * dx` values and `y` `n * dy` values.
 */
enum DsStatus ds_gcmi(const double *x,
                      size_t dx,
                      const double *y,
                      size_t dy,
                      size_t n,
                      double *out_bits);

/**
 * Plug-in MI in bits between two discrete sequences of length `n`.
 *
 * # Safety
 * `x` and `y` must each hold `n` values.
 */
enum DsStatus ds_plugin_mi(const int64_t *x, const int64_t *y, size_t n, double *out_bits);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNSPLIT_H */
