#ifndef VELAB_H
#define VELAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum VelabStatus {
  VELAB_STATUS_OK = 0,
  VELAB_STATUS_NULL_POINTER = 1,
  VELAB_STATUS_INVALID_ARGUMENT = 2,
  VELAB_STATUS_IO = 3,
  VELAB_STATUS_FORMAT = 4,
  VELAB_STATUS_NUMERICAL = 5,
  VELAB_STATUS_PANIC = 6,
} VelabStatus;

/**
 * A trained flow velocity network.
 */
typedef struct VelabFlow VelabFlow;

/**
 * A Gaussian mixture with a closed-form density.
 */
typedef struct VelabMixture VelabMixture;

/**
 * A trained tokenizer (encoder and decoder).
 */
typedef struct VelabTokenizer VelabTokenizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *velab_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *velab_last_error(void);

/**
 * Builds the fractal mixture with default branch perturbation.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum VelabStatus velab_mixture_fractal(uint32_t depth,
                                       uint32_t segs_per_branch,
                                       uint64_t seed,
                                       struct VelabMixture **out);

/**
 * Loads a mixture written by `velab build-data`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VelabStatus velab_mixture_load(const char *path, struct VelabMixture **out);

/**
 * # Safety
 * `m` must be null or a handle from this library not yet freed.
 */
void velab_mixture_free(struct VelabMixture *m);

/**
 * Number of components, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t velab_mixture_len(const struct VelabMixture *m);

/**
 * Draws `n` points into `out_xy` (capacity `2n`).
 *
 * # Safety
 * `m` must be a live handle and `out_xy` must hold `2n` doubles.
 */
enum VelabStatus velab_mixture_sample(const struct VelabMixture *m,
                                      size_t n,
                                      uint64_t seed,
                                      double *out_xy);

/**
 * Log-density of the mixture convolved with N(0, noise_sigma² I) at `n` points.
 *
 * # Safety
 * `m` must be a live handle, `xy` must hold `2n` doubles, `out` must hold `n`.
 */
enum VelabStatus velab_mixture_log_density(const struct VelabMixture *m,
                                           double noise_sigma,
                                           const double *xy,
                                           size_t n,
                                           double *out);

/**
 * Score (gradient of the log-density) of the noised mixture at `n` points.
 *
 * # Safety
 * `m` must be a live handle, `xy` and `out_xy` must hold `2n` doubles.
 */
enum VelabStatus velab_mixture_score(const struct VelabMixture *m,
                                     double noise_sigma,
                                     const double *xy,
                                     size_t n,
                                     double *out_xy);

/**
 * Loads a tokenizer checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VelabStatus velab_tokenizer_load(const char *path, struct VelabTokenizer **out);

/**
 * # Safety
 * `t` must be null or a live handle.
 */
void velab_tokenizer_free(struct VelabTokenizer *t);

/**
 * Encodes `n` points into posterior means and clamped log-variances.
 *
 * # Safety
 * `t` must be a live handle; `xy`, `out_mu` and `out_log_var` must hold `2n` doubles.
 */
enum VelabStatus velab_tokenizer_encode(const struct VelabTokenizer *t,
                                        const double *xy,
                                        size_t n,
                                        double *out_mu,
                                        double *out_log_var);

/**
 * Decodes `n` latents.
 *
 * # Safety
 * `t` must be a live handle; `z` and `out_xy` must hold `2n` doubles.
 */
enum VelabStatus velab_tokenizer_decode(const struct VelabTokenizer *t,
                                        const double *z,
                                        size_t n,
                                        double *out_xy);

/**
 * Loads a flow checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VelabStatus velab_flow_load(const char *path, struct VelabFlow **out);

/**
 * # Safety
 * `f` must be null or a live handle.
 */
void velab_flow_free(struct VelabFlow *f);

/**
 * Euler-samples `n` latents with `steps` uniform steps from N(0, I) noise,
 * then decodes them with `tokenizer` unless it is null.
 *
 * # Safety
 * `f` must be a live handle, `tokenizer` null or live, `out_xy` must hold `2n` doubles.
 */
enum VelabStatus velab_flow_sample(const struct VelabFlow *f,
                                   const struct VelabTokenizer *tokenizer,
                                   size_t n,
                                   size_t steps,
                                   uint64_t seed,
                                   double *out_xy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VELAB_H */
