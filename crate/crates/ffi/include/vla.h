#ifndef VLA_H
#define VLA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum VlaKernel {
  VLA_KERNEL_VLA = 0,
  VLA_KERNEL_LINEAR = 1,
  VLA_KERNEL_DELTA_NET = 2,
  VLA_KERNEL_SOFTMAX = 3,
} VlaKernel;

/**
 * Direction of the rank-one penalty update.
 */
typedef enum VlaPenaltyDirection {
  VLA_PENALTY_DIRECTION_UNIT_KEY = 0,
  VLA_PENALTY_DIRECTION_SCALED_KEY = 1,
  VLA_PENALTY_DIRECTION_PROJECTED = 2,
  VLA_PENALTY_DIRECTION_PROJECTED_SCALED = 3,
  VLA_PENALTY_DIRECTION_ZERO = 4,
} VlaPenaltyDirection;

/**
 * Result code of every fallible call. Zero is success.
 */
typedef enum VlaStatus {
  VLA_STATUS_OK = 0,
  VLA_STATUS_NULL_POINTER = 1,
  VLA_STATUS_DIMENSION_MISMATCH = 2,
  VLA_STATUS_INVALID_ARGUMENT = 3,
  VLA_STATUS_NON_FINITE = 4,
  VLA_STATUS_DEGENERATE = 5,
  VLA_STATUS_NUMERICAL = 6,
  VLA_STATUS_UNSUPPORTED = 7,
  VLA_STATUS_PANIC = 8,
} VlaStatus;

/**
 * Opaque memory handle.
 */
typedef struct VlaHead VlaHead;

/**
 * Head configuration. Obtain defaults from [`vla_config_default`].
 */
typedef struct VlaConfig {
  size_t d_h;
  double lambda0;
  double epsilon;
  /**
   * 0 disables the identity refresh.
   */
  size_t refresh_period;
  double refresh_eta;
  bool normalize_alpha;
  /**
   * One of [`VlaPenaltyDirection`].
   */
  uint32_t penalty_direction;
  uint64_t projection_seed;
  double delta_beta;
} VlaConfig;

/**
 * Per-write statistics.
 */
typedef struct VlaWriteStats {
  double residual_norm;
  /**
   * `k̂ᵀ α̂`; 1 for kernels without a penalty.
   */
  double alignment;
  /**
   * Sherman-Morrison denominator; 1 for kernels without a penalty.
   */
  double delta;
  double update_norm;
} VlaWriteStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *vla_version(void);

/**
 * Copies the last error message of the calling thread into `buf`,
 * truncating to `len - 1` bytes plus a NUL. Returns the full message length
 * without the NUL, so a caller can size the buffer. `buf` may be null.
 *
 * # Safety
 * `buf` must be null or valid for `len` writable bytes.
 */
size_t vla_last_error(char *buf, size_t len);

/**
 * Fills `out` with the default head configuration.
 *
 * # Safety
 * `out` must be null or point to a writable `VlaConfig`.
 */
enum VlaStatus vla_config_default(struct VlaConfig *out);

/**
 * Creates a memory of kind `kernel`, one of [`VlaKernel`]; a null `cfg`
 * selects the defaults. On success `*out` owns a handle that must be released
 * with [`vla_head_free`]; on failure `*out` is set to null.
 *
 * # Safety
 * `cfg` must be null or point to a valid `VlaConfig`; `out` must be writable.
 */
enum VlaStatus vla_head_new(uint32_t kernel, const struct VlaConfig *cfg, struct VlaHead **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `h` must be null or a handle from [`vla_head_new`] not yet freed.
 */
void vla_head_free(struct VlaHead *h);

/**
 * Head dimension, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t vla_head_dim(const struct VlaHead *h);

/**
 * Discards all stored associations.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
enum VlaStatus vla_head_reset(struct VlaHead *h);

/**
 * Stores `v` under key `k`, both of length `len`. With `feature_key` the key
 * is taken as already feature-mapped. `stats` may be null.
 *
 * # Safety
 * `h` must be a live handle; `k` and `v` valid for `len` reads; `stats`
 * null or writable.
 */
enum VlaStatus vla_head_write(struct VlaHead *h,
                              const double *k,
                              const double *v,
                              size_t len,
                              bool feature_key,
                              struct VlaWriteStats *stats);

/**
 * Reads the memory at query `q` into `out`, both of length `len`.
 *
 * # Safety
 * `h` must be a live handle; `q` valid for `len` reads; `out` for `len` writes.
 */
enum VlaStatus vla_head_read(const struct VlaHead *h,
                             const double *q,
                             size_t len,
                             bool feature_query,
                             double *out);

/**
 * One token: write `(k, v)` then read at `q`, all raw and of length `len`.
 *
 * # Safety
 * As for [`vla_head_write`] and [`vla_head_read`].
 */
enum VlaStatus vla_head_step(struct VlaHead *h,
                             const double *k,
                             const double *v,
                             const double *q,
                             size_t len,
                             double *out,
                             struct VlaWriteStats *stats);

/**
 * Copies the `d_h × d_h` recurrent state, row-major (value by key), into
 * `out`. Kernels without a recurrent state report `Unsupported`.
 *
 * # Safety
 * `h` must be a live handle; `out` valid for `len` writes.
 */
enum VlaStatus vla_head_state(const struct VlaHead *h, double *out, size_t len);

/**
 * Copies the penalty inverse `A`, row-major. VLA only.
 *
 * # Safety
 * `h` must be a live handle; `out` valid for `len` writes.
 */
enum VlaStatus vla_head_penalty_inverse(const struct VlaHead *h, double *out, size_t len);

/**
 * Spectral norm of `I - α̂ k̂ᵀ` for unit vectors with `k̂ᵀ α̂ = c`.
 *
 * # Safety
 * `out` must be writable.
 */
enum VlaStatus vla_jacobian_sigma(double c, double *out);

/**
 * In-place rank-one inverse update `A ← A - (Au)(Au)ᵀ / δ` of the
 * row-major `d × d` matrix `a`, with `δ = max(1 + uᵀAu, epsilon)`. `delta`
 * receives `δ` and may be null.
 *
 * # Safety
 * `a` must be valid for `d * d` reads and writes, `u` for `d` reads.
 */
enum VlaStatus vla_sm_update(double *a, size_t d, const double *u, double epsilon, double *delta);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VLA_H */
