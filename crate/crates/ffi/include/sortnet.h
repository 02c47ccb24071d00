/* C interface for the sortnet second-order fusion kernels. Generated by cbindgen; do not edit by hand. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this interface.
typedef enum SortnetStatus {
  // The call succeeded and all output parameters are valid.
  SORTNET_STATUS_OK = 0,
  // A required pointer argument was NULL.
  SORTNET_STATUS_NULL_POINTER = 1,
  // An argument was outside its documented domain.
  SORTNET_STATUS_INVALID_ARGUMENT = 2,
  // Tensor shapes (or a shape/data-length pair) disagree.
  SORTNET_STATUS_SHAPE_MISMATCH = 3,
  // The math rejected the values (negative input to the sqrt wrapper,
  // non-finite intermediate, ...).
  SORTNET_STATUS_NUMERIC = 4,
  // An unexpected internal failure; see the last error message.
  SORTNET_STATUS_INTERNAL = 5,
} SortnetStatus;

// How the product term is post-processed.
typedef enum SortnetWrapper {
  // Use the raw elementwise product.
  SORTNET_WRAPPER_IDENTITY = 0,
  // Use `sqrt(product + eps)`; `wrapper_eps` must be positive.
  SORTNET_WRAPPER_SQRT_EPS = 1,
} SortnetWrapper;

// Whether the product's inputs are relu-gated first.
typedef enum SortnetGate {
  // Feed both inputs to the product unchanged.
  SORTNET_GATE_NONE = 0,
  // Clamp both inputs at zero before multiplying (required for the sqrt
  // wrapper on signed data).
  SORTNET_GATE_RELU_BOTH = 1,
} SortnetGate;

// Which response surface `sortnet_surface_value` samples.
typedef enum SortnetSurfaceKind {
  // `relu(x) + relu(y)` — the first-order response.
  SORTNET_SURFACE_KIND_FIRST_ORDER = 0,
  // `relu(x) + relu(y) + relu(x)*relu(y)` — with the second-order term.
  SORTNET_SURFACE_KIND_SECOND_ORDER = 1,
} SortnetSurfaceKind;

// Opaque tensor handle (shape plus f64 data, row-major).
typedef struct SortnetTensor SortnetTensor;

// Which fusion terms combine the two responses, mirroring the library's
// fusion spec. The active terms are summed: `sum` adds `f1 + f2`, `max`
// adds `max(f1, f2)`, `prod` adds the (optionally wrapped and gated)
// elementwise product. At least one term must be enabled.
typedef struct SortnetFusionSpec {
  bool use_sum;
  bool use_max;
  bool use_prod;
  enum SortnetWrapper wrapper;
  // Epsilon inside the sqrt wrapper; read only when `wrapper` is SqrtEps.
  double wrapper_eps;
  enum SortnetGate gate;
} SortnetFusionSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sortnet_version(void);

// Description of the last failure on this thread (empty string if none).
// The pointer stays valid until the next failing call on the same thread.
const char *sortnet_last_error_message(void);

// Creates a tensor from `rank` dimensions and `data_len` row-major values;
// `data_len` must equal the product of the dimensions. A rank of 0 makes a
// scalar (pass `data_len` 1); `shape` may be NULL only when `rank` is 0.
// On success writes a handle the caller must release with
// `sortnet_tensor_free`.
//
// # Safety
// `shape` must point to `rank` readable values, `data` to `data_len`.
enum SortnetStatus sortnet_tensor_new(size_t rank,
                                      const size_t *shape,
                                      const double *data,
                                      size_t data_len,
                                      struct SortnetTensor **out);

// Releases a tensor handle. NULL is a no-op.
//
// # Safety
// `t` must be a handle from this library that has not been freed already.
void sortnet_tensor_free(struct SortnetTensor *t);

// Writes the tensor's rank.
//
// # Safety
// `t` must be a live handle; `out_rank` must be writable.
enum SortnetStatus sortnet_tensor_rank(const struct SortnetTensor *t, size_t *out_rank);

// Copies the tensor's dimensions into `out_shape` (`capacity` must be at
// least the rank).
//
// # Safety
// `t` must be a live handle; `out_shape` must have room for `capacity`.
enum SortnetStatus sortnet_tensor_shape(const struct SortnetTensor *t,
                                        size_t *out_shape,
                                        size_t capacity);

// Writes the element count.
//
// # Safety
// `t` must be a live handle; `out_len` must be writable.
enum SortnetStatus sortnet_tensor_len(const struct SortnetTensor *t, size_t *out_len);

// Copies the row-major element values into `out_data` (`capacity` must be
// at least the element count).
//
// # Safety
// `t` must be a live handle; `out_data` must have room for `capacity`.
enum SortnetStatus sortnet_tensor_copy_data(const struct SortnetTensor *t,
                                            double *out_data,
                                            size_t capacity);

// Fuses two equal-shape responses with the given spec and writes a new
// tensor handle holding the combined response.
//
// # Safety
// `f1`, `f2` must be live handles; `spec` and `out` must be readable and
// writable respectively.
enum SortnetStatus sortnet_fuse(const struct SortnetTensor *f1,
                                const struct SortnetTensor *f2,
                                const struct SortnetFusionSpec *spec,
                                struct SortnetTensor **out);

// Reverse-mode gradients of the fused response contracted against an
// upstream sensitivity: for loss `L = sum(upstream * fuse(f1, f2))`, writes
// `dL/df1` and `dL/df2` as new tensor handles. With the plain sum+product
// spec this realizes the cross-branch law `dL/df1 = upstream * (1 + f2)`.
//
// # Safety
// All tensor arguments must be live handles of equal shape; both out
// pointers must be writable.
enum SortnetStatus sortnet_fuse_backward(const struct SortnetTensor *f1,
                                         const struct SortnetTensor *f2,
                                         const struct SortnetFusionSpec *spec,
                                         const struct SortnetTensor *upstream,
                                         struct SortnetTensor **out_grad_f1,
                                         struct SortnetTensor **out_grad_f2);

// Residual merge `x + fx + sqrt(relu(x) * relu(fx) + eps)` as a new tensor
// handle; `eps` must be positive.
//
// # Safety
// `x`, `fx` must be live handles of equal shape; `out` must be writable.
enum SortnetStatus sortnet_residual_fuse(const struct SortnetTensor *x,
                                         const struct SortnetTensor *fx,
                                         double eps,
                                         struct SortnetTensor **out);

// Scalar fusion convenience: writes `fuse(f1, f2)` for 0-dimensional inputs.
//
// # Safety
// `spec` must be readable; `out` must be writable.
enum SortnetStatus sortnet_fuse_scalars(double f1,
                                        double f2,
                                        const struct SortnetFusionSpec *spec,
                                        double *out);

// Kernel size of each conv in a two-conv branch cascade replacing one
// k-by-k conv: `floor((k + 1) / 2)`. `k` must be odd and at least 3.
//
// # Safety
// `out_k` must be writable.
enum SortnetStatus sortnet_shrink_kernel(size_t k, size_t *out_k);

// Scalar response surface value at `(x, y)`; total and panic-free.
double sortnet_surface_value(enum SortnetSurfaceKind kind, double x, double y);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
