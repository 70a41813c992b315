#ifndef GMLS_VEC_H
#define GMLS_VEC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum GmlsStatus {
  GMLS_STATUS_OK = 0,
  GMLS_STATUS_NULL_POINTER = 1,
  GMLS_STATUS_INVALID_ARGUMENT = 2,
  /*
   Bad input data or file.
   */
  GMLS_STATUS_VALIDATION = 3,
  /*
   Degenerate fit, solver breakdown and similar.
   */
  GMLS_STATUS_NUMERICAL = 4,
  GMLS_STATUS_PANIC = 5,
} GmlsStatus;

typedef enum GmlsMethod {
  GMLS_METHOD_INTRINSIC = 0,
  GMLS_METHOD_EXTRINSIC = 1,
} GmlsMethod;

typedef enum GmlsKind {
  GMLS_KIND_BOCHNER = 0,
  GMLS_KIND_L = 1,
  GMLS_KIND_HODGE = 2,
} GmlsKind;

/*
 Point cloud, optionally tied to one of the built-in manifolds.
 */
typedef struct GmlsCloud GmlsCloud;

/*
 One orthonormal tangent frame per point.
 */
typedef struct GmlsFrames GmlsFrames;

/*
 Assembled block-sparse vector Laplacian.
 */
typedef struct GmlsOperator GmlsOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *gmls_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *gmls_version(void);

/*
 Sample `n` points from a named manifold ("sphere", "torus3", "torus9",
 "flat_torus12", "rbc", "bumpy_sphere").

 # Safety
 `manifold` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GmlsStatus gmls_cloud_sample(const char *manifold,
                                  size_t n,
                                  uint64_t seed,
                                  struct GmlsCloud **out);

/*
 Cloud from `count` row-major points in R^`ambient` on a `dim`-manifold.

 # Safety
 `points` must hold `count * ambient` values and `out` must be valid.
 */
enum GmlsStatus gmls_cloud_from_points(const double *points,
                                       size_t count,
                                       size_t ambient,
                                       size_t dim,
                                       struct GmlsCloud **out);

/*
 Number of points, or 0 for a null handle.

 # Safety
 `cloud` must be null or a live handle.
 */
size_t gmls_cloud_len(const struct GmlsCloud *cloud);

/*
 Copy the coordinates (row-major, `len * ambient` values) into `buf`.

 # Safety
 `buf` must have room for `buf_len` values.
 */
enum GmlsStatus gmls_cloud_points(const struct GmlsCloud *cloud, double *buf, size_t buf_len);

/*
 # Safety
 `cloud` must be null or a handle not freed before.
 */
void gmls_cloud_free(struct GmlsCloud *cloud);

/*
 Exact frames of a sampled cloud.

 # Safety
 `cloud` must be a live handle and `out` valid.
 */
enum GmlsStatus gmls_frames_analytic(const struct GmlsCloud *cloud, struct GmlsFrames **out);

/*
 Frames estimated from `k`-nearest-neighbor stencils with degree `l` refinement.

 # Safety
 `cloud` must be a live handle and `out` valid.
 */
enum GmlsStatus gmls_frames_estimate(const struct GmlsCloud *cloud,
                                     size_t k,
                                     size_t l,
                                     struct GmlsFrames **out);

/*
 # Safety
 `frames` must be null or a handle not freed before.
 */
void gmls_frames_free(struct GmlsFrames *frames);

/*
 Assemble a vector Laplacian with `k`-point stencils, field degree
 `l_field` and (intrinsic only) manifold degree `l_manifold`.

 # Safety
 Handles must be live and `out` valid.
 */
enum GmlsStatus gmls_operator_assemble(const struct GmlsCloud *cloud,
                                       const struct GmlsFrames *frames,
                                       size_t k,
                                       size_t l_field,
                                       size_t l_manifold,
                                       enum GmlsMethod method,
                                       enum GmlsKind kind,
                                       struct GmlsOperator **out);

/*
 Scalar dimension dN, or 0 for a null handle.

 # Safety
 `op` must be null or a live handle.
 */
size_t gmls_operator_dim(const struct GmlsOperator *op);

/*
 y = L x, both of length dN.

 # Safety
 `x` and `y` must hold `len` values.
 */
enum GmlsStatus gmls_operator_apply(const struct GmlsOperator *op,
                                    const double *x,
                                    double *y,
                                    size_t len);

/*
 Solve (aI − L)u = f.

 # Safety
 `f` and `u` must hold `len` values.
 */
enum GmlsStatus gmls_operator_solve_screened(const struct GmlsOperator *op,
                                             double a,
                                             const double *f,
                                             double *u,
                                             size_t len);

/*
 `count` eigenvalues of largest real part, written to `re` and `im` in
 descending order of real part.

 # Safety
 `re` and `im` must hold `count` values.
 */
enum GmlsStatus gmls_operator_eigenvalues(const struct GmlsOperator *op,
                                          size_t count,
                                          double *re,
                                          double *im);

/*
 # Safety
 `op` must be null or a handle not freed before.
 */
void gmls_operator_free(struct GmlsOperator *op);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GMLS_VEC_H */
