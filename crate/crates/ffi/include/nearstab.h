#ifndef NEARSTAB_H
#define NEARSTAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum NsFunctional {
  NS_FUNCTIONAL_F = 0,
  NS_FUNCTIONAL_HERMITE = 1,
} NsFunctional;

typedef enum NsStructure {
  NS_STRUCTURE_NONE = 0,
  NS_STRUCTURE_PATTERN = 1,
  NS_STRUCTURE_TOEPLITZ = 2,
  NS_STRUCTURE_REAL = 3,
} NsStructure;

typedef enum NsStatus {
  NS_STATUS_OK = 0,
  NS_STATUS_NULL_POINTER = 1,
  NS_STATUS_INVALID_ARGUMENT = 2,
  NS_STATUS_DIMENSION = 3,
  NS_STATUS_SOLVER = 4,
  NS_STATUS_UNSTABILIZABLE = 5,
  NS_STATUS_STRUCTURE = 6,
  NS_STATUS_IO = 7,
  NS_STATUS_PARSE = 8,
  NS_STATUS_BUFFER_TOO_SMALL = 9,
  NS_STATUS_PANIC = 10,
} NsStatus;

typedef enum NsInnerReason {
  NS_INNER_REASON_FUNCTIONAL_ZERO = 0,
  NS_INNER_REASON_STATIONARY = 1,
  NS_INNER_REASON_MAXIT = 2,
  NS_INNER_REASON_STALLED = 3,
} NsInnerReason;

typedef struct NsInnerResult NsInnerResult;

typedef struct NsMatrix NsMatrix;

typedef struct NsOuterResult NsOuterResult;

/**
 * Solver options; fill with [`ns_options_default`] before changing fields.
 */
typedef struct NsOptions {
  double delta;
  /**
   * Hermite blend end; values `<= delta` select `2 delta`.
   */
  double delta2;
  enum NsFunctional functional;
  enum NsStructure structure;
  /**
   * 0 selects the adaptive rank.
   */
  size_t fixed_rank;
  double tau_rank;
  double tol_inner;
  size_t maxit_inner;
  double h0;
  size_t watchdog;
  double tol_outer;
  size_t maxit_outer;
  /**
   * Non-positive values select the defaults.
   */
  double eps0;
  double eps_max;
} NsOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ns_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ns_version(void);

struct NsOptions ns_options_default(void);

/**
 * Build an `n x n` matrix from column-major parts; `im` may be null.
 *
 * # Safety
 * `re` (and `im` when non-null) must point to `n * n` readable doubles.
 */
enum NsStatus ns_matrix_new(size_t n, const double *re, const double *im, struct NsMatrix **out);

/**
 * Named test matrix; `n == 0` keeps the family's default size.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` writable.
 */
enum NsStatus ns_matrix_gallery(const char *name, size_t n, uint64_t seed, struct NsMatrix **out);

/**
 * Read a Matrix Market file; its stored pattern becomes the sparsity structure.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum NsStatus ns_matrix_read_mtx(const char *path, struct NsMatrix **out);

/**
 * Replace the matrix by `A - sigma I`.
 *
 * # Safety
 * `m` must be null or a live matrix handle.
 */
enum NsStatus ns_matrix_shift(struct NsMatrix *m, double sigma);

/**
 * Dimension of the matrix, 0 for null.
 *
 * # Safety
 * `m` must be null or a live matrix handle.
 */
size_t ns_matrix_dim(const struct NsMatrix *m);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void ns_matrix_free(struct NsMatrix *m);

/**
 * Minimize the functional at size `eps`.
 *
 * # Safety
 * `a` and `opts` must be live, `out` writable.
 */
enum NsStatus ns_inner(const struct NsMatrix *a,
                       double eps,
                       const struct NsOptions *opts,
                       struct NsInnerResult **out);

/**
 * # Safety
 * `r` must be null or a live inner result.
 */
double ns_inner_value(const struct NsInnerResult *r);

/**
 * # Safety
 * `r` must be null or a live inner result.
 */
size_t ns_inner_rank(const struct NsInnerResult *r);

/**
 * # Safety
 * `r` must be null or a live inner result.
 */
size_t ns_inner_max_rank(const struct NsInnerResult *r);

/**
 * # Safety
 * `r` must be null or a live inner result.
 */
size_t ns_inner_iterations(const struct NsInnerResult *r);

/**
 * # Safety
 * `r` must be a live inner result.
 */
enum NsStatus ns_inner_reason(const struct NsInnerResult *r, enum NsInnerReason *reason);

/**
 * Copy the unit perturbation `E*` (`n * n` values per part; `im` may be null).
 *
 * # Safety
 * `re` and `im` must hold `len` writable doubles.
 */
enum NsStatus ns_inner_perturbation(const struct NsInnerResult *r,
                                    double *re,
                                    double *im,
                                    size_t len);

/**
 * # Safety
 * `r` must be null or a handle not yet freed.
 */
void ns_inner_free(struct NsInnerResult *r);

/**
 * Find the smallest stabilizing size and its perturbation.
 *
 * # Safety
 * `a` and `opts` must be live, `out` writable.
 */
enum NsStatus ns_stabilize(const struct NsMatrix *a,
                           const struct NsOptions *opts,
                           struct NsOuterResult **out);

/**
 * # Safety
 * `r` must be null or a live outer result.
 */
double ns_outer_eps_star(const struct NsOuterResult *r);

/**
 * # Safety
 * `r` must be null or a live outer result.
 */
size_t ns_outer_rank(const struct NsOuterResult *r);

/**
 * # Safety
 * `r` must be null or a live outer result.
 */
double ns_outer_final_value(const struct NsOuterResult *r);

/**
 * Number of recorded size evaluations.
 *
 * # Safety
 * `r` must be null or a live outer result.
 */
size_t ns_outer_history_len(const struct NsOuterResult *r);

/**
 * 1 when both certificates hold, 0 otherwise (including null).
 *
 * # Safety
 * `r` must be null or a live outer result.
 */
int32_t ns_outer_certified(const struct NsOuterResult *r);

/**
 * Copy `Delta = eps* E*` (`n * n` values per part; `im` may be null).
 *
 * # Safety
 * `re` and `im` must hold `len` writable doubles.
 */
enum NsStatus ns_outer_delta(const struct NsOuterResult *r, double *re, double *im, size_t len);

/**
 * Copy the `n` eigenvalues of `A + Delta`, sorted by descending real part.
 *
 * # Safety
 * `re` and `im` must hold `len` writable doubles.
 */
enum NsStatus ns_outer_eigenvalues(const struct NsOuterResult *r,
                                   double *re,
                                   double *im,
                                   size_t len);

/**
 * # Safety
 * `r` must be null or a handle not yet freed.
 */
void ns_outer_free(struct NsOuterResult *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEARSTAB_H */
