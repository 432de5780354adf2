#ifndef TRANSFERLAB_H
#define TRANSFERLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_POINTER = 1,
  TL_STATUS_INVALID_ARGUMENT = 2,
  TL_STATUS_DIMENSION_MISMATCH = 3,
  TL_STATUS_NEAR_SINGULAR = 4,
  TL_STATUS_DIVERGED = 5,
  TL_STATUS_IO = 6,
  TL_STATUS_FORMAT = 7,
  TL_STATUS_PANIC = 99,
} TlStatus;

/**
 * NTK Gram matrices and the quantities derived from them for one pair.
 */
typedef struct TlGramBundle TlGramBundle;

/**
 * A two-layer ReLU network.
 */
typedef struct TlShallowNet TlShallowNet;

/**
 * A validated dataset.
 */
typedef struct TlTask TlTask;

/**
 * Scalar summary of a bundle.
 */
typedef struct TlBundleSummary {
  size_t n_source;
  size_t n_target;
  double lambda_p;
  double lambda_q;
  double similarity_l2;
  double similarity_quadform;
  double theorem2_bound;
  double scratch_bound;
  double jitter_used;
} TlBundleSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if it succeeded.
 * The pointer stays valid until the next call on this thread.
 */
const char *tl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tl_version(void);

/**
 * Build a task from `n x d` row-major inputs and `n` labels. Rows must be
 * unit-norm and labels in [-1, 1].
 *
 * # Safety
 * `inputs` must point to `n * d` doubles, `labels` to `n`, `out` to a
 * writable handle slot.
 */
enum TlStatus tl_task_from_arrays(const double *inputs,
                                  const double *labels,
                                  size_t n,
                                  size_t d,
                                  uint64_t seed,
                                  struct TlTask **out);

/**
 * Parse a task from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string, `out` a writable handle slot.
 */
enum TlStatus tl_task_from_json(const char *json, struct TlTask **out);

/**
 * Generate a (source, target) pair from a JSON pair spec with fields
 * `n_source, n_target, d, input_overlap, source_labels, target_labels, seed`.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string; both out pointers must be
 * writable handle slots.
 */
enum TlStatus tl_task_pair_from_spec(const char *spec_json,
                                     struct TlTask **out_source,
                                     struct TlTask **out_target);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `task` must be null or a live handle.
 */
size_t tl_task_n(const struct TlTask *task);

/**
 * Input dimension, or 0 for a null handle.
 *
 * # Safety
 * `task` must be null or a live handle.
 */
size_t tl_task_d(const struct TlTask *task);

/**
 * Copy the labels into `out` (length must equal n).
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum TlStatus tl_task_labels(const struct TlTask *task, double *out, size_t len);

/**
 * # Safety
 * `task` must be null or a handle not yet freed.
 */
void tl_task_free(struct TlTask *task);

/**
 * Exact infinite-width Gram matrix between `na x d` and `nb x d` inputs,
 * written row-major into `out` (`na * nb` doubles).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum TlStatus tl_gram_exact(const double *xa,
                            size_t na,
                            const double *xb,
                            size_t nb,
                            size_t d,
                            double *out);

/**
 * Build the Gram bundle for (source, target). With `allow_near_singular`
 * zero, a near-singular Gram matrix is reported as `NearSingular`.
 *
 * # Safety
 * Handles must be live; `out` must be a writable handle slot.
 */
enum TlStatus tl_bundle_build(const struct TlTask *source,
                              const struct TlTask *target,
                              int32_t allow_near_singular,
                              struct TlGramBundle **out);

/**
 * # Safety
 * `bundle` must be live, `out` writable.
 */
enum TlStatus tl_bundle_summary(const struct TlGramBundle *bundle, struct TlBundleSummary *out);

/**
 * Transformed labels `H_PQ^T H_P^{-1} y_P` (length n_target).
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum TlStatus tl_bundle_transformed_labels(const struct TlGramBundle *bundle,
                                           double *out,
                                           size_t len);

/**
 * # Safety
 * `bundle` must be null or a handle not yet freed.
 */
void tl_bundle_free(struct TlGramBundle *bundle);

/**
 * Seeded two-layer network of width `m` with first-layer scale `kappa`.
 *
 * # Safety
 * `out` must be a writable handle slot.
 */
enum TlStatus tl_net_init(size_t d,
                          size_t m,
                          double kappa,
                          uint64_t seed,
                          struct TlShallowNet **out);

/**
 * Network outputs on the task's inputs (length n).
 *
 * # Safety
 * Handles must be live; `out` must point to `len` writable doubles.
 */
enum TlStatus tl_net_forward(const struct TlShallowNet *net,
                             const struct TlTask *task,
                             double *out,
                             size_t len);

/**
 * Run `steps` full-batch gradient-descent steps in place. The final
 * residual norm is stored in `final_residual` when it is non-null.
 *
 * # Safety
 * `net` must be a live handle owned by the caller; `task` live.
 */
enum TlStatus tl_net_train(struct TlShallowNet *net,
                           const struct TlTask *task,
                           double eta,
                           size_t steps,
                           double *final_residual);

/**
 * Write a binary checkpoint.
 *
 * # Safety
 * `net` must be live; `path` a NUL-terminated UTF-8 string.
 */
enum TlStatus tl_net_save(const struct TlShallowNet *net, const char *path);

/**
 * Read a binary checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` a writable slot.
 */
enum TlStatus tl_net_load(const char *path, struct TlShallowNet **out);

/**
 * # Safety
 * `net` must be null or a handle not yet freed.
 */
void tl_net_free(struct TlShallowNet *net);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRANSFERLAB_H */
