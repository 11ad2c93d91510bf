#ifndef SLF_LAB_H
#define SLF_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlfStatus {
  SLF_STATUS_OK = 0,
  SLF_STATUS_NULL_POINTER = 1,
  SLF_STATUS_INVALID_ARGUMENT = 2,
  SLF_STATUS_INPUT_ERROR = 3,
  SLF_STATUS_NUMERICAL_ERROR = 4,
  SLF_STATUS_BUFFER_TOO_SMALL = 5,
  SLF_STATUS_PANIC = 6,
} SlfStatus;

typedef enum SlfWindowKind {
  SLF_WINDOW_KIND_NORMALIZED = 0,
  SLF_WINDOW_KIND_INVERSE_AREA = 1,
} SlfWindowKind;

typedef enum SlfAlgorithm {
  SLF_ALGORITHM_ONLINE = 0,
  SLF_ALGORITHM_BASELINE = 1,
  SLF_ALGORITHM_ALT_MIN = 2,
} SlfAlgorithm;

/**
 * Opaque learner handle.
 */
typedef struct SlfLearner SlfLearner;

/**
 * Grid, window and solver settings of a learner.
 */
typedef struct SlfLearnerConfig {
  size_t px;
  size_t py;
  double pixel_size;
  double origin_x;
  double origin_y;
  enum SlfAlgorithm algorithm;
  enum SlfWindowKind window;
  double eta;
  double nu;
  double sigma;
  double lam1;
  double lam2;
  double lam3;
  double eps;
  double radius;
  size_t inner_iters;
  double inner_tol;
  uint64_t seed;
} SlfLearnerConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *slf_last_error_message(void);

/**
 * Triangular index of the link between pixels `i` and `j` (either order).
 *
 * # Safety
 * `out` must be null or point to writable memory.
 */
enum SlfStatus slf_link_index(size_t i, size_t j, size_t pixels, uint64_t *out);

/**
 * Window weight for link length `phi1` and pixel detour `phi2`.
 *
 * # Safety
 * `out` must be null or point to writable memory.
 */
enum SlfStatus slf_window_weight(enum SlfWindowKind kind,
                                 double eta,
                                 double nu,
                                 double phi1,
                                 double phi2,
                                 double *out);

/**
 * Shadowing (dB) left after removing free-space loss from a measurement.
 *
 * # Safety
 * `out` must be null or point to writable memory.
 */
enum SlfStatus slf_derive_shadowing(double rx_power_dbm,
                                    double distance_m,
                                    double p_tx_dbm,
                                    double pl0,
                                    double d0,
                                    double delta,
                                    double *out);

/**
 * `|estimate - truth|^2 / |truth|^2` over `len` entries.
 *
 * # Safety
 * `estimate` and `truth` must point to `len` readable doubles.
 */
enum SlfStatus slf_nmse(const double *estimate, const double *truth, size_t len, double *out);

/**
 * Fills `out` with the default settings (a 20x15 grid of 1 m pixels).
 *
 * # Safety
 * `out` must be null or point to writable memory.
 */
enum SlfStatus slf_learner_config_default(struct SlfLearnerConfig *out);

/**
 * Creates a learner. On success `*out` owns a handle that must be released
 * with `slf_learner_free`.
 *
 * # Safety
 * `config` must point to a valid config; `out` to writable memory.
 */
enum SlfStatus slf_learner_new(const struct SlfLearnerConfig *config, struct SlfLearner **out);

/**
 * Releases a learner; null is ignored.
 *
 * # Safety
 * `learner` must come from `slf_learner_new` and not be used afterwards.
 */
void slf_learner_free(struct SlfLearner *learner);

/**
 * Processes one batch of `len` shadowing measurements on links `(i[k], j[k])`.
 *
 * # Safety
 * `learner` must be a live handle; the arrays must hold `len` entries.
 */
enum SlfStatus slf_learner_step(struct SlfLearner *learner,
                                const size_t *i,
                                const size_t *j,
                                const double *shadow_db,
                                size_t len);

/**
 * Number of pixels of the learner's grid.
 *
 * # Safety
 * `learner` must be a live handle or null.
 */
enum SlfStatus slf_learner_pixels(const struct SlfLearner *learner, size_t *out);

/**
 * Number of batches processed so far.
 *
 * # Safety
 * `learner` must be a live handle or null.
 */
enum SlfStatus slf_learner_batches(const struct SlfLearner *learner, size_t *out);

/**
 * Copies the current field estimate into `buf` (`len` must cover all pixels).
 *
 * # Safety
 * `learner` must be a live handle; `buf` must hold `len` writable doubles.
 */
enum SlfStatus slf_learner_field(const struct SlfLearner *learner, double *buf, size_t len);

/**
 * Predicted shadowing (dB) between two arbitrary points.
 *
 * # Safety
 * `learner` must be a live handle; `out` writable.
 */
enum SlfStatus slf_learner_predict_shadow(const struct SlfLearner *learner,
                                          double x1,
                                          double y1,
                                          double x2,
                                          double y2,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLF_LAB_H */
