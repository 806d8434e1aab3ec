/* C interface to the road affordance pipeline.
* Generated by cbindgen; do not edit by hand. */

#ifndef ROADAFF_H
#define ROADAFF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call. Anything but `Ok` leaves a message for
 * `roadaff_last_error`.
 */
typedef enum RoadaffStatus {
  /**
   * The call succeeded.
   */
  RoadaffStatus_Ok = 0,
  /**
   * The configuration is malformed or inconsistent.
   */
  RoadaffStatus_Config = 1,
  /**
   * A pipeline stage failed; artifacts before it are still on disk.
   */
  RoadaffStatus_Stage = 2,
  /**
   * A null pointer, bad UTF-8, or out-of-domain argument.
   */
  RoadaffStatus_Arg = 3,
  /**
   * Any other failure (I/O, numeric, internal).
   */
  RoadaffStatus_Runtime = 4,
} RoadaffStatus;

/**
 * Opaque pinhole camera for ground-point projection.
 */
typedef struct RoadaffCamera RoadaffCamera;

/**
 * Opaque run configuration; create, tweak, then hand to the pipeline.
 */
typedef struct RoadaffConfig RoadaffConfig;

/**
 * Weighted loss over the three heads, mirroring the training objective.
 */
typedef struct RoadaffLossBreakdown {
  double multilabel;
  double distance;
  double top1;
  double total;
} RoadaffLossBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Never null; do not
 * free.
 */
const char *roadaff_version(void);

/**
 * Message from the most recent failing call on this thread, empty if
 * none. The pointer stays valid until the next failing call on the same
 * thread; do not free.
 */
const char *roadaff_last_error(void);

/**
 * Free a string returned by this library (currently only
 * `roadaff_config_to_toml`). Accepts null.
 */
void roadaff_string_free(char *s);

/**
 * New configuration holding the built-in defaults. Free with
 * `roadaff_config_free`.
 */
struct RoadaffConfig *roadaff_config_new(void);

/**
 * Load a configuration from a TOML file; missing keys keep their
 * defaults. Null on failure (see `roadaff_last_error`).
 */
struct RoadaffConfig *roadaff_config_load(const char *path);

void roadaff_config_free(struct RoadaffConfig *cfg);

/**
 * Set one namespaced key, e.g. ("hdphmm.kappa", "30") or
 * ("net.lr", "1e-3"). Unknown keys and unparseable values fail.
 */
enum RoadaffStatus roadaff_config_set(struct RoadaffConfig *cfg,
                                      const char *key,
                                      const char *value);

/**
 * Set the global seed every stage derives its randomness from.
 */
enum RoadaffStatus roadaff_config_set_seed(struct RoadaffConfig *cfg, uint64_t seed);

/**
 * Set the directory artifacts are read from and written to.
 */
enum RoadaffStatus roadaff_config_set_workspace(struct RoadaffConfig *cfg, const char *path);

/**
 * Check cross-field consistency (the same check the pipeline runs first).
 */
enum RoadaffStatus roadaff_config_validate(const struct RoadaffConfig *cfg);

/**
 * Serialize the configuration to TOML. Free the result with
 * `roadaff_string_free`. Null on failure.
 */
char *roadaff_config_to_toml(const struct RoadaffConfig *cfg);

/**
 * New camera with the default mounting and intrinsics. Free with
 * `roadaff_camera_free`.
 */
struct RoadaffCamera *roadaff_camera_new(void);

/**
 * New camera copying the `[camera]` block of a configuration. Null on
 * failure.
 */
struct RoadaffCamera *roadaff_camera_from_config(const struct RoadaffConfig *cfg);

void roadaff_camera_free(struct RoadaffCamera *cam);

/**
 * Project a ground point given in the vehicle frame (meters forward,
 * meters to the left) into pixel coordinates. Fails with `Arg` when the
 * point is behind the camera or outside the image.
 */
enum RoadaffStatus roadaff_camera_project(const struct RoadaffCamera *cam,
                                          double forward_m,
                                          double left_m,
                                          double *out_u,
                                          double *out_v);

/**
 * Weighted training loss for one view's pooled outputs.
 *
 * `scores` and `distances` are the three per-class head outputs;
 * `labels` holds -1 (absent), 0 (unknown), +1 (present) per class;
 * `top1` is all zeros (no forced choice) or one +1 with -1 elsewhere;
 * `dist_targets` are meters. Classes with label 0 contribute nothing to
 * the presence term.
 */
enum RoadaffStatus roadaff_affordance_loss(const double *scores,
                                           const double *distances,
                                           const int8_t *labels,
                                           const int8_t *top1,
                                           const double *dist_targets,
                                           double w_multilabel,
                                           double w_distance,
                                           double w_top1,
                                           struct RoadaffLossBreakdown *out);

/**
 * Gradients of `roadaff_affordance_loss` with respect to the score and
 * distance heads; each output holds three values.
 */
enum RoadaffStatus roadaff_affordance_loss_grads(const double *scores,
                                                 const double *distances,
                                                 const int8_t *labels,
                                                 const int8_t *top1,
                                                 const double *dist_targets,
                                                 double w_multilabel,
                                                 double w_distance,
                                                 double w_top1,
                                                 double *out_score_grad,
                                                 double *out_dist_grad);

/**
 * Run every pipeline stage with this configuration, writing artifacts
 * into its workspace. Blocks until done; `Stage` reports which artifacts
 * exist via the manifest either way.
 */
enum RoadaffStatus roadaff_pipeline_run(const struct RoadaffConfig *cfg);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ROADAFF_H */
