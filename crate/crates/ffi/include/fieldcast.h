#ifndef FIELDCAST_H
#define FIELDCAST_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Electrode placement axis.
 */
typedef enum FcAxis {
  FC_AXIS_AP = 0,
  FC_AXIS_LR = 1,
} FcAxis;

/**
 * Result code of every fallible call.
 */
typedef enum FcStatus {
  FC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FC_STATUS_NULL_ARGUMENT = 1,
  /**
   * A file could not be read or written.
   */
  FC_STATUS_IO = 2,
  /**
   * A file or buffer was malformed.
   */
  FC_STATUS_FORMAT = 3,
  /**
   * Inputs were well-formed but unusable.
   */
  FC_STATUS_INVALID_INPUT = 4,
  /**
   * The solver or a fit failed numerically.
   */
  FC_STATUS_NUMERICAL = 5,
  /**
   * An internal panic was caught.
   */
  FC_STATUS_PANIC = 6,
} FcStatus;

/**
 * Scalar field on a grid, e.g. field magnitude in V/cm.
 */
typedef struct FcField FcField;

/**
 * Trained random-forest surrogate.
 */
typedef struct FcForest FcForest;

/**
 * Electrode pair placed on a volume.
 */
typedef struct FcLayout FcLayout;

/**
 * Trained multilinear baseline.
 */
typedef struct FcLinear FcLinear;

/**
 * Labelled head volume.
 */
typedef struct FcVolume FcVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length
 * excluding the terminator; pass a null `buf` to query it.
 */
size_t fc_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fc_version(void);

/**
 * Load a VVOL1 label volume.
 */
enum FcStatus fc_volume_load(const char *path, struct FcVolume **out);

/**
 * Build a volume from `n` x-fastest labels on a `dims` grid with
 * `spacing` in mm.
 */
enum FcStatus fc_volume_from_labels(const size_t *dims,
                                    const double *spacing,
                                    const uint8_t *labels,
                                    size_t n,
                                    struct FcVolume **out);

/**
 * Generate the default synthetic head on the given grid. `seed` draws
 * the shape jitter.
 */
enum FcStatus fc_phantom_make(const size_t *dims,
                              const double *spacing,
                              uint64_t seed,
                              struct FcVolume **out);

/**
 * Grid dimensions of a volume.
 */
enum FcStatus fc_volume_dims(const struct FcVolume *volume, size_t *dims);

void fc_volume_free(struct FcVolume *volume);

/**
 * Place an electrode pair with disc patches of `radius_mm` on the head
 * surface along `axis`.
 */
enum FcStatus fc_layout_place(const struct FcVolume *volume,
                              enum FcAxis axis,
                              double radius_mm,
                              struct FcLayout **out);

/**
 * Load a layout JSON file.
 */
enum FcStatus fc_layout_load(const char *path, struct FcLayout **out);

void fc_layout_free(struct FcLayout *layout);

/**
 * Reference solve with the default tissue table and solver settings;
 * yields the field magnitude in V/cm.
 */
enum FcStatus fc_solve_field(const struct FcVolume *volume,
                             const struct FcLayout *layout,
                             struct FcField **out);

/**
 * Load a VVOL1 scalar field.
 */
enum FcStatus fc_field_load(const char *path, struct FcField **out);

/**
 * Number of voxels in a field.
 */
size_t fc_field_len(const struct FcField *field);

/**
 * Copy the field's x-fastest values into `buf`, which must hold
 * `fc_field_len` doubles.
 */
enum FcStatus fc_field_values(const struct FcField *field, double *buf, size_t len);

/**
 * Write a field as VVOL1.
 */
enum FcStatus fc_field_save(const struct FcField *field, const char *path);

void fc_field_free(struct FcField *field);

/**
 * Load a forest model file.
 */
enum FcStatus fc_forest_load(const char *path, struct FcForest **out);

/**
 * Number of trees in a forest.
 */
size_t fc_forest_n_trees(const struct FcForest *forest);

/**
 * Copy the five feature importances (sigma, eps, d_e, d_c, d_l) into
 * `out`.
 */
enum FcStatus fc_forest_importances(const struct FcForest *forest, double *out);

/**
 * Predict `n_rows` row-major feature rows (sigma, eps, d_e, d_c, d_l)
 * into `out`.
 */
enum FcStatus fc_forest_predict_rows(const struct FcForest *forest,
                                     const double *rows,
                                     size_t n_rows,
                                     double *out);

/**
 * Compute features for every voxel and predict the field magnitude.
 */
enum FcStatus fc_forest_predict_volume(const struct FcForest *forest,
                                       const struct FcVolume *volume,
                                       const struct FcLayout *layout,
                                       struct FcField **out);

void fc_forest_free(struct FcForest *forest);

/**
 * Load a linear model JSON file.
 */
enum FcStatus fc_linear_load(const char *path, struct FcLinear **out);

/**
 * As [`fc_forest_predict_rows`] for the linear model.
 */
enum FcStatus fc_linear_predict_rows(const struct FcLinear *model,
                                     const double *rows,
                                     size_t n_rows,
                                     double *out);

/**
 * As [`fc_forest_predict_volume`] for the linear model.
 */
enum FcStatus fc_linear_predict_volume(const struct FcLinear *model,
                                       const struct FcVolume *volume,
                                       const struct FcLayout *layout,
                                       struct FcField **out);

void fc_linear_free(struct FcLinear *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIELDCAST_H */
