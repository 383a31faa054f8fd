#ifndef ODT_H
#define ODT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  ODT_STATUS_OK = 0,
  ODT_STATUS_NULL_POINTER = 1,
  ODT_STATUS_INVALID_UTF8 = 2,
  ODT_STATUS_BUFFER_TOO_SMALL = 3,
  ODT_STATUS_INVALID_DIMENSIONS = 10,
  ODT_STATUS_INVALID_PARAMETER = 11,
  ODT_STATUS_GRID_MISMATCH = 12,
  ODT_STATUS_OUT_OF_BAND_ILLUMINATION = 13,
  ODT_STATUS_NEGATIVE_INTENSITY = 14,
  ODT_STATUS_INCONSISTENT_DATASET = 15,
  ODT_STATUS_DIVERGED = 16,
  ODT_STATUS_NO_RELIABLE_OVERLAP = 17,
  ODT_STATUS_SCHEMA = 18,
  ODT_STATUS_PAYLOAD_LENGTH = 19,
  ODT_STATUS_NON_FINITE_PAYLOAD = 20,
  ODT_STATUS_IO = 21,
  ODT_STATUS_IMAGE = 22,
  ODT_STATUS_PANIC = 99,
} OdtStatus;

/**
 * Intensity images with their illuminations and acquisition geometry.
 */
typedef struct OdtDataset OdtDataset;

/**
 * Outcome of a reconstruction: volume and per-epoch cost.
 */
typedef struct OdtReconstruction OdtReconstruction;

/**
 * Complex refractive-index volume, `(layers, nx, ny)` with `ny` fastest.
 */
typedef struct OdtVolume OdtVolume;

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *odt_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void odt_string_free(char *s);

/**
 * Library version as a static nul-terminated string.
 */
const char *odt_version(void);

/**
 * Builds a volume from separate real and imaginary buffers of
 * `layers * nx * ny` values each, `ny` fastest.
 *
 * # Safety
 * `re` and `im` must point to that many readable doubles; `out` must be writable.
 */
OdtStatus odt_volume_new(size_t layers,
                         size_t nx,
                         size_t ny,
                         double dz_um,
                         double pixel_pitch_um,
                         double n_medium,
                         const double *re,
                         const double *im,
                         OdtVolume **out);

/**
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
OdtStatus odt_volume_load(const char *path, OdtVolume **out);

/**
 * # Safety
 * `volume` must be a live handle; `path` a nul-terminated string.
 */
OdtStatus odt_volume_save(const OdtVolume *volume, const char *path);

/**
 * Writes `[layers, nx, ny]` into `dims`.
 *
 * # Safety
 * `volume` must be a live handle; `dims` must hold three values.
 */
OdtStatus odt_volume_dims(const OdtVolume *volume, size_t *dims);

/**
 * Copies the real and imaginary parts into `re` and `im`, each of
 * capacity `len`. Fails with `BufferTooSmall` if `len` is short.
 *
 * # Safety
 * `volume` must be a live handle; `re` and `im` must hold `len` doubles.
 */
OdtStatus odt_volume_copy(const OdtVolume *volume, double *re, double *im, size_t len);

/**
 * # Safety
 * `volume` must come from this library and not be freed twice. Null is ignored.
 */
void odt_volume_free(OdtVolume *volume);

/**
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
OdtStatus odt_dataset_load(const char *path, OdtDataset **out);

/**
 * # Safety
 * `dataset` must be a live handle; `path` a nul-terminated string.
 */
OdtStatus odt_dataset_save(const OdtDataset *dataset, const char *path);

/**
 * Number of angles, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t odt_dataset_len(const OdtDataset *dataset);

/**
 * Estimates every illumination wavevector. `out` receives the corrected
 * dataset; `report_json`, if not null, receives the per-angle report.
 *
 * # Safety
 * `dataset` must be a live handle; `out` must be writable.
 */
OdtStatus odt_calibrate(const OdtDataset *dataset, OdtDataset **out, char **report_json);

/**
 * # Safety
 * `dataset` must come from this library and not be freed twice. Null is ignored.
 */
void odt_dataset_free(OdtDataset *dataset);

/**
 * Runs the solver. `config_json` may be null for defaults; omitted keys
 * take their default values.
 *
 * # Safety
 * `dataset` must be a live handle; `config_json` null or nul-terminated;
 * `out` writable.
 */
OdtStatus odt_reconstruct(const OdtDataset *dataset,
                          const char *config_json,
                          OdtReconstruction **out);

/**
 * Number of completed epochs, or 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t odt_reconstruction_epochs(const OdtReconstruction *result);

/**
 * Copies the per-epoch cost into `cost` of capacity `len`.
 *
 * # Safety
 * `result` must be a live handle; `cost` must hold `len` doubles.
 */
OdtStatus odt_reconstruction_cost(const OdtReconstruction *result, double *cost, size_t len);

/**
 * Copies the reconstructed volume into a new handle.
 *
 * # Safety
 * `result` must be a live handle; `out` writable.
 */
OdtStatus odt_reconstruction_volume(const OdtReconstruction *result, OdtVolume **out);

/**
 * # Safety
 * `result` must come from this library and not be freed twice. Null is ignored.
 */
void odt_reconstruction_free(OdtReconstruction *result);

/**
 * Registers and fuses the volumes listed in a manifest file. A
 * non-positive `min_confidence` selects the manifest's value or the default.
 *
 * # Safety
 * `manifest_path` must be nul-terminated; `out` writable.
 */
OdtStatus odt_stitch_manifest(const char *manifest_path, double min_confidence, OdtVolume **out);

#endif  /* ODT_H */
