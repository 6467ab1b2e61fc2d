#ifndef WROM_H
#define WROM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Matrices held by a `WromRom`.
typedef enum WromRomMatrix {
  WROM_ROM_MATRIX_CHOLESKY = 0,
  WROM_ROM_MATRIX_PROPAGATOR = 1,
  WROM_ROM_MATRIX_WAVE_OPERATOR = 2,
  WROM_ROM_MATRIX_MASS = 3,
} WromRomMatrix;

// Result codes.
typedef enum WromStatus {
  WROM_STATUS_OK = 0,
  WROM_STATUS_NULL_POINTER = 1,
  WROM_STATUS_INVALID_INPUT = 2,
  WROM_STATUS_NUMERICAL = 3,
  WROM_STATUS_FACTORIZATION = 4,
  WROM_STATUS_DIVERGENCE = 5,
  WROM_STATUS_IO = 6,
  WROM_STATUS_BUFFER_TOO_SMALL = 7,
  WROM_STATUS_PANIC = 8,
} WromStatus;

// Parsed configuration.
typedef struct WromConfig WromConfig;

// Wave-speed field on a grid.
typedef struct WromMedium WromMedium;

// Propagator and wave-operator ROMs.
typedef struct WromRom WromRom;

// Data series `D_j`, `D̈_j`.
typedef struct WromSeries WromSeries;

// Relative data-fit errors of a ROM.
typedef struct WromFitReport {
  double family1;
  double family2;
  double propagated;
  double mass_residual;
  size_t truncation_rank;
  size_t dim;
} WromFitReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty after a success. Valid until the next call.
const char *wrom_last_error(void);

// Library version as a static NUL-terminated string.
const char *wrom_version(void);

// Configuration from a named parameter set.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum WromStatus wrom_config_preset(const char *name, struct WromConfig **out);

// Configuration parsed from INI text.
//
// # Safety
// `source` must be a NUL-terminated string and `out` a valid pointer.
enum WromStatus wrom_config_parse(const char *source, struct WromConfig **out);

// Applies an override `section.key=value`.
//
// # Safety
// `config` must come from this library and `assignment` be a NUL-terminated string.
enum WromStatus wrom_config_set(struct WromConfig *config, const char *assignment);

// # Safety
// `config` must come from this library or be null.
void wrom_config_free(struct WromConfig *config);

// Medium described by a configuration.
//
// # Safety
// `config` must come from this library and `out` be a valid pointer.
enum WromStatus wrom_medium_from_config(const struct WromConfig *config, struct WromMedium **out);

// Medium from `nx·ny` speeds with flat index `ix·ny + iy`.
//
// # Safety
// `speed` must point to `nx·ny` values and `out` be a valid pointer.
enum WromStatus wrom_medium_new(size_t nx,
                                size_t ny,
                                double h,
                                double c_ref,
                                const double *speed,
                                struct WromMedium **out);

// Grid size of a medium.
//
// # Safety
// `medium` must come from this library; `nx` and `ny` must be valid pointers.
enum WromStatus wrom_medium_dims(const struct WromMedium *medium, size_t *nx, size_t *ny);

// Copies the speeds, flat index `ix·ny + iy`, into `buf`.
//
// # Safety
// `medium` must come from this library and `buf` hold `len` values.
enum WromStatus wrom_medium_speed(const struct WromMedium *medium, double *buf, size_t len);

// # Safety
// `medium` must come from this library or be null.
void wrom_medium_free(struct WromMedium *medium);

// Correlation of two media over the configured inversion region.
//
// # Safety
// All handles must come from this library and `out` be a valid pointer.
enum WromStatus wrom_assess(const struct WromConfig *config,
                            const struct WromMedium *truth,
                            const struct WromMedium *estimate,
                            double *out);

// Simulates the configured acquisition in `medium` and returns its data series.
//
// # Safety
// Handles must come from this library and `out` be a valid pointer.
enum WromStatus wrom_series_simulate(const struct WromConfig *config,
                                     const struct WromMedium *medium,
                                     struct WromSeries **out);

// Series from `2n` column-major `m × m` matrices stored back to back in `d` and `ddot`.
//
// # Safety
// `d` and `ddot` must each point to `2n·m·m` values and `out` be a valid pointer.
enum WromStatus wrom_series_new(size_t m,
                                size_t n,
                                double tau,
                                const double *d,
                                const double *ddot,
                                struct WromSeries **out);

// Array size `m` and ROM order `n` of a series.
//
// # Safety
// `series` must come from this library; `m` and `n` must be valid pointers.
enum WromStatus wrom_series_dims(const struct WromSeries *series, size_t *m, size_t *n);

// Copies `D_j` (or `D̈_j` when `second` is nonzero), column-major, into `buf`.
//
// # Safety
// `series` must come from this library and `buf` hold `len` values.
enum WromStatus wrom_series_matrix(const struct WromSeries *series,
                                   size_t j,
                                   int32_t second,
                                   double *buf,
                                   size_t len);

// # Safety
// `series` must come from this library or be null.
void wrom_series_free(struct WromSeries *series);

// Builds the ROM pair; `trunc_tol` is the relative mass-matrix eigenvalue floor.
//
// # Safety
// `series` must come from this library and `out` be a valid pointer.
enum WromStatus wrom_rom_build(const struct WromSeries *series,
                               double trunc_tol,
                               struct WromRom **out);

// Side length `n·m` of the ROM matrices.
//
// # Safety
// `rom` must come from this library and `dim` be a valid pointer.
enum WromStatus wrom_rom_dim(const struct WromRom *rom, size_t *dim);

// Copies one ROM matrix, column-major, into `buf`.
//
// # Safety
// `rom` must come from this library and `buf` hold `len` values.
enum WromStatus wrom_rom_matrix(const struct WromRom *rom,
                                enum WromRomMatrix which,
                                double *buf,
                                size_t len);

// Data-fit errors of a ROM against the series it was built from.
//
// # Safety
// Handles must come from this library and `out` be a valid pointer.
enum WromStatus wrom_rom_fit(const struct WromRom *rom,
                             const struct WromSeries *series,
                             struct WromFitReport *out);

// # Safety
// `rom` must come from this library or be null.
void wrom_rom_free(struct WromRom *rom);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WROM_H */
