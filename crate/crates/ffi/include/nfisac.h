#ifndef NFISAC_H
#define NFISAC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Precoder selector for [`nfisac_design_compute`].
 */
typedef enum NfisacPrecoder {
  NFISAC_PRECODER_SLP = 0,
  NFISAC_PRECODER_BLP = 1,
} NfisacPrecoder;

/*
 Result codes; the nonzero values match the command-line exit codes
 where both exist.
 */
typedef enum NfisacStatus {
  NFISAC_STATUS_OK = 0,
  NFISAC_STATUS_IO = 1,
  NFISAC_STATUS_CONFIG = 2,
  NFISAC_STATUS_INFEASIBLE = 3,
  NFISAC_STATUS_SOLVER = 4,
  NFISAC_STATUS_INVALID_ARGUMENT = 5,
  NFISAC_STATUS_NULL_POINTER = 6,
  NFISAC_STATUS_PANIC = 7,
} NfisacStatus;

/*
 A run configuration.
 */
typedef struct NfisacConfig NfisacConfig;

/*
 One design and the scene it was computed for.
 */
typedef struct NfisacDesign NfisacDesign;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *nfisac_last_error_message(void);

/*
 Library version as a static nul-terminated string.
 */
const char *nfisac_version(void);

/*
 Writes a new configuration holding the desk-scale defaults to `*out`.

 # Safety
 `out` must be a valid pointer to writable storage.
 */
enum NfisacStatus nfisac_config_default(struct NfisacConfig **out);

/*
 Parses configuration text and writes the new handle to `*out`.

 # Safety
 `text` must be a nul-terminated string and `out` writable.
 */
enum NfisacStatus nfisac_config_parse(const char *text, struct NfisacConfig **out);

/*
 The effective configuration in file syntax; release it with
 [`nfisac_string_free`].

 # Safety
 `config` must be a live handle and `out` writable.
 */
enum NfisacStatus nfisac_config_to_text(const struct NfisacConfig *config, char **out);

/*
 Sets the run seed.

 # Safety
 `config` must be a live handle.
 */
enum NfisacStatus nfisac_config_set_seed(struct NfisacConfig *config, uint64_t seed);

/*
 Sets the directory that [`nfisac_run`] writes to.

 # Safety
 `config` must be a live handle and `dir` a nul-terminated string.
 */
enum NfisacStatus nfisac_config_set_output_dir(struct NfisacConfig *config, const char *dir);

/*
 # Safety
 `config` must be null or a handle not yet freed.
 */
void nfisac_config_free(struct NfisacConfig *config);

/*
 Runs the configured experiment, writing its files to the output
 directory.

 # Safety
 `config` must be a live handle.
 */
enum NfisacStatus nfisac_run(const struct NfisacConfig *config);

/*
 Solves one design of the configured scene at weight `rho`.

 # Safety
 `config` must be a live handle and `out` writable.
 */
enum NfisacStatus nfisac_design_compute(const struct NfisacConfig *config,
                                        enum NfisacPrecoder precoder,
                                        double rho,
                                        struct NfisacDesign **out);

/*
 # Safety
 `design` must be null or a handle not yet freed.
 */
void nfisac_design_free(struct NfisacDesign *design);

/*
 Reported SINR: `gamma'^2` for symbol-level designs, `gamma` for the
 block-level baseline (linear scale).

 # Safety
 `design` must be a live handle and `out` writable.
 */
enum NfisacStatus nfisac_design_sinr(const struct NfisacDesign *design, double *out);

/*
 Root CRB of all target angles (radians) and ranges (meters) for the
 design's relaxed covariance.

 # Safety
 `design` must be a live handle; both outputs writable.
 */
enum NfisacStatus nfisac_design_rcrb(const struct NfisacDesign *design,
                                     double *angle_out,
                                     double *range_out);

/*
 Shape of the transmitted block: `N` elements by `S` slots.

 # Safety
 `design` must be a live handle; both outputs writable.
 */
enum NfisacStatus nfisac_design_shape(const struct NfisacDesign *design,
                                      size_t *elements,
                                      size_t *slots);

/*
 Copies the transmitted block into `re` and `im`, column-major (all
 elements of slot 0 first). Both buffers must hold `len = N * S` values.

 # Safety
 `design` must be a live handle and `re`, `im` valid for `len` writes.
 */
enum NfisacStatus nfisac_design_symbols(const struct NfisacDesign *design,
                                        double *re,
                                        double *im,
                                        size_t len);

/*
 Design metrics as a JSON object; release it with
 [`nfisac_string_free`].

 # Safety
 `design` must be a live handle and `out` writable.
 */
enum NfisacStatus nfisac_design_metrics_json(const struct NfisacDesign *design, char **out);

/*
 # Safety
 `s` must be null or a string returned by this library, not yet freed.
 */
void nfisac_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NFISAC_H */
