#ifndef SHAPCMI_H
#define SHAPCMI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible FFI call.
 */
typedef enum ShapcmiStatus {
  Ok = 0,
  /**
   * Null pointer or zero-length buffer where data was required.
   */
  InvalidArgument = 1,
  /**
   * Key shorter than the 16-byte minimum.
   */
  InvalidKey = 2,
  /**
   * Input rejected (empty column, non-finite value, bad bin count).
   */
  InputError = 3,
  /**
   * Intersection counts violate the quad ordering invariant.
   */
  ProtocolCorruption = 4,
} ShapcmiStatus;

/**
 * Opaque handle to a session secret key.
 */
typedef struct ShapcmiKey ShapcmiKey;

/**
 * The four intersection cardinalities for one observed value combination.
 */
typedef struct ShapcmiQuad {
  uint64_t a;
  uint64_t b;
  uint64_t c;
  uint64_t d;
} ShapcmiQuad;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a key handle from `len` raw bytes. On success writes the handle
 * to `out_key`; release it with `shapcmi_key_free`.
 */
enum ShapcmiStatus shapcmi_key_new(const uint8_t *bytes,
                                   uintptr_t len,
                                   struct ShapcmiKey **out_key);

void shapcmi_key_free(struct ShapcmiKey *key);

/**
 * Double keyed hash of a raw ID. `out_digest` must have room for 32 bytes.
 */
enum ShapcmiStatus shapcmi_encrypt_id(const struct ShapcmiKey *key,
                                      const uint8_t *raw_id,
                                      uintptr_t raw_id_len,
                                      uint8_t *out_digest);

/**
 * Equal-width binning over the column's own min/max. `out_bins` must have
 * room for `len` entries.
 */
enum ShapcmiStatus shapcmi_bins_equal_width(const double *values,
                                            uintptr_t len,
                                            uintptr_t bin_count,
                                            uint32_t *out_bins);

/**
 * One bin per distinct value, indexed by ascending rank.
 */
enum ShapcmiStatus shapcmi_bins_categorical(const double *values,
                                            uintptr_t len,
                                            uint32_t *out_bins);

/**
 * CMI in nats reconstructed from `len` intersection quads with `n` common
 * IDs.
 */
enum ShapcmiStatus shapcmi_cmi_from_quads(const struct ShapcmiQuad *quads,
                                          uintptr_t len,
                                          uint64_t n,
                                          double *out_cmi);

/**
 * Arithmetic mean of per-permutation CMIs: the Shapley estimate for one
 * feature.
 */
enum ShapcmiStatus shapcmi_shapley_mean(const double *cmis, uintptr_t len, double *out_value);

const char *shapcmi_version(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SHAPCMI_H */
