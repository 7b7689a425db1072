#ifndef ECTL_H
#define ECTL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `ECTL_STATUS_OK` is zero; everything else is a failure.
 */
typedef enum EctlStatus {
  ECTL_STATUS_OK = 0,
  ECTL_STATUS_NULL_POINTER = 1,
  ECTL_STATUS_INVALID_ARGUMENT = 2,
  ECTL_STATUS_PRIME_SEARCH_EXHAUSTED = 3,
  ECTL_STATUS_OUT_OF_RANGE = 4,
  ECTL_STATUS_OVERFLOW = 5,
  ECTL_STATUS_CONFIG = 6,
  ECTL_STATUS_SIMULATION = 7,
  ECTL_STATUS_IO = 8,
  ECTL_STATUS_PANIC = 9,
} EctlStatus;

typedef struct EctlCiphertext EctlCiphertext;

/**
 * Key pair plus the encryption randomness stream.
 */
typedef struct EctlKeyPair EctlKeyPair;

/**
 * Summary of a completed run.
 */
typedef struct EctlRunSummary {
  uint64_t steps;
  /**
   * Capture time, or -1 when the run never left zoom-out.
   */
  int64_t t0;
  uint64_t trigger_count;
  double final_norm;
  uint64_t key_bits;
} EctlRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Generates a key pair of `bits` bits, reproducible from `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum EctlStatus ectl_keygen(uint64_t bits, uint64_t seed, struct EctlKeyPair **out);

/**
 * Key pair from explicit primes (small keys for experiments).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum EctlStatus ectl_keypair_from_primes(uint64_t p,
                                         uint64_t q,
                                         uint64_t seed,
                                         struct EctlKeyPair **out);

/**
 * Bit length of the modulus N, or 0 for a null handle.
 *
 * # Safety
 * `kp` must be null or a live handle from this library.
 */
uint64_t ectl_keypair_bits(const struct EctlKeyPair *kp);

/**
 * # Safety
 * `kp` must be null or a handle from this library not yet freed.
 */
void ectl_keypair_free(struct EctlKeyPair *kp);

/**
 * Encrypts a signed integer (encoded as a residue mod N, |m| < N/3).
 *
 * # Safety
 * `kp` must be a live handle; `out` must be valid for one write.
 */
enum EctlStatus ectl_encrypt_i64(struct EctlKeyPair *kp, int64_t m, struct EctlCiphertext **out);

/**
 * Decrypts and decodes a signed integer.
 *
 * # Safety
 * `kp` and `ct` must be live handles; `out` must be valid for one write.
 */
enum EctlStatus ectl_decrypt_i64(const struct EctlKeyPair *kp,
                                 const struct EctlCiphertext *ct,
                                 int64_t *out);

/**
 * Ciphertext of the sum of the two plaintexts.
 *
 * # Safety
 * All handles must be live; `out` must be valid for one write.
 */
enum EctlStatus ectl_add(const struct EctlKeyPair *kp,
                         const struct EctlCiphertext *a,
                         const struct EctlCiphertext *b,
                         struct EctlCiphertext **out);

/**
 * Ciphertext of `k` times the plaintext; negative `k` is taken mod N.
 *
 * # Safety
 * All handles must be live; `out` must be valid for one write.
 */
enum EctlStatus ectl_scalar_mult(const struct EctlKeyPair *kp,
                                 const struct EctlCiphertext *ct,
                                 int64_t k,
                                 struct EctlCiphertext **out);

/**
 * # Safety
 * `ct` must be null or a handle from this library not yet freed.
 */
void ectl_ciphertext_free(struct EctlCiphertext *ct);

/**
 * Runs a TOML config file exactly like `ectl run --config PATH`.
 *
 * # Safety
 * `config_path` must be a nul-terminated string; `out` may be null.
 */
enum EctlStatus ectl_run_config(const char *config_path, struct EctlRunSummary *out);

/**
 * Message for the last failure on this thread, or null after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *ectl_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *ectl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECTL_H */
