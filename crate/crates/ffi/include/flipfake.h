#ifndef FLIPFAKE_H
#define FLIPFAKE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum FfStatus {
  FF_STATUS_OK = 0,
  FF_STATUS_NULL_POINTER = 1,
  FF_STATUS_INVALID_ARGUMENT = 2,
  FF_STATUS_IO = 3,
  FF_STATUS_PARSE = 4,
  /**
   * Impossible sequences, collapsed filters and similar numerical failures.
   */
  FF_STATUS_NUMERICAL = 5,
  FF_STATUS_PANIC = 6,
} FfStatus;

/**
 * Opaque labeled model bank.
 */
typedef struct FfBank FfBank;

/**
 * Opaque fitted model.
 */
typedef struct FfModel FfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library and valid until the next call on the same thread.
 */
const char *ff_last_error(void);

/**
 * Release a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ff_string_free(char *s);

/**
 * Load a model from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FfStatus ff_model_load(const char *path, struct FfModel **out);

/**
 * Parse a model from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum FfStatus ff_model_from_json(const char *json, struct FfModel **out);

/**
 * Serialize a model to JSON. Release the result with [`ff_string_free`].
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum FfStatus ff_model_to_json(const struct FfModel *model, char **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not have been freed.
 */
void ff_model_free(struct FfModel *model);

/**
 * Number of hidden states.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum FfStatus ff_model_states(const struct FfModel *model, uintptr_t *out);

/**
 * Log-likelihood of a 0/1 sequence. Impossible sequences yield `-inf`.
 *
 * # Safety
 * `flips` must point to `len` bytes; `out` must be writable.
 */
enum FfStatus ff_model_log_likelihood(const struct FfModel *model,
                                      const uint8_t *flips,
                                      uintptr_t len,
                                      double *out);

/**
 * Train a model on one sequence: jittered start with `states` hidden
 * states, EM, then (if `raise` is nonzero) one extra state and EM again.
 * `max_iters == 0` or `tol <= 0` selects the library defaults.
 *
 * # Safety
 * `flips` must point to `len` bytes; `out` must be writable.
 */
enum FfStatus ff_model_fit(const uint8_t *flips,
                           uintptr_t len,
                           uintptr_t states,
                           double jitter,
                           int32_t raise,
                           uintptr_t max_iters,
                           double tol,
                           uint64_t seed,
                           struct FfModel **out);

/**
 * Draw `len` flips from the model into `buf`.
 *
 * # Safety
 * `buf` must have room for `len` bytes.
 */
enum FfStatus ff_model_generate(const struct FfModel *model,
                                uintptr_t len,
                                uint64_t seed,
                                uint8_t *buf);

/**
 * Load a bank directory written by `flipfake train`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum FfStatus ff_bank_load(const char *dir, struct FfBank **out);

/**
 * Release a bank. Null is ignored.
 *
 * # Safety
 * `bank` must come from this library and not have been freed.
 */
void ff_bank_free(struct FfBank *bank);

/**
 * Number of models in the bank.
 *
 * # Safety
 * `bank` must be a live handle; `out` must be writable.
 */
enum FfStatus ff_bank_len(const struct FfBank *bank, uintptr_t *out);

/**
 * Label with the highest mean log-likelihood. The label is written as its
 * numeric code (0 Real, 1 Simulator, 2 MOM, 3 GAN, 4 Handwritten) and the
 * winning mean to `score`.
 *
 * # Safety
 * `bank` must be a live handle; `flips` must point to `len` bytes; the
 * outputs must be writable.
 */
enum FfStatus ff_bank_classify(const struct FfBank *bank,
                               const uint8_t *flips,
                               uintptr_t len,
                               uint32_t *label,
                               double *score);

/**
 * Simulate one sequence. `kind`: 0 trivial faker, 1 random sign change,
 * 2 real coin. Other parameters take the library defaults.
 *
 * # Safety
 * `buf` must have room for `len` bytes.
 */
enum FfStatus ff_simulate(uint32_t kind, uintptr_t len, uint64_t seed, uint8_t *buf);

/**
 * Branching particle filter error of a sequence against a fair coin, with
 * `particles` initial particles and otherwise default filter settings.
 * Smaller values look more like a real coin.
 *
 * # Safety
 * `flips` must point to `len` bytes; `out` must be writable.
 */
enum FfStatus ff_bpf_error(const uint8_t *flips,
                           uintptr_t len,
                           uintptr_t particles,
                           uint64_t seed,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLIPFAKE_H */
