#ifndef HETMERGE_H
#define HETMERGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum HmStatus {
  HM_STATUS_OK = 0,
  HM_STATUS_NULL_POINTER = 1,
  HM_STATUS_INVALID_ARGUMENT = 2,
  HM_STATUS_IO = 3,
  HM_STATUS_PARSE = 4,
  HM_STATUS_INCOMPATIBLE_MODELS = 5,
  HM_STATUS_SIMPLEX_VIOLATION = 6,
  HM_STATUS_MERGE_OVERFLOW = 7,
  HM_STATUS_EMPTY_INPUT = 8,
  HM_STATUS_INTERNAL = 9,
  HM_STATUS_PANIC = 10,
} HmStatus;

/**
 * Opaque evaluation set with fixed rescoring weights.
 */
typedef struct HmEvalSet HmEvalSet;

/**
 * Opaque n-gram model.
 */
typedef struct HmNGram HmNGram;

/**
 * Opaque neural LM.
 */
typedef struct HmNeural HmNeural;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or NULL after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *hm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hm_version(void);

/**
 * Number of layers in every neural LM (rows of the θ matrix).
 */
size_t hm_neural_num_layers(void);

/**
 * Loads an n-gram model written by the library.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HmStatus hm_ngram_load(const char *path, struct HmNGram **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum HmStatus hm_ngram_save(const struct HmNGram *model, const char *path);

/**
 * Releases a handle; NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void hm_ngram_free(struct HmNGram *model);

/**
 * Natural-log probability of a token sequence (end-of-sentence included).
 *
 * # Safety
 * `tokens` must point to `len` ids; `out` must be valid.
 */
enum HmStatus hm_ngram_score(const struct HmNGram *model,
                             const uint32_t *tokens,
                             size_t len,
                             double *out);

/**
 * Weighted merge `Σ φ_i · counts_i` of `n` compatible models.
 *
 * # Safety
 * `models` must hold `n` live handles and `phi` `n` weights.
 */
enum HmStatus hm_ngram_merge(const struct HmNGram *const *models,
                             size_t n,
                             const double *phi,
                             struct HmNGram **out);

/**
 * Loads a neural LM written by the library.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HmStatus hm_neural_load(const char *path, struct HmNeural **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum HmStatus hm_neural_save(const struct HmNeural *model, const char *path);

/**
 * Releases a handle; NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void hm_neural_free(struct HmNeural *model);

/**
 * Natural-log probability of a token sequence (end-of-sentence included).
 *
 * # Safety
 * `tokens` must point to `len` ids; `out` must be valid.
 */
enum HmStatus hm_neural_score(const struct HmNeural *model,
                              const uint32_t *tokens,
                              size_t len,
                              double *out);

/**
 * Per-layer merge: `theta` is a row-major `hm_neural_num_layers() × n`
 * matrix whose rows each lie on the simplex.
 *
 * # Safety
 * `models` must hold `n` live handles and `theta` `layers · n` weights.
 */
enum HmStatus hm_neural_merge(const struct HmNeural *const *models,
                              size_t n,
                              const double *theta,
                              struct HmNeural **out);

/**
 * Loads an N-best evaluation set and fixes its rescoring weights.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HmStatus hm_evalset_load(const char *path,
                              double beta_ngram,
                              double beta_neural,
                              struct HmEvalSet **out);

/**
 * Releases a handle; NULL is ignored.
 *
 * # Safety
 * `set` must be NULL or a handle not yet freed.
 */
void hm_evalset_free(struct HmEvalSet *set);

/**
 * Number of items (reference sentences) in the set.
 *
 * # Safety
 * `set` must be a live handle and `out` valid.
 */
enum HmStatus hm_evalset_len(const struct HmEvalSet *set, size_t *out);

/**
 * Corpus CER of the pair after N-best rescoring.
 *
 * # Safety
 * All handles must be live and `out` valid.
 */
enum HmStatus hm_evaluate_pair(const struct HmEvalSet *set,
                               const struct HmNGram *ngram,
                               const struct HmNeural *neural,
                               double *out);

/**
 * Character error rate `levenshtein(hyp, ref) / len(ref)`.
 *
 * # Safety
 * `hyp` and `reference` must point to the given numbers of ids.
 */
enum HmStatus hm_cer(const uint32_t *hyp,
                     size_t hyp_len,
                     const uint32_t *reference,
                     size_t ref_len,
                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HETMERGE_H */
