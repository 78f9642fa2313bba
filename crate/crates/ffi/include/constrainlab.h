#ifndef CONSTRAINLAB_H
#define CONSTRAINLAB_H

#include <stddef.h>
#include <stdint.h>

typedef enum clab_status {
  CLAB_STATUS_OK = 0,
  CLAB_STATUS_INVALID_ARGUMENT = 1,
  CLAB_STATUS_NULL_POINTER = 2,
  CLAB_STATUS_IO = 3,
  CLAB_STATUS_FORMAT = 4,
  CLAB_STATUS_TOKEN_OUT_OF_RANGE = 5,
  CLAB_STATUS_ENUMERATION_GUARD = 6,
  /**
   * The metric is undefined for this input (e.g. sequence shorter than n).
   */
  CLAB_STATUS_UNDEFINED = 7,
  CLAB_STATUS_BUFFER_TOO_SMALL = 8,
  CLAB_STATUS_PANIC = 9,
  CLAB_STATUS_OTHER = 10,
} clab_status;

/**
 * A loaded model file.
 */
typedef struct clab_model clab_model;

/**
 * Samples drawn by `clab_sample`.
 */
typedef struct clab_sample_set clab_sample_set;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *clab_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *clab_version(void);

/**
 * Loads a model file written by `constrainlab fit`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_model` a valid pointer.
 */
enum clab_status clab_model_load(const char *path, struct clab_model **out_model);

/**
 * # Safety
 * `m` must come from `clab_model_load` and not be used afterwards. Null is ignored.
 */
void clab_model_free(struct clab_model *m);

/**
 * # Safety
 * `m` must be a live model handle and `out_size` a valid pointer.
 */
enum clab_status clab_model_vocab_size(const struct clab_model *m, size_t *out_size);

/**
 * Next-token probabilities given a source and a target prefix. `out_probs`
 * must hold `vocab_size` doubles.
 *
 * # Safety
 * Arrays must be valid for their stated lengths.
 */
enum clab_status clab_next_dist(const struct clab_model *m,
                                const uint32_t *source,
                                size_t source_len,
                                const uint32_t *prefix,
                                size_t prefix_len,
                                double *out_probs,
                                size_t out_cap);

/**
 * Greedy decoding. The output keeps its trailing EOS when it terminated.
 *
 * # Safety
 * Arrays must be valid for their stated lengths; `out_len` must be valid.
 * `out_logprob` may be null.
 */
enum clab_status clab_greedy(const struct clab_model *m,
                             const uint32_t *source,
                             size_t source_len,
                             size_t max_len,
                             uint32_t *out_tokens,
                             size_t out_cap,
                             size_t *out_len,
                             double *out_logprob);

/**
 * Best hypothesis of beam search with `beam_size` hypotheses.
 *
 * # Safety
 * As for `clab_greedy`.
 */
enum clab_status clab_beam_search(const struct clab_model *m,
                                  const uint32_t *source,
                                  size_t source_len,
                                  size_t beam_size,
                                  size_t max_len,
                                  uint32_t *out_tokens,
                                  size_t out_cap,
                                  size_t *out_len,
                                  double *out_logprob);

/**
 * Draws `n` ancestral samples; sample `i` depends only on `(seed, i)`.
 *
 * # Safety
 * `source` must be valid for `source_len`; `out_set` must be valid.
 */
enum clab_status clab_sample(const struct clab_model *m,
                             const uint32_t *source,
                             size_t source_len,
                             size_t n,
                             uint64_t seed,
                             size_t max_len,
                             struct clab_sample_set **out_set);

/**
 * # Safety
 * `s` must come from `clab_sample` and not be used afterwards. Null is ignored.
 */
void clab_sample_set_free(struct clab_sample_set *s);

/**
 * # Safety
 * `s` must be a live sample set and `out_len` valid.
 */
enum clab_status clab_sample_set_len(const struct clab_sample_set *s, size_t *out_len);

/**
 * Copies sample `index` (tokens and log-probability) into caller buffers.
 *
 * # Safety
 * As for `clab_greedy`.
 */
enum clab_status clab_sample_set_get(const struct clab_sample_set *s,
                                     size_t index,
                                     uint32_t *out_tokens,
                                     size_t out_cap,
                                     size_t *out_len,
                                     double *out_logprob);

/**
 * Monte-Carlo sequence entropy in nats.
 *
 * # Safety
 * `s` must be a live sample set and `out_value` valid.
 */
enum clab_status clab_entropy_estimate(const struct clab_sample_set *s, double *out_value);

/**
 * Total probability of the distinct sampled strings.
 *
 * # Safety
 * `s` must be a live sample set and `out_value` valid.
 */
enum clab_status clab_mass_coverage(const struct clab_sample_set *s, double *out_value);

/**
 * # Safety
 * `s` must be a live sample set and `out_value` valid.
 */
enum clab_status clab_unique_count(const struct clab_sample_set *s, size_t *out_value);

/**
 * Micro-averaged length ratio from per-pair lengths.
 *
 * # Safety
 * Both arrays must hold `n` elements.
 */
enum clab_status clab_length_ratio(const size_t *hyp_lens,
                                   const size_t *ref_lens,
                                   size_t n,
                                   double *out_value);

/**
 * Distinct n-grams over n-gram positions. Returns `CLAB_STATUS_UNDEFINED`
 * when the sequence is shorter than `n`.
 *
 * # Safety
 * `seq` must hold `len` elements.
 */
enum clab_status clab_unique_ngram_fraction(const uint32_t *seq,
                                            size_t len,
                                            size_t n,
                                            double *out_value);

/**
 * Corpus BLEU. Sentence `i` of each side spans
 * `tokens[offsets[i]..offsets[i+1]]`; both offset arrays hold `n + 1` entries.
 *
 * # Safety
 * Arrays must be valid for the lengths implied by the offsets.
 */
enum clab_status clab_bleu(const uint32_t *hyp_tokens,
                           const size_t *hyp_offsets,
                           const uint32_t *ref_tokens,
                           const size_t *ref_offsets,
                           size_t n,
                           double *out_value);

/**
 * Number of words kept when a sentence of `n_words` words is truncated to
 * level `s` (percent).
 *
 * # Safety
 * `out_value` must be valid.
 */
enum clab_status clab_truncate_len(size_t n_words, uint32_t s, size_t *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONSTRAINLAB_H */
