#ifndef COT_CURATE_H
#define COT_CURATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Violation bits in [`CcVerdict::violations`].
#define CC_VIOLATION_LENGTH_EXCEEDED 1

#define CC_VIOLATION_MISSING_VISUAL 2

#define CC_VIOLATION_MISSING_SEMANTIC 4

#define CC_VIOLATION_LOGICAL_INCONSISTENCY 8

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_POINTER = 1,
  CC_STATUS_INVALID_UTF8 = 2,
  CC_STATUS_RESERVED_TAG_IN_CONTENT = 3,
  CC_STATUS_MISSING_TAG = 4,
  CC_STATUS_MALFORMED_NESTING = 5,
  CC_STATUS_TRAILING_GARBAGE = 6,
  CC_STATUS_EMPTY_CORPUS = 7,
  CC_STATUS_LENGTH_MISMATCH = 8,
  CC_STATUS_IO = 9,
  CC_STATUS_CONFIG = 10,
  CC_STATUS_INVALID_ARGUMENT = 11,
  CC_STATUS_PANIC = 12,
} CcStatus;

// Accumulates (hypothesis, reference) pairs for corpus-level scoring.
typedef struct CcBleuCorpus CcBleuCorpus;

// Rationale evaluator with a fixed configuration.
typedef struct CcEvaluator CcEvaluator;

typedef struct CcVerdict {
  bool passed;
  // Bitwise OR of `CC_VIOLATION_*`.
  uint32_t violations;
  size_t token_count;
} CcVerdict;

typedef struct CcBleuReport {
  // BLEU-1 .. BLEU-4.
  double bleu[4];
  // Modified n-gram precisions p_1 .. p_4.
  double precisions[4];
  double brevity_penalty;
  size_t hyp_len;
  size_t ref_len;
} CcBleuReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after success.
// The pointer stays valid until the next call on this thread.
const char *cc_last_error_message(void);

// Library version as a static string.
const char *cc_version(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must be NULL or a pointer returned by this library and not yet freed.
void cc_string_free(char *s);

// Encodes `<answer>A</answer><thinking>T</thinking>` into `*out`.
//
// # Safety
// `answer` and `thinking` must be NUL-terminated strings; `out` must be
// a valid pointer.
enum CcStatus cc_tagged_emit(const char *answer, const char *thinking, char **out);

// Decodes a tagged sample into `*answer_out` and `*thinking_out`.
//
// # Safety
// `text` must be a NUL-terminated string; both out pointers must be valid.
enum CcStatus cc_tagged_parse(const char *text, char **answer_out, char **thinking_out);

// Token count of `text` under the script detected from the text itself.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be valid.
enum CcStatus cc_count_tokens(const char *text, size_t *out);

// Evaluator with the built-in lexicons, rules and `l_max = 100`.
//
// # Safety
// `out` must be a valid pointer.
enum CcStatus cc_evaluator_new_default(struct CcEvaluator **out);

// Evaluator from a TOML evaluator config file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid.
enum CcStatus cc_evaluator_from_file(const char *path, struct CcEvaluator **out);

// Sets the length bound. Zero is rejected.
//
// # Safety
// `evaluator` must be a live handle.
enum CcStatus cc_evaluator_set_l_max(struct CcEvaluator *evaluator, size_t l_max);

// Evaluates `rationale` as support for `answer`.
//
// # Safety
// `evaluator` must be a live handle; strings NUL-terminated; `out` valid.
enum CcStatus cc_evaluator_eval(const struct CcEvaluator *evaluator,
                                const char *answer,
                                const char *rationale,
                                struct CcVerdict *out);

// # Safety
// `evaluator` must be NULL or a live handle, not used afterwards.
void cc_evaluator_free(struct CcEvaluator *evaluator);

// Empty scoring corpus.
struct CcBleuCorpus *cc_bleu_corpus_new(void);

// Adds one pair. Both sides are tokenized by the script of `reference`.
//
// # Safety
// `corpus` must be a live handle; strings NUL-terminated.
enum CcStatus cc_bleu_corpus_push(struct CcBleuCorpus *corpus,
                                  const char *hypothesis,
                                  const char *reference);

// Number of pairs pushed so far, or 0 for NULL.
//
// # Safety
// `corpus` must be NULL or a live handle.
size_t cc_bleu_corpus_len(const struct CcBleuCorpus *corpus);

// Corpus BLEU-1..4.
//
// # Safety
// `corpus` must be a live handle; `out` valid.
enum CcStatus cc_bleu_corpus_score(const struct CcBleuCorpus *corpus, struct CcBleuReport *out);

// Fraction of pairs equal after lowercasing and whitespace normalization.
//
// # Safety
// `corpus` must be a live handle; `out` valid.
enum CcStatus cc_bleu_corpus_word_accuracy(const struct CcBleuCorpus *corpus, double *out);

// # Safety
// `corpus` must be NULL or a live handle, not used afterwards.
void cc_bleu_corpus_free(struct CcBleuCorpus *corpus);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COT_CURATE_H */
