#ifndef OEM_H
#define OEM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum OemStatus {
  OEM_STATUS_OK = 0,
  OEM_STATUS_NULL_POINTER = 1,
  // Bad sizes, ids or parameters that are not valid distributions.
  OEM_STATUS_INVALID_ARGUMENT = 2,
  OEM_STATUS_IO = 3,
  // Malformed corpus, model or JSON text.
  OEM_STATUS_PARSE = 4,
  // Experiment configuration the method does not support.
  OEM_STATUS_CONFIG = 5,
  // Non-finite values or a solver that did not converge.
  OEM_STATUS_NUMERICAL = 6,
  OEM_STATUS_PANIC = 7,
} OemStatus;

// A bag-of-words corpus.
typedef struct OemCorpus OemCorpus;

// LDA parameters: `K` topics over `V` words and the Dirichlet prior `α`.
typedef struct OemModel OemModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a
// successful call. Valid until the next call on the same thread.
const char *oem_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *oem_version(void);

// Digamma function; NaN outside its domain.
double oem_digamma(double x);

// Inverse of the digamma function.
double oem_inv_digamma(double y);

// Loads a UCI bag-of-words corpus.
//
// # Safety
// `docword` and `vocab` must be NUL-terminated strings and `out` a valid
// pointer to write the handle to.
enum OemStatus oem_corpus_load_uci(const char *docword, const char *vocab, struct OemCorpus **out);

// Builds a corpus from concatenated token ids. Document `d` holds the next
// `doc_lengths[d]` entries of `word_ids`; every id must be below
// `vocab_size`.
//
// # Safety
// `word_ids` must point to `sum(doc_lengths)` values, `doc_lengths` to
// `n_docs` values and `out` must be valid for writes.
enum OemStatus oem_corpus_new(const size_t *word_ids,
                              const size_t *doc_lengths,
                              size_t n_docs,
                              size_t vocab_size,
                              struct OemCorpus **out);

// Samples a synthetic corpus from a spec such as `k=5,v=100,d=2000,len=40`.
// When `out_truth` is not null it receives the generating model.
//
// # Safety
// `spec` must be a NUL-terminated string, `out` valid for writes and
// `out_truth` either null or valid for writes.
enum OemStatus oem_corpus_generate(const char *spec,
                                   uint64_t seed,
                                   struct OemCorpus **out,
                                   struct OemModel **out_truth);

// Splits off `n_test` documents chosen by `seed`.
//
// # Safety
// `corpus` must be a live handle; `out_train` and `out_test` must be
// valid for writes.
enum OemStatus oem_corpus_split(const struct OemCorpus *corpus,
                                size_t n_test,
                                uint64_t seed,
                                struct OemCorpus **out_train,
                                struct OemCorpus **out_test);

// Number of documents; 0 for a null handle.
//
// # Safety
// `corpus` must be null or a live handle.
size_t oem_corpus_num_docs(const struct OemCorpus *corpus);

// Vocabulary size; 0 for a null handle.
//
// # Safety
// `corpus` must be null or a live handle.
size_t oem_corpus_vocab_size(const struct OemCorpus *corpus);

// Total number of tokens; 0 for a null handle.
//
// # Safety
// `corpus` must be null or a live handle.
size_t oem_corpus_num_tokens(const struct OemCorpus *corpus);

// # Safety
// `corpus` must be null or a handle not yet freed.
void oem_corpus_free(struct OemCorpus *corpus);

// Trains one pass over `corpus` with the experiment configuration given as
// JSON (the same format as the command line tool; its `corpus`, `seeds`
// and `out` fields are ignored).
//
// # Safety
// `corpus` must be a live handle, `config_json` a NUL-terminated string and
// `out` valid for writes.
enum OemStatus oem_fit(const struct OemCorpus *corpus,
                       const char *config_json,
                       uint64_t seed,
                       struct OemModel **out);

// Builds a model from a row-major `k × v` topic matrix and `k` prior
// weights.
//
// # Safety
// `beta` must point to `k * v` values, `alpha` to `k` values and `out`
// must be valid for writes.
enum OemStatus oem_model_new(const double *beta,
                             const double *alpha,
                             size_t k,
                             size_t v,
                             struct OemModel **out);

// # Safety
// `path` must be a NUL-terminated string and `out` valid for writes.
enum OemStatus oem_model_load(const char *path, struct OemModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum OemStatus oem_model_save(const struct OemModel *model, const char *path);

// Number of topics; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t oem_model_num_topics(const struct OemModel *model);

// Vocabulary size; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t oem_model_vocab_size(const struct OemModel *model);

// Copies the row-major `K × V` topic matrix into `out`, which must hold
// exactly `len = K * V` values.
//
// # Safety
// `model` must be a live handle and `out` valid for `len` writes.
enum OemStatus oem_model_copy_beta(const struct OemModel *model, double *out, size_t len);

// Copies the `K` prior weights into `out`, which must hold exactly
// `len = K` values.
//
// # Safety
// `model` must be a live handle and `out` valid for `len` writes.
enum OemStatus oem_model_copy_alpha(const struct OemModel *model, double *out, size_t len);

// # Safety
// `model` must be null or a handle not yet freed.
void oem_model_free(struct OemModel *model);

// Mean held-out log-perplexity of `corpus` under `model`, estimated with
// the left-to-right particle method.
//
// # Safety
// `model` and `corpus` must be live handles and `out` valid for writes.
enum OemStatus oem_log_perplexity(const struct OemModel *model,
                                  const struct OemCorpus *corpus,
                                  size_t particles,
                                  uint64_t seed,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OEM_H */
