#ifndef GLOSSPIPE_H
#define GLOSSPIPE_H

/* Generated from crates/ffi by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a C-ABI call. `GLOSSPIPE_STATUS_OK` is zero; every other value
 * is an error and leaves a message for [`glosspipe_last_error_message`].
 */
typedef enum GlosspipeStatus {
  /**
   * The call succeeded.
   */
  GLOSSPIPE_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  GLOSSPIPE_STATUS_NULL_ARG = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  GLOSSPIPE_STATUS_UTF8 = 2,
  /**
   * A file could not be read or written.
   */
  GLOSSPIPE_STATUS_IO = 3,
  /**
   * A file or string had the wrong format.
   */
  GLOSSPIPE_STATUS_PARSE = 4,
  /**
   * The arguments were structurally invalid (bad format name, empty
   * input, mismatched shapes).
   */
  GLOSSPIPE_STATUS_INVALID = 5,
  /**
   * An unexpected internal failure.
   */
  GLOSSPIPE_STATUS_INTERNAL = 6,
} GlosspipeStatus;

/**
 * Opaque handle to a parsed corpus.
 */
typedef struct GlosspipeCorpus GlosspipeCorpus;

/**
 * Opaque handle to a trained tagger checkpoint.
 */
typedef struct GlosspipeModel GlosspipeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string. Never free the result.
 */
const char *glosspipe_version(void);

/**
 * Message describing the most recent failure on this thread, or an empty
 * string if nothing failed yet. Borrowed: do not free, and do not use it
 * after the next failing call on the same thread.
 */
const char *glosspipe_last_error_message(void);

/**
 * Parses a corpus file into a new handle.
 *
 * `format` selects the parser: `"jsonl"` or `"flat-igt"`. On success,
 * writes the handle to `out_corpus`; release it with
 * [`glosspipe_corpus_free`].
 *
 * # Safety
 *
 * `path` and `format` must be NULL or NUL-terminated strings valid for the
 * call; `out_corpus` must be a valid location to write a pointer to.
 */
enum GlosspipeStatus glosspipe_corpus_open(const char *path,
                                           const char *format,
                                           struct GlosspipeCorpus **out_corpus);

/**
 * Writes the number of sentences in the corpus to `out_count`.
 *
 * # Safety
 *
 * `corpus` must be a live handle from [`glosspipe_corpus_open`] (or NULL);
 * `out_count` must be a valid location to write to.
 */
enum GlosspipeStatus glosspipe_corpus_sentence_count(const struct GlosspipeCorpus *corpus,
                                                     uintptr_t *out_count);

/**
 * Writes the number of distinct documents in the corpus to `out_count`.
 *
 * # Safety
 *
 * Same requirements as [`glosspipe_corpus_sentence_count`].
 */
enum GlosspipeStatus glosspipe_corpus_document_count(const struct GlosspipeCorpus *corpus,
                                                     uintptr_t *out_count);

/**
 * Releases a corpus handle. NULL is a no-op.
 *
 * # Safety
 *
 * `corpus` must be NULL or a handle from [`glosspipe_corpus_open`] that has
 * not been freed yet.
 */
void glosspipe_corpus_free(struct GlosspipeCorpus *corpus);

/**
 * Loads a trained tagger checkpoint into a new handle. Release it with
 * [`glosspipe_model_free`].
 *
 * # Safety
 *
 * `path` must be NULL or a NUL-terminated string valid for the call;
 * `out_model` must be a valid location to write a pointer to.
 */
enum GlosspipeStatus glosspipe_model_open(const char *path, struct GlosspipeModel **out_model);

/**
 * Glosses one segmented sentence (words separated by spaces, morphemes by
 * hyphens) and writes the gloss surface, in the same shape, to
 * `out_gloss`. Free the result with [`glosspipe_string_free`].
 *
 * # Safety
 *
 * `model` must be a live handle from [`glosspipe_model_open`] (or NULL);
 * `segmented` must be NULL or a NUL-terminated string valid for the call;
 * `out_gloss` must be a valid location to write a pointer to.
 */
enum GlosspipeStatus glosspipe_model_gloss(const struct GlosspipeModel *model,
                                           const char *segmented,
                                           char **out_gloss);

/**
 * Releases a model handle. NULL is a no-op.
 *
 * # Safety
 *
 * `model` must be NULL or a handle from [`glosspipe_model_open`] that has
 * not been freed yet.
 */
void glosspipe_model_free(struct GlosspipeModel *model);

/**
 * Extracts the gloss from a raw model response: the text between the first
 * two `###` markers, trimmed, or the input unchanged when fewer than two
 * markers are present. Free the result with [`glosspipe_string_free`].
 *
 * # Safety
 *
 * `raw` must be NULL or a NUL-terminated string valid for the call;
 * `out_gloss` must be a valid location to write a pointer to.
 */
enum GlosspipeStatus glosspipe_extract_gloss(const char *raw, char **out_gloss);

/**
 * Scores a predicted gloss surface against a gold gloss surface and writes
 * the token-level accuracy (0 to 1) to `out_accuracy`. Tokens align
 * word-by-word and morpheme-by-morpheme against the gold shape; missing or
 * extra predicted tokens count as wrong. An empty gold surface is invalid.
 *
 * # Safety
 *
 * `predicted` and `gold` must be NULL or NUL-terminated strings valid for
 * the call; `out_accuracy` must be a valid location to write to.
 */
enum GlosspipeStatus glosspipe_token_accuracy(const char *predicted,
                                              const char *gold,
                                              double *out_accuracy);

/**
 * Releases a string produced by this library. NULL is a no-op.
 *
 * # Safety
 *
 * `s` must be NULL or a string returned through an out-pointer of this
 * library that has not been freed yet.
 */
void glosspipe_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLOSSPIPE_H */
