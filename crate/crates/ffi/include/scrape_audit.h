#ifndef SCRAPE_AUDIT_H
#define SCRAPE_AUDIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Text representation selector for [`sa_extract`].
 */
typedef enum SaRepresentation {
  SA_REPRESENTATION_HTML_FULL = 0,
  SA_REPRESENTATION_RAW_TEXT = 1,
  SA_REPRESENTATION_CLEANED_TEXT = 2,
} SaRepresentation;

/**
 * Result codes. Zero is success.
 */
typedef enum SaStatus {
  SA_STATUS_OK = 0,
  SA_STATUS_NULL_POINTER = 1,
  SA_STATUS_INVALID_UTF8 = 2,
  SA_STATUS_INVALID_ARGUMENT = 3,
  SA_STATUS_UNDEFINED = 4,
  SA_STATUS_PANIC = 5,
} SaStatus;

/**
 * Opaque article identifier bound to a domain list and URL rules.
 */
typedef struct SaUrlClassifier SaUrlClassifier;

/**
 * Result of a chi-square independence test.
 */
typedef struct SaChiSquare {
  double statistic;
  uint64_t df;
  double p;
} SaChiSquare;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *sa_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void sa_string_free(char *s);

/**
 * Levenshtein distance between two UTF-8 strings, counted in Unicode
 * scalar values.
 *
 * # Safety
 * `a`/`b` point to `a_len`/`b_len` bytes (may be null when the length is
 * 0); `out` is writable.
 */
enum SaStatus sa_levenshtein(const uint8_t *a,
                             uintptr_t a_len,
                             const uint8_t *b,
                             uintptr_t b_len,
                             uint64_t *out);

/**
 * Levenshtein distance divided by the longer length: 0 when both are
 * empty, 1 when exactly one is.
 *
 * # Safety
 * As for [`sa_levenshtein`].
 */
enum SaStatus sa_normalized_distance(const uint8_t *a,
                                     uintptr_t a_len,
                                     const uint8_t *b,
                                     uintptr_t b_len,
                                     double *out);

/**
 * Extracts one representation from HTML bytes (invalid UTF-8 is replaced).
 * The result is stored in `*out` and must be freed with [`sa_string_free`].
 *
 * # Safety
 * `html` points to `len` bytes (may be null when `len` is 0); `out` is
 * writable.
 */
enum SaStatus sa_extract(const uint8_t *html,
                         uintptr_t len,
                         enum SaRepresentation representation,
                         char **out);

/**
 * Builds an identifier from domain-list CSV text (`domain,outlet_type`)
 * and optional URL-rules JSON text; null rules select the built-in set.
 *
 * # Safety
 * `domains_csv` is a NUL-terminated string; `rules_json` is null or one;
 * `out` is writable.
 */
enum SaStatus sa_url_classifier_new(const char *domains_csv,
                                    const char *rules_json,
                                    struct SaUrlClassifier **out);

/**
 * Releases a classifier. Null is ignored.
 *
 * # Safety
 * `handle` is null or came from [`sa_url_classifier_new`] and was not yet
 * freed.
 */
void sa_url_classifier_free(struct SaUrlClassifier *handle);

/**
 * Whether `url` is a news article page.
 *
 * # Safety
 * `handle` is a live classifier; `url` is a NUL-terminated string;
 * `out` is writable.
 */
enum SaStatus sa_url_classifier_identify(const struct SaUrlClassifier *handle,
                                         const char *url,
                                         bool *out);

/**
 * Path categories of `url`, comma separated and sorted, stored in `*out`
 * (free with [`sa_string_free`]).
 *
 * # Safety
 * As for [`sa_url_classifier_identify`].
 */
enum SaStatus sa_url_classifier_categorize(const struct SaUrlClassifier *handle,
                                           const char *url,
                                           char **out);

/**
 * Chi-square test of independence on a row-major `rows x cols` table of
 * counts.
 *
 * # Safety
 * `table` points to `rows * cols` doubles; `out` is writable.
 */
enum SaStatus sa_chi_square(const double *table,
                            uintptr_t rows,
                            uintptr_t cols,
                            struct SaChiSquare *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCRAPE_AUDIT_H */
