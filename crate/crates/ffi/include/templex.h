#ifndef TEMPLEX_H
#define TEMPLEX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  TX_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8, or a bad configuration.
   */
  TX_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Malformed phrase records, template or JSON.
   */
  TX_STATUS_PARSE = 2,
  /**
   * A pipeline stage failed, for example no structure was found.
   */
  TX_STATUS_PIPELINE = 3,
  /**
   * A Rust panic was caught at the boundary.
   */
  TX_STATUS_PANIC = 4,
} TxStatus;

typedef struct TxDocument TxDocument;

typedef struct TxExtraction TxExtraction;

typedef struct TxTemplate TxTemplate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses newline-delimited phrase records into a document.
 *
 * # Safety
 * `source_id` and `jsonl` must be NUL-terminated strings; `out` must be writable.
 */
TxStatus tx_document_from_jsonl(const char *source_id, const char *jsonl, TxDocument **out);

/**
 * # Safety
 * `doc` must come from `tx_document_from_jsonl` and not be freed twice. Null is ignored.
 */
void tx_document_free(TxDocument *doc);

/**
 * Infers a template over `n_docs` documents concatenated in order.
 * `config_json` may be null for defaults.
 *
 * # Safety
 * `docs` must point to `n_docs` valid document handles; `out` must be writable.
 */
TxStatus tx_infer_template(const TxDocument *const *docs,
                           size_t n_docs,
                           const char *config_json,
                           TxTemplate **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
TxStatus tx_template_from_json(const char *json, TxTemplate **out);

/**
 * # Safety
 * `tmpl` must be a valid handle; `out` must be writable.
 */
TxStatus tx_template_to_json(const TxTemplate *tmpl, char **out);

/**
 * # Safety
 * `tmpl` must come from this library and not be freed twice. Null is ignored.
 */
void tx_template_free(TxTemplate *tmpl);

/**
 * Extracts one document with a fixed template. Makes no oracle calls.
 *
 * # Safety
 * `doc` and `tmpl` must be valid handles; `out` must be writable.
 */
TxStatus tx_extract(const TxDocument *doc, const TxTemplate *tmpl, TxExtraction **out);

/**
 * # Safety
 * `extraction` must be a valid handle; `out` must be writable.
 */
TxStatus tx_extraction_to_json(const TxExtraction *extraction, char **out);

/**
 * # Safety
 * `extraction` must come from `tx_extract` and not be freed twice. Null is ignored.
 */
void tx_extraction_free(TxExtraction *extraction);

/**
 * # Safety
 * `s` must be a string returned by this library and not be freed twice. Null is ignored.
 */
void tx_string_free(char *s);

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into the library on the same thread.
 */
const char *tx_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tx_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEMPLEX_H */
