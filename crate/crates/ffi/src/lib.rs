//! C ABI over `templex`.
//!
//! Objects are opaque heap handles released with their `*_free` function.
//! Every fallible call returns a `TxStatus`; on failure the message is kept
//! per thread and read back with `tx_last_error_message`. Strings returned
//! through out-parameters are owned by the caller and freed with
//! `tx_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use templex::extract::{extract_document, Extraction};
use templex::model::DocumentStream;
use templex::pipeline::{infer, PipelineConfig};
use templex::template::Template;
use templex::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8, or a bad configuration.
    InvalidArgument = 1,
    /// Malformed phrase records, template or JSON.
    Parse = 2,
    /// A pipeline stage failed, for example no structure was found.
    Pipeline = 3,
    /// A Rust panic was caught at the boundary.
    Panic = 4,
}

pub struct TxDocument(DocumentStream);

pub struct TxTemplate(Template);

pub struct TxExtraction(Extraction);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(TxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Parse { .. }
            | Error::InvalidPhrase { .. }
            | Error::DuplicateIndex(_)
            | Error::InvalidTemplate(_)
            | Error::Json(_) => TxStatus::Parse,
            Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::File { .. } | Error::Io(_) => {
                TxStatus::InvalidArgument
            }
            _ => TxStatus::Pipeline,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(TxStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TxStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TxStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            TxStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(&format!("{name} is null")))
}

fn out_arg<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(invalid("out is null"))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(TxStatus::Pipeline, "output contains a NUL byte".into()))
}

/// Parses newline-delimited phrase records into a document.
///
/// # Safety
/// `source_id` and `jsonl` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tx_document_from_jsonl(
    source_id: *const c_char,
    jsonl: *const c_char,
    out: *mut *mut TxDocument,
) -> TxStatus {
    guard(|| {
        out_arg(out)?;
        let id = str_arg(source_id, "source_id")?;
        let text = str_arg(jsonl, "jsonl")?;
        let doc = DocumentStream::from_jsonl(id, text.as_bytes())?;
        *out = Box::into_raw(Box::new(TxDocument(doc)));
        Ok(())
    })
}

/// # Safety
/// `doc` must come from `tx_document_from_jsonl` and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn tx_document_free(doc: *mut TxDocument) {
    if !doc.is_null() {
        drop(Box::from_raw(doc));
    }
}

/// Infers a template over `n_docs` documents concatenated in order.
/// `config_json` may be null for defaults.
///
/// # Safety
/// `docs` must point to `n_docs` valid document handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tx_infer_template(
    docs: *const *const TxDocument,
    n_docs: usize,
    config_json: *const c_char,
    out: *mut *mut TxTemplate,
) -> TxStatus {
    guard(|| {
        out_arg(out)?;
        if docs.is_null() || n_docs == 0 {
            return Err(invalid("no documents given"));
        }
        let cfg = if config_json.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::from_json(str_arg(config_json, "config_json")?)?
        };
        let handles = std::slice::from_raw_parts(docs, n_docs);
        let mut streams = Vec::with_capacity(n_docs);
        for &h in handles {
            streams.push(&ref_arg(h, "document")?.0);
        }
        let corpus = DocumentStream::concat("corpus", streams);
        let oracle = cfg.build_oracle()?;
        let inference = infer(&corpus, oracle.as_ref(), &cfg)?;
        *out = Box::into_raw(Box::new(TxTemplate(inference.template)));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tx_template_from_json(json: *const c_char, out: *mut *mut TxTemplate) -> TxStatus {
    guard(|| {
        out_arg(out)?;
        let t = Template::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(TxTemplate(t)));
        Ok(())
    })
}

/// # Safety
/// `tmpl` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tx_template_to_json(tmpl: *const TxTemplate, out: *mut *mut c_char) -> TxStatus {
    guard(|| {
        out_arg(out)?;
        let t = ref_arg(tmpl, "tmpl")?;
        *out = into_c_string(t.0.to_json()?)?;
        Ok(())
    })
}

/// # Safety
/// `tmpl` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn tx_template_free(tmpl: *mut TxTemplate) {
    if !tmpl.is_null() {
        drop(Box::from_raw(tmpl));
    }
}

/// Extracts one document with a fixed template. Makes no oracle calls.
///
/// # Safety
/// `doc` and `tmpl` must be valid handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tx_extract(
    doc: *const TxDocument,
    tmpl: *const TxTemplate,
    out: *mut *mut TxExtraction,
) -> TxStatus {
    guard(|| {
        out_arg(out)?;
        let d = ref_arg(doc, "doc")?;
        let t = ref_arg(tmpl, "tmpl")?;
        let ex = extract_document(&d.0, &t.0)?;
        *out = Box::into_raw(Box::new(TxExtraction(ex)));
        Ok(())
    })
}

/// # Safety
/// `extraction` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tx_extraction_to_json(extraction: *const TxExtraction, out: *mut *mut c_char) -> TxStatus {
    guard(|| {
        out_arg(out)?;
        let ex = ref_arg(extraction, "extraction")?;
        *out = into_c_string(ex.0.to_json()?)?;
        Ok(())
    })
}

/// # Safety
/// `extraction` must come from `tx_extract` and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn tx_extraction_free(extraction: *mut TxExtraction) {
    if !extraction.is_null() {
        drop(Box::from_raw(extraction));
    }
}

/// # Safety
/// `s` must be a string returned by this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn tx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn tx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status_codes() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, TxStatus::Panic);
        let msg = unsafe { CStr::from_ptr(tx_last_error_message()) }.to_str().unwrap();
        assert_eq!(msg, "panic: boom");
        assert_eq!(guard(|| Ok(())), TxStatus::Ok);
        assert!(tx_last_error_message().is_null());
    }

    #[test]
    fn errors_map_to_statuses() {
        assert_eq!(Failure::from(Error::NoStructure).0, TxStatus::Pipeline);
        assert_eq!(Failure::from(Error::InvalidTemplate("x".into())).0, TxStatus::Parse);
        assert_eq!(Failure::from(Error::InvalidConfig("x".into())).0, TxStatus::InvalidArgument);
    }
}
