//! C ABI over the scrape-audit core.
//!
//! Every function returns an [`SaStatus`]; results go through out-pointers.
//! On failure a message is kept per thread and read with
//! [`sa_last_error_message`]. Strings handed out by this library are
//! NUL-terminated UTF-8 and must be released with [`sa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use scrape_audit::extraction::{extract, Representation};
use scrape_audit::metrics::{chi_square_independence, levenshtein, normalized_distance};
use scrape_audit::url_taxonomy::{categorize_by_path, identify_article, DomainList, UrlRules};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Undefined = 4,
    Panic = 5,
}

/// Text representation selector for [`sa_extract`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaRepresentation {
    HtmlFull = 0,
    RawText = 1,
    CleanedText = 2,
}

impl From<SaRepresentation> for Representation {
    fn from(r: SaRepresentation) -> Self {
        match r {
            SaRepresentation::HtmlFull => Representation::HtmlFull,
            SaRepresentation::RawText => Representation::RawText,
            SaRepresentation::CleanedText => Representation::CleanedText,
        }
    }
}

/// Opaque article identifier bound to a domain list and URL rules.
pub struct SaUrlClassifier {
    domains: DomainList,
    rules: UrlRules,
}

/// Result of a chi-square independence test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SaChiSquare {
    pub statistic: f64,
    pub df: u64,
    pub p: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(SaStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SaStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(SaStatus::NullPointer, format!("{name} is null"))
}

/// # Safety
/// `data` is null only when `len` is 0, otherwise it points to `len` bytes.
unsafe fn bytes<'a>(data: *const u8, len: usize, name: &str) -> Result<&'a [u8], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

/// # Safety
/// Same contract as [`bytes`].
unsafe fn utf8<'a>(data: *const u8, len: usize, name: &str) -> Result<&'a str, Fail> {
    std::str::from_utf8(bytes(data, len, name)?)
        .map_err(|e| Fail(SaStatus::InvalidUtf8, format!("{name}: {e}")))
}

/// # Safety
/// `s` is null or a NUL-terminated string.
unsafe fn cstr<'a>(s: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Fail(SaStatus::InvalidUtf8, format!("{name}: {e}")))
}

fn into_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', "")).expect("NULs removed").into_raw()
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Levenshtein distance between two UTF-8 strings, counted in Unicode
/// scalar values.
///
/// # Safety
/// `a`/`b` point to `a_len`/`b_len` bytes (may be null when the length is
/// 0); `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sa_levenshtein(a: *const u8, a_len: usize, b: *const u8, b_len: usize, out: *mut u64) -> SaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = levenshtein(utf8(a, a_len, "a")?, utf8(b, b_len, "b")?);
        *out = d as u64;
        Ok(())
    })
}

/// Levenshtein distance divided by the longer length: 0 when both are
/// empty, 1 when exactly one is.
///
/// # Safety
/// As for [`sa_levenshtein`].
#[no_mangle]
pub unsafe extern "C" fn sa_normalized_distance(a: *const u8, a_len: usize, b: *const u8, b_len: usize, out: *mut f64) -> SaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = normalized_distance(utf8(a, a_len, "a")?, utf8(b, b_len, "b")?);
        Ok(())
    })
}

/// Extracts one representation from HTML bytes (invalid UTF-8 is replaced).
/// The result is stored in `*out` and must be freed with [`sa_string_free`].
///
/// # Safety
/// `html` points to `len` bytes (may be null when `len` is 0); `out` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sa_extract(html: *const u8, len: usize, representation: SaRepresentation, out: *mut *mut c_char) -> SaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = String::from_utf8_lossy(bytes(html, len, "html")?);
        *out = into_c(extract(&text, representation.into()));
        Ok(())
    })
}

/// Builds an identifier from domain-list CSV text (`domain,outlet_type`)
/// and optional URL-rules JSON text; null rules select the built-in set.
///
/// # Safety
/// `domains_csv` is a NUL-terminated string; `rules_json` is null or one;
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sa_url_classifier_new(
    domains_csv: *const c_char,
    rules_json: *const c_char,
    out: *mut *mut SaUrlClassifier,
) -> SaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let csv = cstr(domains_csv, "domains_csv")?;
        let invalid = |e: scrape_audit::error::Error| Fail(SaStatus::InvalidArgument, e.to_string());
        let domains = DomainList::from_csv(csv.as_bytes()).map_err(invalid)?;
        let rules = if rules_json.is_null() {
            UrlRules::default()
        } else {
            UrlRules::from_json(cstr(rules_json, "rules_json")?).map_err(invalid)?
        };
        *out = Box::into_raw(Box::new(SaUrlClassifier { domains, rules }));
        Ok(())
    })
}

/// Releases a classifier. Null is ignored.
///
/// # Safety
/// `handle` is null or came from [`sa_url_classifier_new`] and was not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn sa_url_classifier_free(handle: *mut SaUrlClassifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Whether `url` is a news article page.
///
/// # Safety
/// `handle` is a live classifier; `url` is a NUL-terminated string;
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sa_url_classifier_identify(handle: *const SaUrlClassifier, url: *const c_char, out: *mut bool) -> SaStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = identify_article(cstr(url, "url")?, &h.domains, &h.rules).is_article;
        Ok(())
    })
}

/// Path categories of `url`, comma separated and sorted, stored in `*out`
/// (free with [`sa_string_free`]).
///
/// # Safety
/// As for [`sa_url_classifier_identify`].
#[no_mangle]
pub unsafe extern "C" fn sa_url_classifier_categorize(handle: *const SaUrlClassifier, url: *const c_char, out: *mut *mut c_char) -> SaStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cats: Vec<String> = categorize_by_path(cstr(url, "url")?, &h.rules).into_iter().collect();
        *out = into_c(cats.join(","));
        Ok(())
    })
}

/// Chi-square test of independence on a row-major `rows x cols` table of
/// counts.
///
/// # Safety
/// `table` points to `rows * cols` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sa_chi_square(table: *const f64, rows: usize, cols: usize, out: *mut SaChiSquare) -> SaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if table.is_null() {
            return Err(null("table"));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(SaStatus::InvalidArgument, "table size overflows".into()))?;
        let flat = std::slice::from_raw_parts(table, n);
        let matrix: Vec<Vec<f64>> = flat.chunks(cols.max(1)).map(<[f64]>::to_vec).collect();
        match chi_square_independence(&matrix) {
            Ok(c) => {
                *out = SaChiSquare { statistic: c.statistic, df: c.df as u64, p: c.p };
                Ok(())
            }
            Err(e @ scrape_audit::error::Error::Undefined(_)) => Err(Fail(SaStatus::Undefined, e.to_string())),
            Err(e) => Err(Fail(SaStatus::InvalidArgument, e.to_string())),
        }
    })
}
