//! C interface to txtrec model bundles.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns a
//! [`TxtrecStatus`]; on failure [`txtrec_last_error_message`] describes the
//! problem for the calling thread. Requests use the same text as the
//! serving protocol's `TXTREC/1 RECOMMEND` message.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use txtrec::serve::{parse_request, Request};
use txtrec::store::{AnyBundle, RecommendResponse};
use txtrec::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxtrecStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Checksum = 5,
    Contract = 6,
    Vocabulary = 7,
    Dimension = 8,
    OutOfRange = 9,
    Internal = 10,
}

/// A loaded model bundle.
pub struct TxtrecBundle {
    bundle: AnyBundle,
    version_tag: CString,
}

/// Ranked recommendations for one request.
pub struct TxtrecResults {
    items: Vec<CString>,
    probabilities: Vec<f64>,
    cold_start: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> TxtrecStatus {
    match err {
        Error::Io { .. } => TxtrecStatus::Io,
        Error::Format(_) => TxtrecStatus::Format,
        Error::Checksum(_) => TxtrecStatus::Checksum,
        Error::Vocabulary { .. } => TxtrecStatus::Vocabulary,
        Error::Dimension { .. } | Error::SequenceLength { .. } => TxtrecStatus::Dimension,
        _ => TxtrecStatus::Contract,
    }
}

fn guarded(f: impl FnOnce() -> Result<(), (TxtrecStatus, String)>) -> TxtrecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TxtrecStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TxtrecStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (TxtrecStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (TxtrecStatus, String)> {
    if p.is_null() {
        return Err((TxtrecStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (TxtrecStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Loads a bundle from `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn txtrec_bundle_load(path: *const c_char, out: *mut *mut TxtrecBundle) -> TxtrecStatus {
    guarded(|| {
        if out.is_null() {
            return Err((TxtrecStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let bundle = AnyBundle::load(path).map_err(lib_err)?;
        let version_tag = CString::new(bundle.version_tag()).map_err(|_| (TxtrecStatus::Format, "bad version tag".into()))?;
        *out = Box::into_raw(Box::new(TxtrecBundle { bundle, version_tag }));
        Ok(())
    })
}

/// Releases a bundle; null is ignored.
///
/// # Safety
/// `bundle` must come from [`txtrec_bundle_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn txtrec_bundle_free(bundle: *mut TxtrecBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// The bundle's version tag, valid until the bundle is freed; null for a
/// null bundle.
///
/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn txtrec_bundle_version_tag(bundle: *const TxtrecBundle) -> *const c_char {
    match bundle.as_ref() {
        Some(b) => b.version_tag.as_ptr(),
        None => ptr::null(),
    }
}

/// Answers a `TXTREC/1 RECOMMEND` request text into `*out`.
///
/// # Safety
/// `bundle` must be a live handle, `request` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn txtrec_recommend(
    bundle: *const TxtrecBundle,
    request: *const c_char,
    out: *mut *mut TxtrecResults,
) -> TxtrecStatus {
    guarded(|| {
        if out.is_null() {
            return Err((TxtrecStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let b = bundle
            .as_ref()
            .ok_or_else(|| (TxtrecStatus::NullArgument, "bundle is null".to_string()))?;
        let text = str_arg(request, "request")?;
        let req = match parse_request(text).map_err(lib_err)? {
            Request::Recommend(r) => r,
            Request::Health => return Err((TxtrecStatus::Contract, "expected a RECOMMEND request".into())),
        };
        let resp: RecommendResponse = b.bundle.predict_top_k(&req).map_err(lib_err)?;
        let items = resp
            .recommendations
            .iter()
            .map(|r| CString::new(r.item.as_str()).map_err(|_| (TxtrecStatus::Format, "item name holds NUL".to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(TxtrecResults {
            items,
            probabilities: resp.recommendations.iter().map(|r| r.probability).collect(),
            cold_start: resp.cold_start,
        }));
        Ok(())
    })
}

/// Number of recommendations; 0 for null.
///
/// # Safety
/// `results` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn txtrec_results_len(results: *const TxtrecResults) -> usize {
    results.as_ref().map_or(0, |r| r.items.len())
}

/// Name of the `index`-th recommendation, valid until the results are
/// freed; null when out of range.
///
/// # Safety
/// `results` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn txtrec_results_item(results: *const TxtrecResults, index: usize) -> *const c_char {
    match results.as_ref().and_then(|r| r.items.get(index)) {
        Some(s) => s.as_ptr(),
        None => ptr::null(),
    }
}

/// Probability of the `index`-th recommendation.
///
/// # Safety
/// `results` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn txtrec_results_probability(
    results: *const TxtrecResults,
    index: usize,
    out: *mut f64,
) -> TxtrecStatus {
    guarded(|| {
        let r = results
            .as_ref()
            .ok_or_else(|| (TxtrecStatus::NullArgument, "results is null".to_string()))?;
        if out.is_null() {
            return Err((TxtrecStatus::NullArgument, "out is null".into()));
        }
        let p = r
            .probabilities
            .get(index)
            .ok_or_else(|| (TxtrecStatus::OutOfRange, format!("index {index} out of range")))?;
        *out = *p;
        Ok(())
    })
}

/// 1 if the request had an empty basket, else 0 (also for null).
///
/// # Safety
/// `results` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn txtrec_results_cold_start(results: *const TxtrecResults) -> i32 {
    results.as_ref().map_or(0, |r| i32::from(r.cold_start))
}

/// Releases results; null is ignored.
///
/// # Safety
/// `results` must come from [`txtrec_recommend`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn txtrec_results_free(results: *mut TxtrecResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

/// Message for the calling thread's most recent failure; empty after a
/// success. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn txtrec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}
