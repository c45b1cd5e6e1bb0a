//! C ABI over a loaded estimator.
//!
//! Every function returns a [`PriceStatus`]. On failure a message for the
//! calling thread is available from [`price_last_error`] until the next
//! call on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use price_core::serve::Service;
use price_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Data = 4,
    Model = 5,
    Query = 6,
    Panic = 7,
}

/// Opaque handle to a checkpoint loaded together with its catalog and
/// statistics. Safe to share between threads for estimation.
pub struct PriceEstimator {
    service: Service,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PriceEstimate {
    /// Natural log of the estimated cardinality, at least 0.
    pub log_card: f64,
    pub card: f64,
    /// Histogram independence estimate for the same query.
    pub baseline: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn classify(e: &Error) -> PriceStatus {
    match e {
        Error::Io { .. } => PriceStatus::Io,
        Error::Sql(_)
        | Error::UnknownTable(_)
        | Error::UnknownAttribute { .. }
        | Error::JoinNotInSchema(_)
        | Error::Disconnected(_)
        | Error::UnsupportedPredicate(_) => PriceStatus::Query,
        e if e.is_model_error() => PriceStatus::Model,
        _ => PriceStatus::Data,
    }
}

fn guarded(f: impl FnOnce() -> Result<(), PriceStatus>) -> PriceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PriceStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            PriceStatus::Panic
        }
    }
}

fn fail(e: Error) -> PriceStatus {
    set_error(&e.to_string());
    classify(&e)
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, PriceStatus> {
    if p.is_null() {
        set_error(&format!("{what} is null"));
        return Err(PriceStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        PriceStatus::InvalidUtf8
    })
}

/// Load a checkpoint, catalog and statistics file. On success `*out`
/// receives a handle to release with [`price_estimator_free`].
///
/// # Safety
/// Path arguments must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn price_estimator_open(
    checkpoint: *const c_char,
    catalog: *const c_char,
    stats: *const c_char,
    out: *mut *mut PriceEstimator,
) -> PriceStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is null");
            return Err(PriceStatus::NullArgument);
        }
        *out = ptr::null_mut();
        let service = Service::load(
            text(checkpoint, "checkpoint")?,
            text(catalog, "catalog")?,
            text(stats, "stats")?,
        )
        .map_err(fail)?;
        *out = Box::into_raw(Box::new(PriceEstimator { service }));
        Ok(())
    })
}

/// Estimate the cardinality of one `SELECT COUNT(*)` query.
///
/// # Safety
/// `estimator` must come from [`price_estimator_open`]; `sql` must be a
/// NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn price_estimate(
    estimator: *const PriceEstimator,
    sql: *const c_char,
    out: *mut PriceEstimate,
) -> PriceStatus {
    guarded(|| {
        if estimator.is_null() || out.is_null() {
            set_error("estimator or out is null");
            return Err(PriceStatus::NullArgument);
        }
        let sql = text(sql, "sql")?;
        let e = (*estimator).service.estimate_sql(sql).map_err(fail)?;
        *out = PriceEstimate {
            log_card: e.log_card,
            card: e.card,
            baseline: e.baseline,
        };
        Ok(())
    })
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn price_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `estimator` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn price_estimator_free(estimator: *mut PriceEstimator) {
    if !estimator.is_null() {
        drop(Box::from_raw(estimator));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn price_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
