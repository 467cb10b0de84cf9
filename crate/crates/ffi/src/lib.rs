//! C ABI over the `msdg` solver. Objects are opaque handles created and
//! freed through this interface; every fallible call returns an
//! [`MsdgStatus`] and leaves a message for [`msdg_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use msdg::config::RunConfig;
use msdg::driver::{self, Problem, RunOutput};
use msdg::error::Error;
use msdg::offline::OfflineData;
use msdg::output;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsdgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Format = 4,
    Config = 5,
    Domain = 6,
    Numerical = 7,
    Verification = 8,
    Io = 9,
    OutOfRange = 10,
    Panic = 11,
}

impl From<&Error> for MsdgStatus {
    fn from(e: &Error) -> Self {
        match e.root() {
            Error::InvalidArgument(_) => MsdgStatus::InvalidArgument,
            Error::Format(_) => MsdgStatus::Format,
            Error::Config { .. } => MsdgStatus::Config,
            Error::Domain(_) => MsdgStatus::Domain,
            Error::Numerical(_) | Error::Coercivity { .. } => MsdgStatus::Numerical,
            Error::Verification(_) => MsdgStatus::Verification,
            Error::Io(_) => MsdgStatus::Io,
            Error::Context { .. } => MsdgStatus::Numerical,
        }
    }
}

/// Parsed run configuration.
pub struct MsdgConfig {
    inner: RunConfig,
}

/// A finished run with everything needed to write its artifacts.
pub struct MsdgRun {
    cfg: RunConfig,
    problem: Problem,
    offline: OfflineData,
    out: RunOutput,
    verify: bool,
    failures: Vec<String>,
}

/// One history row. Values that were not computed are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MsdgHistoryRecord {
    pub iteration: usize,
    pub sub_iteration: usize,
    pub dof: usize,
    pub e_a: f64,
    pub e_2: f64,
    pub sum_residual_sq: f64,
    pub eta_sq: f64,
    pub theta: f64,
    pub contraction_ratio: f64,
    pub wall_ms: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn guard(f: impl FnOnce() -> Result<(), (MsdgStatus, String)>) -> MsdgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MsdgStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MsdgStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MsdgStatus, String) {
    ((&e).into(), e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, (MsdgStatus, String)> {
    if p.is_null() {
        return Err((MsdgStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            MsdgStatus::InvalidUtf8,
            "string argument is not UTF-8".into(),
        )
    })
}

fn null(what: &str) -> (MsdgStatus, String) {
    (MsdgStatus::NullPointer, format!("null {what}"))
}

/// Parses a configuration file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msdg_config_from_file(
    path: *const c_char,
    out: *mut *mut MsdgConfig,
) -> MsdgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let path = read_str(path)?;
        let inner = RunConfig::from_file(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MsdgConfig { inner }));
        Ok(())
    })
}

/// Parses configuration text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msdg_config_from_str(
    text: *const c_char,
    out: *mut *mut MsdgConfig,
) -> MsdgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let inner = RunConfig::parse(read_str(text)?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MsdgConfig { inner }));
        Ok(())
    })
}

/// Replaces the seed.
///
/// # Safety
/// `config` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn msdg_config_set_seed(config: *mut MsdgConfig, seed: u64) -> MsdgStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        c.inner.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be a handle from this library or null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn msdg_config_free(config: *mut MsdgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the solver. With `verify` nonzero the certified bound is computed
/// and checked; a failed check still produces a run handle and returns
/// `MSDG_STATUS_VERIFICATION`.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msdg_run(
    config: *const MsdgConfig,
    verify: bool,
    out: *mut *mut MsdgRun,
) -> MsdgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = ptr::null_mut();
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let mut cfg = c.inner.clone();
        if verify {
            cfg.online.certified = true;
        }
        let (problem, offline, run) = driver::run_adaptive(&cfg).map_err(lib_err)?;
        let failures = if verify {
            driver::verification_failures(&problem, &run, 20, cfg.seed)
        } else {
            Vec::new()
        };
        let first = failures.first().cloned();
        *out = Box::into_raw(Box::new(MsdgRun {
            cfg,
            problem,
            offline,
            out: run,
            verify,
            failures,
        }));
        match first {
            Some(f) => Err((MsdgStatus::Verification, f)),
            None => Ok(()),
        }
    })
}

/// Number of history rows, 0 for a null handle.
///
/// # Safety
/// `run` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn msdg_run_history_len(run: *const MsdgRun) -> usize {
    run.as_ref().map_or(0, |r| r.out.history.rows.len())
}

/// Copies history row `index` into `*record`.
///
/// # Safety
/// `run` must be a live handle and `record` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msdg_run_record(
    run: *const MsdgRun,
    index: usize,
    record: *mut MsdgHistoryRecord,
) -> MsdgStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let dst = record.as_mut().ok_or_else(|| null("record"))?;
        let row = r.out.history.rows.get(index).ok_or_else(|| {
            (
                MsdgStatus::OutOfRange,
                format!("row {index} of {}", r.out.history.rows.len()),
            )
        })?;
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *dst = MsdgHistoryRecord {
            iteration: row.iteration,
            sub_iteration: row.sub_iteration,
            dof: row.dof,
            e_a: row.e_a,
            e_2: row.e_2,
            sum_residual_sq: nan(row.sum_residual_sq),
            eta_sq: nan(row.eta_sq),
            theta: nan(row.theta),
            contraction_ratio: nan(row.contraction_ratio),
            wall_ms: row.wall_ms,
        };
        Ok(())
    })
}

/// Number of failed verification checks (0 when not verified or all passed).
///
/// # Safety
/// `run` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn msdg_run_verification_failures(run: *const MsdgRun) -> usize {
    run.as_ref().map_or(0, |r| r.failures.len())
}

/// Writes `history.csv`, `summary.txt` and the configured extras into `dir`.
///
/// # Safety
/// `run` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn msdg_run_write_outputs(
    run: *const MsdgRun,
    dir: *const c_char,
) -> MsdgStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let dir = read_str(dir)?;
        output::write_outputs(
            Path::new(dir),
            &r.cfg,
            &r.problem,
            &r.offline,
            &r.out,
            r.verify,
        )
        .map_err(lib_err)
    })
}

/// # Safety
/// `run` must be a handle from this library or null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn msdg_run_free(run: *mut MsdgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn msdg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn msdg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
