//! C ABI for fedprio.
//!
//! Every fallible function returns an [`FpStatus`]. On failure the
//! message is kept per thread and can be read with
//! [`fp_last_error_message`]. Handles are opaque; free them with their
//! matching `_free` function. Panics never cross the boundary; they are
//! reported as `FP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use fedprio::aggregation::{aggregate_models, prioritized_score, scores_to_weights, ClientWeights, PriorityOrdering};
use fedprio::cli::write_run;
use fedprio::config::{ExperimentConfig, Overrides, Study};
use fedprio::model::ParameterVector;
use fedprio::orchestrator::ExperimentLog;
use fedprio::report::run_single;
use fedprio::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Data = 5,
    Runtime = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Experiment configuration handle.
pub struct FpConfig {
    inner: ExperimentConfig,
}

/// Finished experiment handle. Keeps the config it ran with.
pub struct FpLog {
    config: ExperimentConfig,
    log: ExperimentLog,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(FpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Unsupported(_) => FpStatus::Config,
            Error::Dimension { .. } | Error::Validation(_) => FpStatus::InvalidArgument,
            Error::Io(_) | Error::File { .. } => FpStatus::Io,
            Error::Ingestion { .. } | Error::Json(_) | Error::Csv(_) => FpStatus::Data,
            _ => FpStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: FpStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FpStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(FpStatus::NullPointer, format!("{name} is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(FpStatus::NullPointer, format!("{name} is null"));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn str_in<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(FpStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(FpStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .map_or_else(|| fail(FpStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn handle_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .map_or_else(|| fail(FpStatus::NullPointer, format!("{name} is null")), Ok)
}

/// Message of the last failed call on this thread, or NULL after a
/// successful one. Valid until the next fedprio call on the same thread.
#[no_mangle]
pub extern "C" fn fp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Prioritized score of one criteria row. `ordering` lists criterion
/// indices, most important first; both arrays have length `m`.
///
/// # Safety
/// `row` and `ordering` must point to `m` readable elements and
/// `out_score` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn fp_prioritized_score(
    row: *const f64,
    ordering: *const usize,
    m: usize,
    out_score: *mut f64,
) -> FpStatus {
    guard(|| {
        let row = slice_in(row, m, "row")?;
        let order = slice_in(ordering, m, "ordering")?;
        let out = handle_mut(out_score, "out_score")?;
        let ordering = PriorityOrdering::new(order.to_vec())?;
        *out = prioritized_score(row, &ordering)?.0;
        Ok(())
    })
}

/// Normalizes `n` non-negative scores into weights summing to 1. All-zero
/// scores give uniform weights and set `*out_degenerate` to 1 when
/// `out_degenerate` is not NULL.
///
/// # Safety
/// `scores` and `out_weights` must point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn fp_scores_to_weights(
    scores: *const f64,
    n: usize,
    out_weights: *mut f64,
    out_degenerate: *mut i32,
) -> FpStatus {
    guard(|| {
        let scores = slice_in(scores, n, "scores")?;
        let out = slice_out(out_weights, n, "out_weights")?;
        let w = scores_to_weights((0..n).map(|k| k.to_string()).collect(), scores.to_vec())?;
        out.copy_from_slice(&w.weights);
        if let Some(d) = out_degenerate.as_mut() {
            *d = w.degenerate as i32;
        }
        Ok(())
    })
}

/// Weighted average of `n` models of `d` parameters each, stored row-major
/// in `models`. `weights` must sum to 1.
///
/// # Safety
/// `models` must point to `n * d` doubles, `weights` to `n` and `out` to `d`.
#[no_mangle]
pub unsafe extern "C" fn fp_aggregate_models(
    models: *const f64,
    n: usize,
    d: usize,
    weights: *const f64,
    out: *mut f64,
) -> FpStatus {
    guard(|| {
        let total = n
            .checked_mul(d)
            .map_or_else(|| fail(FpStatus::InvalidArgument, "n * d overflows"), Ok)?;
        let flat = slice_in(models, total, "models")?;
        let weights = slice_in(weights, n, "weights")?;
        let out = slice_out(out, d, "out")?;
        if d == 0 {
            return fail(FpStatus::InvalidArgument, "models have no parameters");
        }
        let models: Vec<ParameterVector> = flat.chunks(d).map(|c| ParameterVector::new(c.to_vec())).collect();
        let w = ClientWeights {
            clients: (0..n).map(|k| k.to_string()).collect(),
            weights: weights.to_vec(),
            scores: weights.to_vec(),
            lambdas: Vec::new(),
            degenerate: false,
        };
        out.copy_from_slice(aggregate_models(&models, &w)?.as_slice());
        Ok(())
    })
}

fn boxed_config(inner: ExperimentConfig, out: *mut *mut FpConfig) -> Result<(), Failure> {
    if out.is_null() {
        return fail(FpStatus::NullPointer, "out is null");
    }
    unsafe { *out = Box::into_raw(Box::new(FpConfig { inner })) };
    Ok(())
}

/// Default configuration: the synthetic task with every built-in criterion.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_config_default(out: *mut *mut FpConfig) -> FpStatus {
    guard(|| boxed_config(ExperimentConfig::default(), out))
}

/// Loads a TOML experiment config.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_config_load(path: *const c_char, out: *mut *mut FpConfig) -> FpStatus {
    guard(|| {
        let path = str_in(path, "path")?;
        boxed_config(ExperimentConfig::load(Path::new(path))?, out)
    })
}

/// Sets the run seed.
///
/// # Safety
/// `config` must come from `fp_config_default` or `fp_config_load`.
#[no_mangle]
pub unsafe extern "C" fn fp_config_set_seed(config: *mut FpConfig, seed: u64) -> FpStatus {
    guard(|| {
        handle_mut(config, "config")?.inner.apply(&Overrides {
            seed: Some(seed),
            ..Overrides::default()
        });
        Ok(())
    })
}

/// Sets the number of rounds.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fp_config_set_rounds(config: *mut FpConfig, rounds: usize) -> FpStatus {
    guard(|| {
        handle_mut(config, "config")?.inner.apply(&Overrides {
            rounds: Some(rounds),
            ..Overrides::default()
        });
        Ok(())
    })
}

/// Sets the study: `individual`, `mca-fixed`, `final-adjusted` or
/// `fedavg-baseline`.
///
/// # Safety
/// `config` must be a live handle and `study` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fp_config_set_study(config: *mut FpConfig, study: *const c_char) -> FpStatus {
    guard(|| {
        let study: Study = str_in(study, "study")?.parse()?;
        handle_mut(config, "config")?.inner.apply(&Overrides {
            study: Some(study),
            ..Overrides::default()
        });
        Ok(())
    })
}

/// Sets the priority ordering from comma-separated criterion ids, e.g.
/// `"md,ds,ld"`.
///
/// # Safety
/// `config` must be a live handle and `ordering` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fp_config_set_ordering(config: *mut FpConfig, ordering: *const c_char) -> FpStatus {
    guard(|| {
        let ids: Vec<String> = str_in(ordering, "ordering")?
            .split(',')
            .map(|s| s.trim().to_owned())
            .collect();
        handle_mut(config, "config")?.inner.apply(&Overrides {
            ordering: Some(ids),
            ..Overrides::default()
        });
        Ok(())
    })
}

/// Number of problems in the config; writes the joined messages to the
/// last-error slot when nonzero.
///
/// # Safety
/// `config` must be a live handle and `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_config_validate(config: *const FpConfig, out_count: *mut usize) -> FpStatus {
    let mut problems = String::new();
    let status = guard(|| {
        let v = handle(config, "config")?.inner.validate();
        *handle_mut(out_count, "out_count")? = v.len();
        problems = v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        Ok(())
    });
    if status == FpStatus::Ok && !problems.is_empty() {
        set_error(problems);
    }
    status
}

/// Frees a config. NULL is ignored.
///
/// # Safety
/// `config` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_config_free(config: *mut FpConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the configured experiment to completion.
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_run_experiment(config: *const FpConfig, out: *mut *mut FpLog) -> FpStatus {
    guard(|| {
        let cfg = handle(config, "config")?.inner.clone();
        if out.is_null() {
            return fail(FpStatus::NullPointer, "out is null");
        }
        let log = run_single(&cfg)?;
        *out = Box::into_raw(Box::new(FpLog { config: cfg, log }));
        Ok(())
    })
}

/// Rounds recorded in the log; 0 for NULL.
///
/// # Safety
/// `log` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fp_log_rounds(log: *const FpLog) -> usize {
    log.as_ref().map_or(0, |l| l.log.records.len())
}

/// Copies the accepted global accuracy of every round into `out`, which
/// must hold at least `fp_log_rounds(log)` doubles.
///
/// # Safety
/// `log` must be a live handle and `out` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fp_log_global_accuracy(log: *const FpLog, out: *mut f64, len: usize) -> FpStatus {
    guard(|| {
        let l = handle(log, "log")?;
        let n = l.log.records.len();
        if len < n {
            return fail(
                FpStatus::BufferTooSmall,
                format!("buffer holds {len} values, {n} needed"),
            );
        }
        let out = slice_out(out, n, "out")?;
        for (o, r) in out.iter_mut().zip(&l.log.records) {
            *o = r.accepted_accuracy;
        }
        Ok(())
    })
}

/// Number of rounds that fell back to the least-bad ordering.
///
/// # Safety
/// `log` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_log_fallback_rounds(log: *const FpLog, out: *mut usize) -> FpStatus {
    guard(|| {
        let n = handle(log, "log")?.log.records.iter().filter(|r| r.fallback).count();
        *handle_mut(out, "out")? = n;
        Ok(())
    })
}

/// Writes `rounds.csv`, `clients.csv`, `summary.json` and `manifest.json`
/// into `dir`, creating it if needed.
///
/// # Safety
/// `log` must be a live handle and `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fp_log_export(log: *const FpLog, dir: *const c_char) -> FpStatus {
    guard(|| {
        let l = handle(log, "log")?;
        let dir = str_in(dir, "dir")?;
        let mut cfg = l.config.clone();
        cfg.output.dir = dir.into();
        write_run(Path::new(dir), &cfg, &l.log)?;
        Ok(())
    })
}

/// Frees a log. NULL is ignored.
///
/// # Safety
/// `log` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_log_free(log: *mut FpLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}
