//! C ABI over `tivasim`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `tiva_*_new`/`tiva_run_*` call and released by the matching `*_free`.
//! Fallible calls return a [`TivaStatus`]; the message of the last failure on
//! the calling thread is available from [`tiva_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tivasim::population::{sample_cohort, SampledPatient};
use tivasim::sim::output::{summary_json, write_metrics_csv};
use tivasim::sim::{compute_metrics, run_closed_loop, run_monte_carlo, MonteCarloResult, RunTrace, TargetBand};
use tivasim::{ControllerKind, SimConfig, SimError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TivaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParameterDomain = 3,
    Config = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TivaController {
    Pid = 0,
    Nmpc = 1,
    Mmpc = 2,
}

impl From<TivaController> for ControllerKind {
    fn from(c: TivaController) -> Self {
        match c {
            TivaController::Pid => ControllerKind::Pid,
            TivaController::Nmpc => ControllerKind::Nmpc,
            TivaController::Mmpc => ControllerKind::Mmpc,
        }
    }
}

/// Bit flags for selecting controllers in a Monte-Carlo run.
pub const TIVA_PID: u32 = 1;
pub const TIVA_NMPC: u32 = 2;
pub const TIVA_MMPC: u32 = 4;

/// Per-sample trace columns.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TivaColumn {
    TimeS = 0,
    BisTrue = 1,
    BisMeasured = 2,
    YRef = 3,
    PropofolMgS = 4,
    RemifentanilUgS = 5,
    /// Selected model index, -1 when the controller has none.
    ModelIndex = 6,
    SolveMs = 7,
}

/// Induction metrics of one run. Times are in minutes; NaN means the event
/// never happened.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TivaMetrics {
    pub tt_min: f64,
    pub bis_nadir: f64,
    pub st10_min: f64,
    pub st20_min: f64,
    pub us: f64,
}

pub struct TivaConfig(SimConfig);
pub struct TivaTrace(RunTrace);
pub struct TivaMonteCarlo(MonteCarloResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &SimError) -> TivaStatus {
    match err {
        SimError::ParameterDomain { .. } | SimError::InputDomain { .. } => TivaStatus::ParameterDomain,
        SimError::CovarianceDegeneracy(_) => TivaStatus::Numerical,
        SimError::Config(_) => TivaStatus::Config,
        SimError::Io(_) => TivaStatus::Io,
    }
}

enum Failure {
    Status(TivaStatus, String),
    Sim(SimError),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Sim(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(TivaStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TivaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TivaStatus::Ok
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Sim(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            TivaStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: caller passes either null or a pointer obtained from this library.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn tiva_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tiva_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn tiva_config_new_default() -> *mut TivaConfig {
    Box::into_raw(Box::new(TivaConfig(SimConfig::default())))
}

/// Parses a TOML document; missing keys take their defaults.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tiva_config_from_toml(toml: *const c_char, out: *mut *mut TivaConfig) -> TivaStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null; caller guarantees NUL termination.
        let text = unsafe { CStr::from_ptr(toml) }
            .to_str()
            .map_err(|e| Failure::Status(TivaStatus::InvalidArgument, e.to_string()))?;
        let cfg = SimConfig::from_toml_str(text)?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(TivaConfig(cfg))) };
        Ok(())
    })
}

/// Serializes the configuration as TOML. Free with [`tiva_string_free`].
///
/// # Safety
/// `config` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tiva_config_to_toml(config: *const TivaConfig) -> *mut c_char {
    match unsafe { config.as_ref() } {
        Some(c) => to_c_string(c.0.to_toml_string()),
        None => ptr::null_mut(),
    }
}

/// Sets the run length in seconds.
///
/// # Safety
/// `config` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tiva_config_set_duration(config: *mut TivaConfig, duration_s: f64) -> TivaStatus {
    guard(|| {
        // SAFETY: caller passes a pointer from this library or null.
        let c = unsafe { config.as_mut() }.ok_or_else(|| null("config"))?;
        let mut next = c.0.clone();
        next.scenario.duration_s = duration_s;
        next.validate()?;
        c.0 = next;
        Ok(())
    })
}

/// Sets the measurement-noise standard deviation (BIS units; 0 disables).
///
/// # Safety
/// `config` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tiva_config_set_noise(config: *mut TivaConfig, noise_std: f64) -> TivaStatus {
    guard(|| {
        // SAFETY: caller passes a pointer from this library or null.
        let c = unsafe { config.as_mut() }.ok_or_else(|| null("config"))?;
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Failure::Sim(SimError::ParameterDomain {
                name: "noise_std",
                value: noise_std,
            }));
        }
        c.0.scenario.noise_std = noise_std;
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tiva_config_free(config: *mut TivaConfig) {
    if !config.is_null() {
        // SAFETY: pointer came from Box::into_raw in this library.
        drop(unsafe { Box::from_raw(config) });
    }
}

fn run_one(
    config: *const TivaConfig,
    controller: TivaController,
    out: *mut *mut TivaTrace,
    patient: impl FnOnce(&SimConfig) -> SampledPatient,
) -> TivaStatus {
    guard(|| {
        // SAFETY: pointer from this library or null.
        let cfg = unsafe { as_ref(config, "config") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = patient(&cfg.0);
        let trace = run_closed_loop(&p, &cfg.0, controller.into(), p.seed)?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(TivaTrace(trace))) };
        Ok(())
    })
}

/// Simulates patient `patient_index` of the cohort drawn from `seed`.
///
/// # Safety
/// `config` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tiva_run_patient(
    config: *const TivaConfig,
    controller: TivaController,
    seed: u64,
    patient_index: usize,
    out: *mut *mut TivaTrace,
) -> TivaStatus {
    run_one(config, controller, out, |cfg| {
        sample_cohort(patient_index + 1, &cfg.population, seed).remove(patient_index)
    })
}

/// Simulates the nominal reference patient.
///
/// # Safety
/// `config` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tiva_run_nominal(
    config: *const TivaConfig,
    controller: TivaController,
    out: *mut *mut TivaTrace,
) -> TivaStatus {
    run_one(config, controller, out, |_| SampledPatient::nominal())
}

/// Number of samples in the trace, 0 for null.
///
/// # Safety
/// `trace` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tiva_trace_len(trace: *const TivaTrace) -> usize {
    unsafe { trace.as_ref() }.map_or(0, |t| t.0.rows.len())
}

/// Copies one column into `buf`, which must hold `tiva_trace_len` values.
///
/// # Safety
/// `trace` must come from this library; `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tiva_trace_column(
    trace: *const TivaTrace,
    column: TivaColumn,
    buf: *mut f64,
    len: usize,
) -> TivaStatus {
    guard(|| {
        // SAFETY: pointer from this library or null.
        let t = unsafe { as_ref(trace, "trace") }?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let rows = &t.0.rows;
        if len < rows.len() {
            return Err(Failure::Status(
                TivaStatus::InvalidArgument,
                format!("buffer holds {len} values, trace has {}", rows.len()),
            ));
        }
        // SAFETY: caller guarantees `len` writable doubles.
        let out = unsafe { std::slice::from_raw_parts_mut(buf, rows.len()) };
        for (slot, r) in out.iter_mut().zip(rows) {
            *slot = match column {
                TivaColumn::TimeS => r.t_s,
                TivaColumn::BisTrue => r.bis_true,
                TivaColumn::BisMeasured => r.bis_measured,
                TivaColumn::YRef => r.y_ref,
                TivaColumn::PropofolMgS => r.u_p,
                TivaColumn::RemifentanilUgS => r.u_r,
                TivaColumn::ModelIndex => r.model_index.map_or(-1.0, |i| i as f64),
                TivaColumn::SolveMs => r.solve_ms,
            };
        }
        Ok(())
    })
}

/// Induction metrics against a ±5 band around the configured target.
///
/// # Safety
/// Pointers must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tiva_trace_metrics(
    trace: *const TivaTrace,
    config: *const TivaConfig,
    out: *mut TivaMetrics,
) -> TivaStatus {
    guard(|| {
        // SAFETY: pointers from this library or null.
        let t = unsafe { as_ref(trace, "trace") }?;
        let cfg = unsafe { as_ref(config, "config") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        if t.0.rows.is_empty() {
            return Err(Failure::Status(TivaStatus::InvalidArgument, "empty trace".into()));
        }
        let target = cfg.0.scenario.bis_target;
        let m = compute_metrics(
            &t.0,
            TargetBand {
                low: target - 5.0,
                high: target + 5.0,
            },
        );
        // SAFETY: checked non-null.
        unsafe {
            *out = TivaMetrics {
                tt_min: m.tt.unwrap_or(f64::NAN),
                bis_nadir: m.bis_nadir,
                st10_min: m.st10.unwrap_or(f64::NAN),
                st20_min: m.st20.unwrap_or(f64::NAN),
                us: m.us,
            }
        };
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tiva_trace_free(trace: *mut TivaTrace) {
    if !trace.is_null() {
        // SAFETY: pointer came from Box::into_raw in this library.
        drop(unsafe { Box::from_raw(trace) });
    }
}

/// Runs `n_patients` under every controller selected in `controllers`
/// (`TIVA_PID | TIVA_NMPC | TIVA_MMPC`). `parallelism` 0 means one thread.
///
/// # Safety
/// `config` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tiva_monte_carlo(
    config: *const TivaConfig,
    n_patients: usize,
    controllers: u32,
    seed: u64,
    parallelism: usize,
    out: *mut *mut TivaMonteCarlo,
) -> TivaStatus {
    guard(|| {
        // SAFETY: pointer from this library or null.
        let cfg = unsafe { as_ref(config, "config") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kinds: Vec<ControllerKind> = [(TIVA_PID, ControllerKind::Pid), (TIVA_NMPC, ControllerKind::Nmpc), (TIVA_MMPC, ControllerKind::Mmpc)]
            .into_iter()
            .filter(|(bit, _)| controllers & bit != 0)
            .map(|(_, k)| k)
            .collect();
        if kinds.is_empty() || controllers & !(TIVA_PID | TIVA_NMPC | TIVA_MMPC) != 0 {
            return Err(Failure::Status(
                TivaStatus::InvalidArgument,
                format!("bad controller mask {controllers:#x}"),
            ));
        }
        let result = run_monte_carlo(n_patients, &kinds, &cfg.0, seed, parallelism.max(1), false)?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(TivaMonteCarlo(result))) };
        Ok(())
    })
}

/// Per-controller summary statistics as JSON. Free with [`tiva_string_free`].
///
/// # Safety
/// `mc` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tiva_monte_carlo_summary_json(mc: *const TivaMonteCarlo) -> *mut c_char {
    match unsafe { mc.as_ref() } {
        Some(m) => to_c_string(summary_json(&m.0.summaries)),
        None => ptr::null_mut(),
    }
}

/// Per-run metrics as CSV. Free with [`tiva_string_free`].
///
/// # Safety
/// `mc` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tiva_monte_carlo_metrics_csv(mc: *const TivaMonteCarlo) -> *mut c_char {
    let Some(m) = (unsafe { mc.as_ref() }) else {
        return ptr::null_mut();
    };
    let mut buf = Vec::new();
    match write_metrics_csv(&m.0.records, &mut buf) {
        Ok(()) => to_c_string(String::from_utf8_lossy(&buf).into_owned()),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// Largest MPC solve time over all runs, in milliseconds.
///
/// # Safety
/// `mc` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tiva_monte_carlo_max_solve_ms(mc: *const TivaMonteCarlo) -> f64 {
    unsafe { mc.as_ref() }.map_or(f64::NAN, |m| {
        m.0.records
            .iter()
            .flat_map(|r| r.solve_times_ms.iter().copied())
            .fold(0.0, f64::max)
    })
}

/// # Safety
/// `mc` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tiva_monte_carlo_free(mc: *mut TivaMonteCarlo) {
    if !mc.is_null() {
        // SAFETY: pointer came from Box::into_raw in this library.
        drop(unsafe { Box::from_raw(mc) });
    }
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tiva_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: pointer came from CString::into_raw in this library.
        drop(unsafe { CString::from_raw(s) });
    }
}
