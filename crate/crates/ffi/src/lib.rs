//! C ABI for the mvmc engine.
//!
//! Objects are opaque handles created by `mvmc_*_new`-style functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`MvmcStatus`]; on failure, [`mvmc_last_error`] describes the cause for the
//! calling thread. Strings returned through out-pointers are owned by the
//! caller and released with [`mvmc_string_free`]. Panics never cross the
//! boundary; they surface as [`MvmcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mvmc_core::harness::{self, output, ExperimentConfig};
use mvmc_core::measure::{self, EmpiricalMeasure, Functional};
use mvmc_core::mlmc::{self, EstimatorKind, EstimatorReport, LevelSchedule};
use mvmc_core::models::{self, InitialLaw, ModelSpec};
use mvmc_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MvmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Unsupported = 3,
    Numerical = 4,
    Data = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
}

/// Model: drift, diffusion and initial law.
pub struct MvmcModel(ModelSpec);

/// Functional of a measure.
pub struct MvmcFunctional(Functional);

/// Level schedule.
pub struct MvmcSchedule(LevelSchedule);

/// Result of one estimator run.
pub struct MvmcReport(EstimatorReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MvmcStatus {
    match e.root() {
        Error::Config(_) => MvmcStatus::InvalidArgument,
        Error::Unsupported(_) => MvmcStatus::Unsupported,
        Error::Numerical { .. } => MvmcStatus::Numerical,
        Error::Data(_) | Error::Csv(_) => MvmcStatus::Data,
        Error::Io(_) => MvmcStatus::Io,
        Error::Parse(_) => MvmcStatus::Parse,
        Error::Cloud { .. } => MvmcStatus::Data,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

fn guard(body: impl FnOnce() -> Outcome) -> MvmcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            MvmcStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            MvmcStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            MvmcStatus::Panic
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Core(Error::Config(msg.into()))
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

/// Out-slot for a handle or string, nulled so failures leave no dangling value.
unsafe fn slot<'a, T>(p: *mut *mut T, what: &'static str) -> Result<&'a mut *mut T, Failure> {
    let s = p.as_mut().ok_or(Failure::Null(what))?;
    *s = ptr::null_mut();
    Ok(s)
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::Core(Error::Data("string contains a nul byte".into())))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next mvmc call on the same thread.
#[no_mangle]
pub extern "C" fn mvmc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mvmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mvmc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Mean-field OU `dX = −α(X − E X) dt + σ dW` with `X_0 ~ N(m0, v0)`.
///
/// # Safety
/// `out_model` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvmc_model_mean_field_ou(
    alpha: f64,
    sigma: f64,
    init_mean: f64,
    init_var: f64,
    out_model: *mut *mut MvmcModel,
) -> MvmcStatus {
    guard(|| {
        let dst = slot(out_model, "out_model")?;
        *dst = boxed(MvmcModel(models::mean_field_ou(alpha, sigma, init_mean, init_var)?));
        Ok(())
    })
}

/// Kuramoto model with coupling `K`, noise `σ` and `X_0 ~ N(m0, v0)`.
///
/// # Safety
/// `out_model` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvmc_model_kuramoto(
    coupling: f64,
    sigma: f64,
    init_mean: f64,
    init_var: f64,
    out_model: *mut *mut MvmcModel,
) -> MvmcStatus {
    guard(|| {
        let dst = slot(out_model, "out_model")?;
        let law = InitialLaw::gaussian(init_mean, init_var)?;
        *dst = boxed(MvmcModel(models::kuramoto(coupling, sigma)?.with_initial_law(law)?));
        Ok(())
    })
}

/// Closed-form value of `phi` at time `t`, when the model has one.
///
/// # Safety
/// Handles must be live; `out_value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvmc_model_phi_exact(
    model: *const MvmcModel,
    phi: *const MvmcFunctional,
    t: f64,
    out_value: *mut f64,
) -> MvmcStatus {
    guard(|| {
        let (m, f) = (deref(model, "model")?, deref(phi, "phi")?);
        let v = m
            .0
            .analytic()
            .and_then(|r| r.phi_exact(&f.0, t))
            .ok_or_else(|| Error::Unsupported(format!("no closed form of '{}' for {}", f.0.descriptor(), m.0.tag())))?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mvmc_model_free(model: *mut MvmcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Functional by name (`mean`, `second-moment`, `cos-mean`, ...) in dimension `dim`.
///
/// # Safety
/// `name` must be a nul-terminated string; `out_phi` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvmc_functional_new(
    name: *const c_char,
    dim: usize,
    out_phi: *mut *mut MvmcFunctional,
) -> MvmcStatus {
    guard(|| {
        let dst = slot(out_phi, "out_phi")?;
        let name = string(name, "name")?;
        *dst = boxed(MvmcFunctional(Functional::by_name(name, dim)?));
        Ok(())
    })
}

/// Evaluates `phi` at the uniform measure on `n` points of dimension `dim`,
/// stored row-major.
///
/// # Safety
/// `points` must hold `n * dim` values; `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mvmc_functional_evaluate(
    phi: *const MvmcFunctional,
    points: *const f64,
    n: usize,
    dim: usize,
    out_value: *mut f64,
) -> MvmcStatus {
    guard(|| {
        let f = deref(phi, "phi")?;
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let mu = EmpiricalMeasure::new(slice(points, len, "points")?.to_vec(), dim)?;
        *out(out_value, "out_value")? = f.0.evaluate(&mu)?;
        Ok(())
    })
}

/// # Safety
/// `phi` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mvmc_functional_free(phi: *mut MvmcFunctional) {
    if !phi.is_null() {
        drop(Box::from_raw(phi));
    }
}

unsafe fn kind(name: *const c_char) -> Result<EstimatorKind, Failure> {
    Ok(EstimatorKind::from_name(string(name, "estimator")?)?)
}

/// Schedule for target RMSE `epsilon` matched to `estimator`
/// (`ensemble`, `amlmc-iid`, `amlmc-exact`, `amlmc-euler`, `mlmc-standard`).
///
/// # Safety
/// `estimator` must be a nul-terminated string; `out_schedule` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvmc_schedule_from_epsilon(
    estimator: *const c_char,
    epsilon: f64,
    horizon: f64,
    base_n: usize,
    out_schedule: *mut *mut MvmcSchedule,
) -> MvmcStatus {
    guard(|| {
        let dst = slot(out_schedule, "out_schedule")?;
        let k = kind(estimator)?;
        let s = match k {
            EstimatorKind::Ensemble => LevelSchedule::ensemble_from_epsilon(epsilon, horizon)?,
            EstimatorKind::AmlmcExact => LevelSchedule::exact_from_epsilon(epsilon, horizon)?.with_base_n(base_n)?,
            _ => LevelSchedule::from_epsilon(epsilon, horizon)?.with_base_n(base_n)?,
        };
        *dst = boxed(MvmcSchedule(s));
        Ok(())
    })
}

/// Schedule with `N_ℓ = base_n·2^ℓ`, `p_ℓ = base_steps·2^ℓ` and the given cloud counts.
///
/// # Safety
/// `counts` must hold `levels` values; `out_schedule` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mvmc_schedule_manual(
    horizon: f64,
    base_n: usize,
    base_steps: usize,
    counts: *const u64,
    levels: usize,
    out_schedule: *mut *mut MvmcSchedule,
) -> MvmcStatus {
    guard(|| {
        let dst = slot(out_schedule, "out_schedule")?;
        if counts.is_null() && levels > 0 {
            return Err(Failure::Null("counts"));
        }
        let ms = if levels == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(counts, levels).to_vec()
        };
        *dst = boxed(MvmcSchedule(LevelSchedule::manual(horizon, base_n, base_steps, ms)?));
        Ok(())
    })
}

/// Number of levels `L + 1`; zero for a null handle.
///
/// # Safety
/// `schedule` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn mvmc_schedule_len(schedule: *const MvmcSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.levels().len())
}

/// Particle count, step count and cloud count of level `index`.
///
/// # Safety
/// `schedule` must be live; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mvmc_schedule_level(
    schedule: *const MvmcSchedule,
    index: usize,
    out_n: *mut usize,
    out_steps: *mut usize,
    out_m: *mut u64,
) -> MvmcStatus {
    guard(|| {
        let s = deref(schedule, "schedule")?;
        let l = s
            .0
            .levels()
            .get(index)
            .ok_or_else(|| invalid(format!("level {index} out of range")))?;
        *out(out_n, "out_n")? = l.n;
        *out(out_steps, "out_steps")? = l.steps;
        *out(out_m, "out_m")? = l.m;
        Ok(())
    })
}

/// Closed-form interaction cost of running `estimator` on the schedule.
///
/// # Safety
/// `schedule` must be live; `estimator` a nul-terminated string; `out_cost` valid.
#[no_mangle]
pub unsafe extern "C" fn mvmc_schedule_cost(
    schedule: *const MvmcSchedule,
    estimator: *const c_char,
    out_cost: *mut u64,
) -> MvmcStatus {
    guard(|| {
        let s = deref(schedule, "schedule")?;
        *out(out_cost, "out_cost")? = s.0.cost(kind(estimator)?);
        Ok(())
    })
}

/// # Safety
/// `schedule` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mvmc_schedule_free(schedule: *mut MvmcSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Runs `estimator` and returns its report.
///
/// # Safety
/// Handles must be live; `estimator` a nul-terminated string; `out_report` valid.
#[no_mangle]
pub unsafe extern "C" fn mvmc_run(
    estimator: *const c_char,
    model: *const MvmcModel,
    phi: *const MvmcFunctional,
    schedule: *const MvmcSchedule,
    seed: u64,
    out_report: *mut *mut MvmcReport,
) -> MvmcStatus {
    guard(|| {
        let dst = slot(out_report, "out_report")?;
        let k = kind(estimator)?;
        let (m, f, s) = (deref(model, "model")?, deref(phi, "phi")?, deref(schedule, "schedule")?);
        *dst = boxed(MvmcReport(mlmc::run(k, &m.0, &f.0, &s.0, seed)?));
        Ok(())
    })
}

/// # Safety
/// `report` must be live; `out_value` valid.
#[no_mangle]
pub unsafe extern "C" fn mvmc_report_estimate(report: *const MvmcReport, out_value: *mut f64) -> MvmcStatus {
    guard(|| {
        *out(out_value, "out_value")? = deref(report, "report")?.0.estimate;
        Ok(())
    })
}

/// # Safety
/// `report` must be live; `out_cost` valid.
#[no_mangle]
pub unsafe extern "C" fn mvmc_report_cost(report: *const MvmcReport, out_cost: *mut u64) -> MvmcStatus {
    guard(|| {
        *out(out_cost, "out_cost")? = deref(report, "report")?.0.cost_interactions;
        Ok(())
    })
}

/// Mean and sample variance of the level-`index` terms. `out_has_variance`
/// is 0 when the level has a single cloud.
///
/// # Safety
/// `report` must be live; out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn mvmc_report_level(
    report: *const MvmcReport,
    index: usize,
    out_mean: *mut f64,
    out_variance: *mut f64,
    out_has_variance: *mut i32,
) -> MvmcStatus {
    guard(|| {
        let r = deref(report, "report")?;
        let l = r
            .0
            .per_level
            .get(index)
            .ok_or_else(|| invalid(format!("level {index} out of range")))?;
        *out(out_mean, "out_mean")? = l.mean;
        *out(out_variance, "out_variance")? = l.variance.unwrap_or(f64::NAN);
        *out(out_has_variance, "out_has_variance")? = i32::from(l.variance.is_some());
        Ok(())
    })
}

/// Hex SHA-256 of the report contents, excluding wall time.
///
/// # Safety
/// `report` must be live; `out_hex` valid. Free the string with [`mvmc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mvmc_report_fingerprint(report: *const MvmcReport, out_hex: *mut *mut c_char) -> MvmcStatus {
    guard(|| {
        let dst = slot(out_hex, "out_hex")?;
        let r = deref(report, "report")?;
        *dst = owned_string(r.0.fingerprint())?;
        Ok(())
    })
}

/// # Safety
/// `report` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mvmc_report_free(report: *mut MvmcReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// W₂ distance between uniform measures on `n` scalars each.
///
/// # Safety
/// `a` and `b` must hold `n` values; `out_value` valid.
#[no_mangle]
pub unsafe extern "C" fn mvmc_w2_1d(a: *const f64, b: *const f64, n: usize, out_value: *mut f64) -> MvmcStatus {
    guard(|| {
        let mu = EmpiricalMeasure::from_scalars(slice(a, n, "a")?)?;
        let nu = EmpiricalMeasure::from_scalars(slice(b, n, "b")?)?;
        *out(out_value, "out_value")? = measure::w2_1d(&mu, &nu)?;
        Ok(())
    })
}

/// Runs the experiment described by a TOML config and returns its CSV table.
///
/// # Safety
/// `config_toml` must be a nul-terminated string; `out_csv` valid. Free the
/// string with [`mvmc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mvmc_run_experiment(config_toml: *const c_char, out_csv: *mut *mut c_char) -> MvmcStatus {
    guard(|| {
        let dst = slot(out_csv, "out_csv")?;
        let cfg = ExperimentConfig::from_toml(string(config_toml, "config_toml")?)?;
        let outcome = harness::run(&cfg)?;
        *dst = owned_string(output::csv_string(&outcome.table)?)?;
        Ok(())
    })
}
