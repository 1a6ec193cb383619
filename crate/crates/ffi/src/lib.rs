//! C interface to `delaydyn`.
//!
//! Trajectories and ensembles are returned as opaque handles that the
//! caller releases with the matching `*_free` function. Every fallible call
//! returns a [`DdStatus`]; on failure, [`dd_last_error`] gives a message for
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use delaydyn::{
    compute_equilibria, drift, ensemble::run_ensemble_with_threshold, integrate_dde,
    integrate_sdde, EnsembleResult, Error, HistoryFunction, ModelParams, NoiseModel,
    PredatorPreyField, Regime, Scheme, SolverConfig, State, StochasticModel, Trajectory,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    StepTooLarge = 3,
    HistoryUndefined = 4,
    Divergence = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdNoise {
    Deterministic = 0,
    Model1 = 1,
    Model2 = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdScheme {
    /// Per-model default: RK4, Milstein for Model1, Euler-Maruyama for Model2.
    Default = 0,
    Rk4 = 1,
    EulerMaruyama = 2,
    Milstein = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdRegime {
    NoInterior = 0,
    StableInterior = 1,
    DelayDependent = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdParams {
    pub r: f64,
    pub k: f64,
    pub beta: f64,
    pub sigma: f64,
    pub a: f64,
    pub tau: f64,
    pub nu1: f64,
    pub nu2: f64,
}

/// Equilibria. The interior point is NaN when it does not exist.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdEquilibria {
    pub x_star: f64,
    pub y_star: f64,
    pub r0: f64,
    pub rc: f64,
    pub regime: DdRegime,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdRunConfig {
    pub noise: DdNoise,
    pub scheme: DdScheme,
    pub x0: f64,
    pub y0: f64,
    pub dt: f64,
    pub t_end: f64,
}

/// Opaque trajectory handle.
pub struct DdTrajectory(Trajectory);

/// Opaque ensemble handle.
pub struct DdEnsemble(EnsembleResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let text = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(err: &Error) -> DdStatus {
    match err {
        Error::StepTooLarge { .. } => DdStatus::StepTooLarge,
        Error::HistoryUndefined { .. } => DdStatus::HistoryUndefined,
        e if e.is_divergence() => DdStatus::Divergence,
        _ => DdStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic for [`dd_last_error`].
fn guard(f: impl FnOnce() -> Result<(), DdStatus>) -> DdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic".into());
            DdStatus::Panic
        }
    }
}

fn fail(err: Error) -> DdStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn null(name: &str) -> DdStatus {
    set_error(format!("`{name}` is null"));
    DdStatus::NullPointer
}

unsafe fn read<'a, T>(p: *const T, name: &str) -> Result<&'a T, DdStatus> {
    p.as_ref().ok_or_else(|| null(name))
}

impl From<DdParams> for ModelParams {
    fn from(p: DdParams) -> Self {
        ModelParams {
            r: p.r,
            k: p.k,
            beta: p.beta,
            sigma: p.sigma,
            a: p.a,
            tau: p.tau,
            nu1: p.nu1,
            nu2: p.nu2,
        }
    }
}

impl From<ModelParams> for DdParams {
    fn from(p: ModelParams) -> Self {
        DdParams {
            r: p.r,
            k: p.k,
            beta: p.beta,
            sigma: p.sigma,
            a: p.a,
            tau: p.tau,
            nu1: p.nu1,
            nu2: p.nu2,
        }
    }
}

fn resolve_scheme(noise: DdNoise, scheme: DdScheme) -> Scheme {
    match scheme {
        DdScheme::Rk4 => Scheme::Rk4,
        DdScheme::EulerMaruyama => Scheme::EulerMaruyama,
        DdScheme::Milstein => Scheme::Milstein,
        DdScheme::Default => match noise {
            DdNoise::Deterministic => Scheme::Rk4,
            DdNoise::Model1 => NoiseModel::Model1.default_scheme(),
            DdNoise::Model2 => NoiseModel::Model2.default_scheme(),
        },
    }
}

fn stochastic(params: ModelParams, noise: DdNoise) -> Result<StochasticModel, DdStatus> {
    let kind = match noise {
        DdNoise::Model1 => NoiseModel::Model1,
        DdNoise::Model2 => NoiseModel::Model2,
        DdNoise::Deterministic => {
            set_error("a stochastic model is required".into());
            return Err(DdStatus::InvalidArgument);
        }
    };
    StochasticModel::new(kind, params).map_err(fail)
}

fn history(cfg: &DdRunConfig) -> Result<HistoryFunction, DdStatus> {
    if !(cfg.x0 >= 0.0 && cfg.y0 >= 0.0 && cfg.x0.is_finite() && cfg.y0.is_finite()) {
        set_error(format!(
            "initial state ({}, {}) must be finite and >= 0",
            cfg.x0, cfg.y0
        ));
        return Err(DdStatus::InvalidArgument);
    }
    Ok(HistoryFunction::constant(cfg.x0, cfg.y0))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn dd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parameter set used for the deterministic delay scan.
#[no_mangle]
pub extern "C" fn dd_params_hopf_set() -> DdParams {
    ModelParams::hopf_set().into()
}

/// Parameter set used for the stochastic studies.
#[no_mangle]
pub extern "C" fn dd_params_stochastic_set() -> DdParams {
    ModelParams::stochastic_set().into()
}

/// # Safety
/// `params` and `out` must be valid pointers or NULL.
#[no_mangle]
pub unsafe extern "C" fn dd_compute_equilibria(
    params: *const DdParams,
    out: *mut DdEquilibria,
) -> DdStatus {
    guard(|| {
        let p = read(params, "params")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let eq = compute_equilibria(&(*p).into()).map_err(fail)?;
        let (x_star, y_star) = eq.eps_plus.map_or((f64::NAN, f64::NAN), |s| (s.x, s.y));
        *out = DdEquilibria {
            x_star,
            y_star,
            r0: eq.r0,
            rc: eq.rc,
            regime: match eq.regime {
                Regime::NoInterior => DdRegime::NoInterior,
                Regime::StableInterior => DdRegime::StableInterior,
                Regime::DelayDependent => DdRegime::DelayDependent,
            },
        };
        Ok(())
    })
}

/// Writes the drift at `(x, y)` with delayed predator `y_delayed` to
/// `out[0..2]`.
///
/// # Safety
/// `params` must be valid; `out` must point to two writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dd_drift(
    params: *const DdParams,
    x: f64,
    y: f64,
    y_delayed: f64,
    out: *mut f64,
) -> DdStatus {
    guard(|| {
        let p = read(params, "params")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let params: ModelParams = (*p).into();
        params.validate().map_err(fail)?;
        let f = drift(&params, State::new(x, y), y_delayed).map_err(fail)?;
        ptr::copy_nonoverlapping(f.as_ptr(), out, 2);
        Ok(())
    })
}

/// Integrates one trajectory from a constant history. Stochastic runs use
/// random stream `(seed, stream_index)`; both are ignored otherwise.
///
/// # Safety
/// `params`, `cfg` and `out` must be valid pointers. On success `*out`
/// receives a handle to release with [`dd_trajectory_free`].
#[no_mangle]
pub unsafe extern "C" fn dd_simulate(
    params: *const DdParams,
    cfg: *const DdRunConfig,
    seed: u64,
    stream_index: u64,
    out: *mut *mut DdTrajectory,
) -> DdStatus {
    guard(|| {
        let p: ModelParams = (*read(params, "params")?).into();
        let cfg = read(cfg, "cfg")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let psi = history(cfg)?;
        let solver = SolverConfig::new(cfg.dt, cfg.t_end, resolve_scheme(cfg.noise, cfg.scheme));
        let traj = match cfg.noise {
            DdNoise::Deterministic => {
                let field = PredatorPreyField::new(p).map_err(fail)?;
                integrate_dde(&field, &psi, &solver).map_err(fail)?
            }
            noise => {
                let model = stochastic(p, noise)?;
                let mut stream = delaydyn::seed_stream(seed, stream_index);
                integrate_sdde(&model, &psi, &solver, &mut stream).map_err(fail)?
            }
        };
        *out = Box::into_raw(Box::new(DdTrajectory(traj)));
        Ok(())
    })
}

/// # Safety
/// `traj` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dd_trajectory_free(traj: *mut DdTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of stored nodes (0 for NULL).
///
/// # Safety
/// `traj` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dd_trajectory_len(traj: *const DdTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Step actually used, after snapping to the delay (NaN for NULL).
///
/// # Safety
/// `traj` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dd_trajectory_dt(traj: *const DdTrajectory) -> f64 {
    traj.as_ref().map_or(f64::NAN, |t| t.0.dt)
}

/// Copies times and states into caller buffers of length `capacity`. Any
/// of `t`, `x`, `y` may be NULL to skip that column.
///
/// # Safety
/// Non-null buffers must hold at least `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn dd_trajectory_copy(
    traj: *const DdTrajectory,
    t: *mut f64,
    x: *mut f64,
    y: *mut f64,
    capacity: usize,
) -> DdStatus {
    guard(|| {
        let traj = &read(traj, "traj")?.0;
        let n = traj.len();
        if capacity < n {
            set_error(format!(
                "buffer holds {capacity} values, trajectory has {n}"
            ));
            return Err(DdStatus::BufferTooSmall);
        }
        for (i, s) in traj.states.iter().enumerate() {
            if !t.is_null() {
                *t.add(i) = traj.time(i);
            }
            if !x.is_null() {
                *x.add(i) = s.x;
            }
            if !y.is_null() {
                *y.add(i) = s.y;
            }
        }
        Ok(())
    })
}

/// Runs `n_runs` independent stochastic trajectories; run `i` uses stream
/// `(seed, i)`, so results do not depend on thread count.
///
/// # Safety
/// `params`, `cfg` and `out` must be valid pointers. On success `*out`
/// receives a handle to release with [`dd_ensemble_free`].
#[no_mangle]
pub unsafe extern "C" fn dd_run_ensemble(
    params: *const DdParams,
    cfg: *const DdRunConfig,
    n_runs: usize,
    seed: u64,
    threshold: f64,
    out: *mut *mut DdEnsemble,
) -> DdStatus {
    guard(|| {
        let p: ModelParams = (*read(params, "params")?).into();
        let cfg = read(cfg, "cfg")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let model = stochastic(p, cfg.noise)?;
        let psi = history(cfg)?;
        let solver = SolverConfig::new(cfg.dt, cfg.t_end, resolve_scheme(cfg.noise, cfg.scheme));
        let ens = run_ensemble_with_threshold(&model, &psi, &solver, n_runs, seed, threshold)
            .map_err(fail)?;
        *out = Box::into_raw(Box::new(DdEnsemble(ens)));
        Ok(())
    })
}

/// # Safety
/// `ens` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dd_ensemble_free(ens: *mut DdEnsemble) {
    if !ens.is_null() {
        drop(Box::from_raw(ens));
    }
}

/// Copies the ensemble mean into a new trajectory handle, to be released
/// with [`dd_trajectory_free`].
///
/// # Safety
/// `ens` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dd_ensemble_mean(
    ens: *const DdEnsemble,
    out: *mut *mut DdTrajectory,
) -> DdStatus {
    guard(|| {
        let e = &read(ens, "ens")?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = Box::into_raw(Box::new(DdTrajectory(e.mean_trajectory.clone())));
        Ok(())
    })
}

/// # Safety
/// `ens` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dd_ensemble_n_runs(ens: *const DdEnsemble) -> usize {
    ens.as_ref().map_or(0, |e| e.0.n_runs)
}

/// Fraction of runs whose predator fell to the threshold (NaN for NULL).
///
/// # Safety
/// `ens` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dd_ensemble_fraction_extinct(ens: *const DdEnsemble) -> f64 {
    ens.as_ref().map_or(f64::NAN, |e| e.0.fraction_extinct())
}

/// Extinction time of run `index`, or NaN if it never went extinct.
///
/// # Safety
/// `ens` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dd_ensemble_extinction_time(
    ens: *const DdEnsemble,
    index: usize,
    out: *mut f64,
) -> DdStatus {
    guard(|| {
        let e = &read(ens, "ens")?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = e.extinction_times.get(index).ok_or_else(|| {
            set_error(format!("run {index} out of range (n_runs = {})", e.n_runs));
            DdStatus::InvalidArgument
        })?;
        *out = t.unwrap_or(f64::NAN);
        Ok(())
    })
}
