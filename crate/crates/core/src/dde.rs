//! Fixed-step RK4 method of steps for systems with one discrete delay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{delay_steps, HistoryBuffer, HistoryFunction};
use crate::model::{drift_unchecked, ModelParams, Rates, State};

/// Default step size.
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Rk4,
    EulerMaruyama,
    Milstein,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Rk4 => "rk4",
            Scheme::EulerMaruyama => "euler-maruyama",
            Scheme::Milstein => "milstein",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rk4" => Ok(Scheme::Rk4),
            "euler-maruyama" | "euler_maruyama" | "em" => Ok(Scheme::EulerMaruyama),
            "milstein" => Ok(Scheme::Milstein),
            other => Err(format!(
                "unknown scheme `{other}` (rk4, euler-maruyama, milstein)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64, scheme: Scheme) -> Self {
        Self { dt, t_end, scheme }
    }

    pub fn rk4(dt: f64, t_end: f64) -> Self {
        Self::new(dt, t_end, Scheme::Rk4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation(
                "dt",
                format!("must be finite and > 0, got {}", self.dt),
            ));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::validation(
                "t-end",
                format!("must be finite and > 0, got {}", self.t_end),
            ));
        }
        Ok(())
    }

    /// Step actually used for delay `tau`: `tau / m` with
    /// `m = round(tau / dt)`, so the delay falls on grid nodes. Requires
    /// `dt <= tau` whenever `tau > 0`.
    pub fn snapped_dt(&self, tau: f64) -> Result<f64> {
        self.validate()?;
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::validation(
                "tau",
                format!("must be finite and >= 0, got {tau}"),
            ));
        }
        if tau == 0.0 {
            return Ok(self.dt);
        }
        if self.dt > tau * (1.0 + 1e-12) {
            return Err(Error::validation(
                "dt",
                format!("step {} exceeds the delay {tau}; reduce dt", self.dt),
            ));
        }
        let m = (tau / self.dt).round().max(1.0);
        Ok(tau / m)
    }

    /// Number of output nodes, `floor(t_end / dt) + 1`.
    pub fn node_count(&self, dt: f64) -> usize {
        (self.t_end / dt + 1e-9).floor() as usize + 1
    }
}

/// Solution sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<State>,
    pub drifts: Vec<Rates>,
}

impl Trajectory {
    pub fn with_capacity(dt: f64, n: usize) -> Self {
        Self {
            t0: 0.0,
            dt,
            states: Vec::with_capacity(n),
            drifts: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.time(i))
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn final_state(&self) -> Option<State> {
        self.states.last().copied()
    }

    pub(crate) fn push(&mut self, s: State, f: Rates) {
        self.states.push(s);
        self.drifts.push(f);
    }
}

/// Right-hand side `f(t, z(t), z(t - tau))` of a delay system.
pub trait DelayedField {
    fn tau(&self) -> f64;

    fn eval(&self, t: f64, s: State, delayed: State) -> Rates;

    /// Whether solutions are densities, clamped at zero.
    fn nonnegative(&self) -> bool {
        true
    }
}

/// The deterministic predator-prey field.
#[derive(Debug, Clone, Copy)]
pub struct PredatorPreyField {
    pub params: ModelParams,
}

impl PredatorPreyField {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl DelayedField for PredatorPreyField {
    fn tau(&self) -> f64 {
        self.params.tau
    }

    fn eval(&self, _t: f64, s: State, delayed: State) -> Rates {
        drift_unchecked(&self.params, s, delayed.y)
    }
}

fn rates_finite(f: Rates) -> bool {
    f[0].is_finite() && f[1].is_finite()
}

pub fn integrate_dde<F: DelayedField + ?Sized>(
    field: &F,
    psi: &HistoryFunction,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    if cfg.scheme != Scheme::Rk4 {
        return Err(Error::validation(
            "scheme",
            format!(
                "deterministic integration uses rk4, got {}",
                cfg.scheme.name()
            ),
        ));
    }
    let tau = field.tau();
    let dt = cfg.snapped_dt(tau)?;
    delay_steps(tau, dt)?;
    let n = cfg.node_count(dt);
    let clamp = field.nonnegative();

    let mut buf = HistoryBuffer::init_history(psi, tau, dt)?;
    if !clamp {
        buf = buf.allow_negative();
    }
    let delayed = |buf: &HistoryBuffer, t: f64, s: State| -> Result<State> {
        if tau == 0.0 {
            Ok(s)
        } else {
            buf.eval_delayed(t - tau)
        }
    };

    let mut s = buf.top();
    let mut f = field.eval(0.0, s, delayed(&buf, 0.0, s)?);
    if !rates_finite(f) {
        return Err(Error::Divergence { t: 0.0 });
    }
    buf.set_top_drift(f);

    let mut traj = Trajectory::with_capacity(dt, n);
    traj.push(s, f);
    let half = 0.5 * dt;
    for i in 0..n - 1 {
        let t = i as f64 * dt;
        let t_mid = t + half;
        let t_next = (i + 1) as f64 * dt;

        let k1 = f;
        let s2 = s.advance(k1, half);
        let k2 = field.eval(t_mid, s2, delayed(&buf, t_mid, s2)?);
        let s3 = s.advance(k2, half);
        let k3 = field.eval(t_mid, s3, delayed(&buf, t_mid, s3)?);
        let s4 = s.advance(k3, dt);
        let k4 = field.eval(t_next, s4, delayed(&buf, t_next, s4)?);
        let incr = [
            (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]) / 6.0,
            (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]) / 6.0,
        ];
        let mut next = s.advance(incr, dt);
        if !next.is_finite() {
            return Err(Error::Divergence { t: t_next });
        }
        if clamp {
            next = next.clamp_nonnegative();
        }
        let f_next = field.eval(t_next, next, delayed(&buf, t_next, next)?);
        if !rates_finite(f_next) {
            return Err(Error::Divergence { t: t_next });
        }
        buf.push(t_next, next, f_next)?;
        traj.push(next, f_next);
        s = next;
        f = f_next;
    }
    Ok(traj)
}
