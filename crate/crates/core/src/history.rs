//! Solution history for delay equations.
//!
//! The buffer stores states on a uniform grid `t_k = k * dt`, starting with
//! samples of the initial history on `[-tau, 0]` and growing as the
//! integrator pushes new nodes. Only the window needed to answer delayed
//! queries is retained.
//!
//! Interpolation between nodes is linear inside the initial-history segment
//! (`t < 0`, values only) and cubic Hermite elsewhere, using the drift
//! stored with each node.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Rates, State};

/// Relative tolerance (in units of `dt`) for recognising grid nodes.
const GRID_TOL: f64 = 1e-7;

/// Initial data on `[-tau, 0]`.
#[derive(Clone)]
pub enum HistoryFunction {
    Constant(State),
    /// Values at strictly increasing times, linearly interpolated.
    Tabulated {
        times: Vec<f64>,
        states: Vec<State>,
    },
    Function(Arc<dyn Fn(f64) -> State + Send + Sync>),
}

impl fmt::Debug for HistoryFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistoryFunction::Constant(s) => f.debug_tuple("Constant").field(s).finish(),
            HistoryFunction::Tabulated { times, .. } => f
                .debug_struct("Tabulated")
                .field("nodes", &times.len())
                .finish(),
            HistoryFunction::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl HistoryFunction {
    pub fn constant(x: f64, y: f64) -> Self {
        HistoryFunction::Constant(State::new(x, y))
    }

    pub fn tabulated(times: Vec<f64>, states: Vec<State>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::InvalidInput(
                "tabulated history needs equally many (>= 1) times and states".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "tabulated history times must be strictly increasing".into(),
            ));
        }
        Ok(HistoryFunction::Tabulated { times, states })
    }

    pub fn from_fn(f: impl Fn(f64) -> State + Send + Sync + 'static) -> Self {
        HistoryFunction::Function(Arc::new(f))
    }

    pub fn eval(&self, t: f64) -> Result<State> {
        match self {
            HistoryFunction::Constant(s) => Ok(*s),
            HistoryFunction::Function(f) => Ok(f(t)),
            HistoryFunction::Tabulated { times, states } => {
                let (first, last) = (times[0], times[times.len() - 1]);
                if !(t >= first && t <= last) {
                    return Err(Error::HistoryUndefined { t });
                }
                let hi = times.partition_point(|&s| s < t);
                if hi == 0 || times[hi] == t {
                    return Ok(states[hi]);
                }
                let (t0, t1) = (times[hi - 1], times[hi]);
                let w = (t - t0) / (t1 - t0);
                let (a, b) = (states[hi - 1], states[hi]);
                Ok(State::new(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)))
            }
        }
    }

    /// Value at `t = 0`, the initial state of the integration.
    pub fn initial_state(&self) -> Result<State> {
        self.eval(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    state: State,
    drift: Option<Rates>,
}

#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    dt: f64,
    tau: f64,
    /// Grid index of `nodes[0]`.
    first_index: i64,
    nodes: VecDeque<Node>,
    clamp: bool,
}

/// Number of grid steps spanning the delay; errors if `tau` is not a
/// multiple of `dt`.
pub(crate) fn delay_steps(tau: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation(
            "dt",
            format!("must be finite and > 0, got {dt}"),
        ));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::validation(
            "tau",
            format!("must be finite and >= 0, got {tau}"),
        ));
    }
    let m = (tau / dt).round();
    if (m * dt - tau).abs() > 1e-9 * tau.max(dt) {
        return Err(Error::InvalidInput(format!(
            "delay {tau} is not a multiple of the step {dt}"
        )));
    }
    Ok(m as usize)
}

impl HistoryBuffer {
    /// Samples `psi` at the grid nodes of `[-tau, 0]`.
    pub fn init_history(psi: &HistoryFunction, tau: f64, dt: f64) -> Result<Self> {
        let m = delay_steps(tau, dt)?;
        let mut nodes = VecDeque::with_capacity(m + 3);
        for k in -(m as i64)..=0 {
            let t = (k as f64 * dt).max(-tau);
            let state = psi.eval(t)?;
            if !state.is_finite() || state.x < 0.0 || state.y < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "history value at t = {t} must be finite and nonnegative, got ({}, {})",
                    state.x, state.y
                )));
            }
            nodes.push_back(Node { state, drift: None });
        }
        Ok(Self {
            dt,
            tau,
            first_index: -(m as i64),
            nodes,
            clamp: true,
        })
    }

    /// Disables clamping of interpolated values at zero, for fields whose
    /// solutions may legitimately change sign.
    pub fn allow_negative(mut self) -> Self {
        self.clamp = false;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn top_index(&self) -> i64 {
        self.first_index + self.nodes.len() as i64 - 1
    }

    pub fn top_time(&self) -> f64 {
        self.top_index() as f64 * self.dt
    }

    pub fn top(&self) -> State {
        self.nodes[self.nodes.len() - 1].state
    }

    /// Records the drift at the newest node (needed for node 0, which comes
    /// from the initial history without one).
    pub fn set_top_drift(&mut self, f: Rates) {
        let last = self.nodes.len() - 1;
        self.nodes[last].drift = Some(f);
    }

    /// Stored state at grid index `k`, if retained.
    pub fn node(&self, k: i64) -> Option<State> {
        let i = k - self.first_index;
        if i < 0 {
            return None;
        }
        self.nodes.get(i as usize).map(|n| n.state)
    }

    /// State at `t`, which must lie in `[t_now - tau, t_now]`.
    pub fn eval_delayed(&self, t: f64) -> Result<State> {
        let hi = self.top_time();
        let lo = (hi - self.tau).max(self.first_index as f64 * self.dt);
        let tol = GRID_TOL * self.dt;
        if !(t >= lo - tol && t <= hi + tol) {
            return Err(Error::OutOfWindow { t, lo, hi });
        }
        let u = t / self.dt;
        let nearest = u.round();
        if (u - nearest).abs() < GRID_TOL {
            let k = nearest as i64;
            return self.node(k).ok_or(Error::OutOfWindow { t, lo, hi });
        }
        let left = u.floor() as i64;
        let theta = u - left as f64;
        let i = (left - self.first_index) as usize;
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        let s = match (left >= 0, a.drift, b.drift) {
            (true, Some(fa), Some(fb)) => hermite(a.state, fa, b.state, fb, self.dt, theta),
            _ => State::new(
                a.state.x + theta * (b.state.x - a.state.x),
                a.state.y + theta * (b.state.y - a.state.y),
            ),
        };
        Ok(if self.clamp { s.clamp_nonnegative() } else { s })
    }

    /// Appends the node at `t = t_top + dt` and drops nodes no longer
    /// reachable by a delayed query.
    pub fn push(&mut self, t: f64, s: State, f: Rates) -> Result<()> {
        let expected = (self.top_index() + 1) as f64 * self.dt;
        if (t - expected).abs() > GRID_TOL * self.dt {
            return Err(Error::NonContiguous { expected, got: t });
        }
        self.nodes.push_back(Node {
            state: s,
            drift: Some(f),
        });
        let oldest_needed = t - self.tau - 2.0 * self.dt;
        while self.nodes.len() > 1
            && (self.first_index as f64) * self.dt < oldest_needed - GRID_TOL * self.dt
        {
            self.nodes.pop_front();
            self.first_index += 1;
        }
        Ok(())
    }
}

/// Cubic Hermite interpolant on `[t0, t0 + h]` at fraction `theta`.
#[inline]
pub(crate) fn hermite(y0: State, f0: Rates, y1: State, f1: Rates, h: f64, theta: f64) -> State {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    State::new(
        h00 * y0.x + h10 * h * f0[0] + h01 * y1.x + h11 * h * f1[0],
        h00 * y0.y + h10 * h * f0[1] + h01 * y1.y + h11 * h * f1[1],
    )
}
