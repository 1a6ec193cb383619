//! Predator-prey model mathematics.
//!
//! The prey `x` grows logistically and is consumed through a saturating
//! (Michaelis-Menten) functional response driven by the predator density one
//! delay earlier, `y(t - tau)`:
//!
//! ```text
//! dx/dt = r x (1 - x/K) - beta x y_d / (1 + sigma x)
//! dy/dt = beta x y_d / (1 + sigma x) - a y
//! ```
//!
//! Two noise models are layered on top of this drift: proportional
//! environmental noise (`nu_i * z_i dW_i`) and demographic noise whose
//! variance is derived from the birth/death event table below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate pair `(dx/dt, dy/dt)`.
pub type Rates = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Prey specific growth rate.
    pub r: f64,
    /// Prey carrying capacity.
    #[serde(rename = "K")]
    pub k: f64,
    /// Maximum feeding rate.
    pub beta: f64,
    /// Saturation constant of the functional response.
    pub sigma: f64,
    /// Predator death rate.
    pub a: f64,
    /// Discrete delay in the predation term.
    pub tau: f64,
    /// Environmental noise intensity on the prey.
    pub nu1: f64,
    /// Environmental noise intensity on the predator.
    pub nu2: f64,
}

impl ModelParams {
    /// Parameter set used for the deterministic Hopf study (`sigma = 0.01`).
    pub fn hopf_set() -> Self {
        Self {
            r: 0.8,
            k: 5.0,
            beta: 0.5,
            sigma: 0.01,
            a: 0.3,
            tau: 0.0,
            nu1: 0.0,
            nu2: 0.0,
        }
    }

    /// Parameter set used for the stochastic studies (`sigma = 1/3`,
    /// `nu1 = nu2 = 0.1`).
    pub fn stochastic_set() -> Self {
        Self {
            sigma: 1.0 / 3.0,
            nu1: 0.1,
            nu2: 0.1,
            ..Self::hopf_set()
        }
    }

    pub fn with_tau(self, tau: f64) -> Self {
        Self { tau, ..self }
    }

    pub fn with_noise(self, nu1: f64, nu2: f64) -> Self {
        Self { nu1, nu2, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64, bool); 8] = [
            ("r", self.r, self.r > 0.0),
            ("K", self.k, self.k > 0.0),
            ("beta", self.beta, self.beta > 0.0),
            ("sigma", self.sigma, self.sigma >= 0.0),
            ("a", self.a, self.a > 0.0),
            ("tau", self.tau, self.tau >= 0.0),
            ("nu1", self.nu1, self.nu1 >= 0.0),
            ("nu2", self.nu2, self.nu2 >= 0.0),
        ];
        for (field, value, ok) in checks {
            if !value.is_finite() || !ok {
                let bound = match field {
                    "r" | "K" | "beta" | "a" => "must be finite and > 0",
                    _ => "must be finite and >= 0",
                };
                return Err(Error::validation(field, format!("{bound}, got {value}")));
            }
        }
        Ok(())
    }

    /// Functional response `beta x y_d / (1 + sigma x)`.
    #[inline]
    pub fn predation(&self, x: f64, y_delayed: f64) -> f64 {
        self.beta * x * y_delayed / (1.0 + self.sigma * x)
    }

    /// Logistic growth `r x (1 - x/K)`; negative above carrying capacity.
    #[inline]
    pub fn logistic(&self, x: f64) -> f64 {
        self.r * x * (1.0 - x / self.k)
    }
}

/// Prey/predator density pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub const ZERO: State = State { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn clamp_nonnegative(self) -> Self {
        Self {
            x: self.x.max(0.0),
            y: self.y.max(0.0),
        }
    }

    /// `self + h * rates`
    #[inline]
    pub fn advance(self, rates: Rates, h: f64) -> Self {
        Self {
            x: self.x + h * rates[0],
            y: self.y + h * rates[1],
        }
    }

    pub fn as_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for State {
    fn from(v: [f64; 2]) -> Self {
        Self { x: v[0], y: v[1] }
    }
}

/// Diagonal diffusion coefficients; off-diagonal entries are zero in both
/// noise models.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiffusionPair {
    pub g1: f64,
    pub g2: f64,
}

/// Birth/death event table for the demographic noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionTable {
    pub p: [f64; 4],
    pub dz: [[f64; 2]; 4],
}

impl TransitionTable {
    pub const CHANGES: [[f64; 2]; 4] = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];

    /// `sum_j p_j dZ_j`
    pub fn expected_change(&self) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (p, dz) in self.p.iter().zip(self.dz.iter()) {
            out[0] += p * dz[0];
            out[1] += p * dz[1];
        }
        out
    }

    /// `sum_j p_j dZ_j dZ_j^T` as a row-major 2x2 matrix.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for (p, dz) in self.p.iter().zip(self.dz.iter()) {
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] += p * dz[i] * dz[j];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// No biologically meaningful interior equilibrium.
    NoInterior,
    /// Interior equilibrium stable for every delay (`1 < R0 <= Rc`).
    StableInterior,
    /// Stability is lost at some critical delay (`1 < Rc < R0`).
    DelayDependent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumSet {
    pub eps0: State,
    pub eps1: State,
    pub eps_plus: Option<State>,
    pub r0: f64,
    pub rc: f64,
    pub regime: Regime,
}

fn check_inputs(s: State, y_delayed: f64) -> Result<()> {
    for (name, v) in [("x", s.x), ("y", s.y), ("y_delayed", y_delayed)] {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("{name} is not finite ({v})")));
        }
        if v < 0.0 {
            return Err(Error::InvalidInput(format!("{name} is negative ({v})")));
        }
    }
    Ok(())
}

/// Deterministic drift of the delayed predator-prey system.
pub fn drift(params: &ModelParams, s: State, y_delayed: f64) -> Result<Rates> {
    check_inputs(s, y_delayed)?;
    Ok(drift_unchecked(params, s, y_delayed))
}

#[inline]
pub(crate) fn drift_unchecked(params: &ModelParams, s: State, y_delayed: f64) -> Rates {
    let eaten = params.predation(s.x, y_delayed);
    [params.logistic(s.x) - eaten, eaten - params.a * s.y]
}

/// Environmental noise: `(nu1 x, nu2 y)`.
pub fn diffusion_model1(params: &ModelParams, s: State) -> Result<DiffusionPair> {
    check_inputs(s, 0.0)?;
    Ok(diffusion_model1_unchecked(params, s))
}

#[inline]
pub(crate) fn diffusion_model1_unchecked(params: &ModelParams, s: State) -> DiffusionPair {
    DiffusionPair {
        g1: params.nu1 * s.x,
        g2: params.nu2 * s.y,
    }
}

/// Demographic noise: square roots of the diagonal of the event covariance.
/// Negative radicands (prey above carrying capacity) are clamped to zero.
pub fn diffusion_model2(params: &ModelParams, s: State, y_delayed: f64) -> Result<DiffusionPair> {
    check_inputs(s, y_delayed)?;
    Ok(diffusion_model2_unchecked(params, s, y_delayed))
}

#[inline]
pub(crate) fn diffusion_model2_unchecked(
    params: &ModelParams,
    s: State,
    y_delayed: f64,
) -> DiffusionPair {
    let eaten = params.predation(s.x, y_delayed);
    DiffusionPair {
        g1: (params.logistic(s.x) + eaten).max(0.0).sqrt(),
        g2: (eaten + params.a * s.y).max(0.0).sqrt(),
    }
}

pub fn transition_table(
    params: &ModelParams,
    s: State,
    y_delayed: f64,
    dt: f64,
) -> Result<TransitionTable> {
    check_inputs(s, y_delayed)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "dt must be finite and > 0, got {dt}"
        )));
    }
    let eaten = params.predation(s.x, y_delayed) * dt;
    let p = [
        (params.logistic(s.x) * dt).max(0.0),
        eaten,
        eaten,
        params.a * s.y * dt,
    ];
    if let Some((j, &pj)) = p.iter().enumerate().find(|(_, &pj)| pj > 1.0) {
        return Err(Error::StepTooLarge {
            index: j + 1,
            p: pj,
            dt,
        });
    }
    Ok(TransitionTable {
        p,
        dz: TransitionTable::CHANGES,
    })
}

pub fn compute_equilibria(params: &ModelParams) -> Result<EquilibriumSet> {
    params.validate()?;
    let eps0 = State::ZERO;
    let eps1 = State::new(params.k, 0.0);
    let denom = params.beta - params.sigma * params.a;
    if denom <= 0.0 {
        return Ok(EquilibriumSet {
            eps0,
            eps1,
            eps_plus: None,
            r0: 0.0,
            rc: f64::NAN,
            regime: Regime::NoInterior,
        });
    }
    let x_star = params.a / denom;
    let r0 = params.k / x_star;
    let rc = 2.0 + 1.0 / (1.0 + 2.0 * params.sigma * x_star);
    let y_star = params.r * x_star * x_star * (r0 - 1.0) / (params.k * params.a);
    let (eps_plus, regime) = if r0 <= 1.0 {
        (None, Regime::NoInterior)
    } else if r0 <= rc {
        (Some(State::new(x_star, y_star)), Regime::StableInterior)
    } else {
        (Some(State::new(x_star, y_star)), Regime::DelayDependent)
    };
    Ok(EquilibriumSet {
        eps0,
        eps1,
        eps_plus,
        r0,
        rc,
        regime,
    })
}
