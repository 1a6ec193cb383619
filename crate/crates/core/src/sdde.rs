//! Euler-Maruyama and Milstein integrators for the stochastic delay models.
//!
//! Both noise models have diagonal diffusion. The Milstein correction uses
//! only the derivative of each diffusion coefficient with respect to the
//! current state; terms involving the delayed argument are omitted, so the
//! demographic model (whose diffusion depends on `y(t - tau)`) has no
//! first-order guarantee under Milstein.

use serde::{Deserialize, Serialize};

use crate::dde::{Scheme, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::history::{delay_steps, HistoryBuffer, HistoryFunction};
use crate::model::{
    diffusion_model1_unchecked, diffusion_model2_unchecked, drift_unchecked, DiffusionPair,
    ModelParams, Rates, State,
};
use crate::rng::{RngStream, WienerIncrements};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Environmental noise proportional to the state ("model 1").
    Model1,
    /// Demographic noise from the birth/death event table ("model 2").
    Model2,
}

impl NoiseModel {
    pub fn default_scheme(self) -> Scheme {
        match self {
            NoiseModel::Model1 => Scheme::Milstein,
            NoiseModel::Model2 => Scheme::EulerMaruyama,
        }
    }
}

/// A delay system with diagonal noise.
pub trait StochasticSystem: Sync {
    fn tau(&self) -> f64;

    fn drift(&self, s: State, y_delayed: f64) -> Rates;

    fn diffusion(&self, s: State, y_delayed: f64) -> DiffusionPair;

    /// `(dg1/dx, dg2/dy)` at fixed delayed argument.
    fn diffusion_slope(&self, s: State, y_delayed: f64) -> [f64; 2];

    /// True if the diffusion reads the delayed state, which voids the
    /// Milstein order guarantee.
    fn delayed_diffusion(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticModel {
    pub kind: NoiseModel,
    pub params: ModelParams,
}

impl StochasticModel {
    pub fn new(kind: NoiseModel, params: ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { kind, params })
    }

    pub fn model1(params: ModelParams) -> Result<Self> {
        Self::new(NoiseModel::Model1, params)
    }

    pub fn model2(params: ModelParams) -> Result<Self> {
        Self::new(NoiseModel::Model2, params)
    }

    pub fn with_tau(self, tau: f64) -> Self {
        Self {
            params: self.params.with_tau(tau),
            ..self
        }
    }
}

impl StochasticSystem for StochasticModel {
    fn tau(&self) -> f64 {
        self.params.tau
    }

    #[inline]
    fn drift(&self, s: State, y_delayed: f64) -> Rates {
        drift_unchecked(&self.params, s, y_delayed)
    }

    #[inline]
    fn diffusion(&self, s: State, y_delayed: f64) -> DiffusionPair {
        match self.kind {
            NoiseModel::Model1 => diffusion_model1_unchecked(&self.params, s),
            NoiseModel::Model2 => diffusion_model2_unchecked(&self.params, s, y_delayed),
        }
    }

    fn diffusion_slope(&self, s: State, y_delayed: f64) -> [f64; 2] {
        let p = &self.params;
        match self.kind {
            NoiseModel::Model1 => [p.nu1, p.nu2],
            NoiseModel::Model2 => {
                let g = diffusion_model2_unchecked(p, s, y_delayed);
                let denom = 1.0 + p.sigma * s.x;
                let dh1 = p.r * (1.0 - 2.0 * s.x / p.k) + p.beta * y_delayed / (denom * denom);
                let dg1 = if g.g1 > 0.0 { dh1 / (2.0 * g.g1) } else { 0.0 };
                let dg2 = if g.g2 > 0.0 { p.a / (2.0 * g.g2) } else { 0.0 };
                [dg1, dg2]
            }
        }
    }

    fn delayed_diffusion(&self) -> bool {
        self.kind == NoiseModel::Model2
    }
}

/// Whether `scheme` runs below its nominal strong order on `model`.
pub fn is_reduced_order<M: StochasticSystem + ?Sized>(model: &M, scheme: Scheme) -> bool {
    scheme == Scheme::Milstein && model.delayed_diffusion()
}

/// `0.5 * g_i * dg_i/dz_i * (dW_i^2 - dt)` per component.
pub fn milstein_correction<M: StochasticSystem + ?Sized>(
    model: &M,
    s: State,
    y_delayed: f64,
    dw: [f64; 2],
    dt: f64,
) -> [f64; 2] {
    let g = model.diffusion(s, y_delayed);
    let dg = model.diffusion_slope(s, y_delayed);
    [
        0.5 * g.g1 * dg[0] * (dw[0] * dw[0] - dt),
        0.5 * g.g2 * dg[1] * (dw[1] * dw[1] - dt),
    ]
}

pub fn integrate_sdde<M: StochasticSystem + ?Sized>(
    model: &M,
    psi: &HistoryFunction,
    cfg: &SolverConfig,
    stream: &mut RngStream,
) -> Result<Trajectory> {
    let dt = cfg.snapped_dt(model.tau())?;
    let scale = dt.sqrt();
    integrate_with(model, psi, cfg, |_| {
        let a = stream.next_gaussian();
        let b = stream.next_gaussian();
        [scale * a, scale * b]
    })
}

/// Integrates along a prescribed Brownian path, so that runs at different
/// step sizes can share one path.
pub fn integrate_sdde_with_increments<M: StochasticSystem + ?Sized>(
    model: &M,
    psi: &HistoryFunction,
    cfg: &SolverConfig,
    increments: &WienerIncrements,
) -> Result<Trajectory> {
    let dt = cfg.snapped_dt(model.tau())?;
    let steps = cfg.node_count(dt) - 1;
    if increments.n_dims != 2 || increments.n_steps < steps {
        return Err(Error::InvalidInput(format!(
            "need {steps} x 2 increments, got {} x {}",
            increments.n_steps, increments.n_dims
        )));
    }
    if (increments.dt - dt).abs() > 1e-12 * dt {
        return Err(Error::InvalidInput(format!(
            "increment spacing {} does not match step {dt}",
            increments.dt
        )));
    }
    integrate_with(model, psi, cfg, |i| {
        let row = increments.row(i);
        [row[0], row[1]]
    })
}

fn integrate_with<M, W>(
    model: &M,
    psi: &HistoryFunction,
    cfg: &SolverConfig,
    mut next_dw: W,
) -> Result<Trajectory>
where
    M: StochasticSystem + ?Sized,
    W: FnMut(usize) -> [f64; 2],
{
    let milstein = match cfg.scheme {
        Scheme::EulerMaruyama => false,
        Scheme::Milstein => true,
        Scheme::Rk4 => {
            return Err(Error::validation(
                "scheme",
                "stochastic integration needs euler-maruyama or milstein",
            ))
        }
    };
    let tau = model.tau();
    let dt = cfg.snapped_dt(tau)?;
    let lag = delay_steps(tau, dt)? as i64;
    let n = cfg.node_count(dt);

    let mut buf = HistoryBuffer::init_history(psi, tau, dt)?;
    let delayed_y = |buf: &HistoryBuffer, i: usize, s: State| -> f64 {
        if lag == 0 {
            s.y
        } else {
            // always retained: the buffer keeps tau + 2 dt of history
            buf.node(i as i64 - lag).map_or(s.y, |d| d.y)
        }
    };

    let mut s = buf.top();
    let mut yd = delayed_y(&buf, 0, s);
    let mut f = model.drift(s, yd);
    buf.set_top_drift(f);

    let mut traj = Trajectory::with_capacity(dt, n);
    traj.push(s, f);
    for i in 0..n - 1 {
        let dw = next_dw(i);
        let g = model.diffusion(s, yd);
        let mut next = State::new(
            s.x + f[0] * dt + g.g1 * dw[0],
            s.y + f[1] * dt + g.g2 * dw[1],
        );
        if milstein {
            let c = milstein_correction(model, s, yd, dw, dt);
            next.x += c[0];
            next.y += c[1];
        }
        let t_next = (i + 1) as f64 * dt;
        if !next.is_finite() {
            return Err(Error::Divergence { t: t_next });
        }
        next = next.clamp_nonnegative();
        // extinction is absorbing
        if s.x == 0.0 {
            next.x = 0.0;
        }
        if s.y == 0.0 {
            next.y = 0.0;
        }
        yd = delayed_y(&buf, i + 1, next);
        f = model.drift(next, yd);
        if !(f[0].is_finite() && f[1].is_finite()) {
            return Err(Error::Divergence { t: t_next });
        }
        buf.push(t_next, next, f)?;
        traj.push(next, f);
        s = next;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dde::{integrate_dde, PredatorPreyField};
    use crate::rng::{seed_stream, wiener_increments};
    use approx::assert_abs_diff_eq;

    struct Additive;

    impl StochasticSystem for Additive {
        fn tau(&self) -> f64 {
            0.1
        }
        fn drift(&self, _s: State, _yd: f64) -> Rates {
            [0.0, 0.0]
        }
        fn diffusion(&self, _s: State, _yd: f64) -> DiffusionPair {
            DiffusionPair { g1: 0.4, g2: 0.2 }
        }
        fn diffusion_slope(&self, _s: State, _yd: f64) -> [f64; 2] {
            [0.0, 0.0]
        }
    }

    fn model1() -> StochasticModel {
        StochasticModel::model1(ModelParams::stochastic_set().with_tau(0.5)).unwrap()
    }

    #[test]
    fn additive_noise_has_no_correction() {
        let c = milstein_correction(&Additive, State::new(1.0, 1.0), 1.0, [0.3, -0.2], 0.01);
        assert_eq!(c, [0.0, 0.0]);
    }

    #[test]
    fn model1_correction_hand_evaluated() {
        let c = milstein_correction(&model1(), State::new(3.0, 1.0), 1.0, [0.2, 0.0], 0.01);
        assert_abs_diff_eq!(c[0], 0.00045, epsilon = 1e-15);
    }

    #[test]
    fn correction_vanishes_when_bracket_does() {
        let dt: f64 = 0.04;
        let dw = [dt.sqrt(), -dt.sqrt()];
        for m in [
            model1(),
            StochasticModel::model2(ModelParams::stochastic_set()).unwrap(),
        ] {
            let c = milstein_correction(&m, State::new(2.0, 1.5), 1.2, dw, dt);
            assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-16);
            assert_abs_diff_eq!(c[1], 0.0, epsilon = 1e-16);
        }
    }

    #[test]
    fn diffusion_slope_matches_finite_differences() {
        let h = 1e-6;
        for kind in [NoiseModel::Model1, NoiseModel::Model2] {
            let m = StochasticModel::new(kind, ModelParams::stochastic_set()).unwrap();
            for &(x, y, yd) in &[(3.0, 1.0, 1.0), (0.7, 2.2, 1.9), (4.5, 0.3, 0.8)] {
                let s = State::new(x, y);
                let slope = m.diffusion_slope(s, yd);
                let gx = |x: f64| m.diffusion(State::new(x, y), yd).g1;
                let gy = |y: f64| m.diffusion(State::new(x, y), yd).g2;
                let fd1 = (gx(x + h) - gx(x - h)) / (2.0 * h);
                let fd2 = (gy(y + h) - gy(y - h)) / (2.0 * h);
                assert_abs_diff_eq!(slope[0], fd1, epsilon = 1e-6);
                assert_abs_diff_eq!(slope[1], fd2, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SolverConfig::new(0.01, 20.0, Scheme::Milstein);
        let psi = HistoryFunction::constant(3.0, 1.0);
        let a = integrate_sdde(&model1(), &psi, &cfg, &mut seed_stream(42, 3)).unwrap();
        let b = integrate_sdde(&model1(), &psi, &cfg, &mut seed_stream(42, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stream_and_increment_paths_agree() {
        let cfg = SolverConfig::new(0.01, 5.0, Scheme::EulerMaruyama);
        let psi = HistoryFunction::constant(3.0, 1.0);
        let a = integrate_sdde(&model1(), &psi, &cfg, &mut seed_stream(1, 1)).unwrap();
        let w = wiener_increments(&mut seed_stream(1, 1), 0.01, 500, 2).unwrap();
        let b = integrate_sdde_with_increments(&model1(), &psi, &cfg, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_rk4_and_mismatched_increments() {
        let psi = HistoryFunction::constant(3.0, 1.0);
        let cfg = SolverConfig::rk4(0.01, 1.0);
        assert!(integrate_sdde(&model1(), &psi, &cfg, &mut seed_stream(1, 0)).is_err());
        let cfg = SolverConfig::new(0.01, 1.0, Scheme::Milstein);
        let short = wiener_increments(&mut seed_stream(1, 0), 0.01, 10, 2).unwrap();
        assert!(integrate_sdde_with_increments(&model1(), &psi, &cfg, &short).is_err());
        let coarse = wiener_increments(&mut seed_stream(1, 0), 0.02, 100, 2).unwrap();
        assert!(integrate_sdde_with_increments(&model1(), &psi, &cfg, &coarse).is_err());
    }

    /// Zero noise reduces to explicit Euler, which approaches the RK4 path
    /// at first order.
    #[test]
    fn zero_noise_converges_to_deterministic() {
        let params = ModelParams::stochastic_set()
            .with_noise(0.0, 0.0)
            .with_tau(0.5);
        let quiet = StochasticModel::model1(params).unwrap();
        let psi = HistoryFunction::constant(3.0, 1.0);
        let reference = integrate_dde(
            &PredatorPreyField::new(params).unwrap(),
            &psi,
            &SolverConfig::rk4(0.5 / 1024.0, 5.0),
        )
        .unwrap();
        let mut dts = Vec::new();
        let mut errs = Vec::new();
        for m in [16usize, 32, 64, 128] {
            let dt = 0.5 / m as f64;
            let cfg = SolverConfig::new(dt, 5.0, Scheme::Milstein);
            let run = integrate_sdde(&quiet, &psi, &cfg, &mut seed_stream(0, 0)).unwrap();
            let ratio = 1024 / m;
            let err = run
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let r = reference.states[i * ratio];
                    (s.x - r.x).abs().max((s.y - r.y).abs())
                })
                .fold(0.0, f64::max);
            dts.push(dt);
            errs.push(err);
        }
        let slope = crate::stats::log_log_slope(&dts, &errs);
        assert!((slope - 1.0).abs() < 0.15, "slope {slope} errs {errs:?}");
    }

    #[test]
    fn nonnegative_and_absorbing() {
        let m = StochasticModel::model2(ModelParams::stochastic_set().with_tau(0.3)).unwrap();
        let cfg = SolverConfig::new(0.01, 40.0, Scheme::EulerMaruyama);
        let psi = HistoryFunction::constant(3.0, 1.0);
        for run in 0..20 {
            let traj = integrate_sdde(&m, &psi, &cfg, &mut seed_stream(5, run)).unwrap();
            assert!(traj.states.iter().all(|s| s.x >= 0.0 && s.y >= 0.0));
            if let Some(first) = traj.states.iter().position(|s| s.y == 0.0) {
                assert!(traj.states[first..].iter().all(|s| s.y == 0.0));
            }
        }
    }

    #[test]
    fn origin_is_fixed() {
        let m = StochasticModel::model2(ModelParams::stochastic_set().with_tau(0.3)).unwrap();
        let cfg = SolverConfig::new(0.01, 10.0, Scheme::EulerMaruyama);
        let traj = integrate_sdde(
            &m,
            &HistoryFunction::constant(0.0, 0.0),
            &cfg,
            &mut seed_stream(1, 0),
        )
        .unwrap();
        assert!(traj.states.iter().all(|s| *s == State::ZERO));
    }

    #[test]
    fn reduced_order_flag() {
        let m2 = StochasticModel::model2(ModelParams::stochastic_set()).unwrap();
        assert!(is_reduced_order(&m2, Scheme::Milstein));
        assert!(!is_reduced_order(&m2, Scheme::EulerMaruyama));
        assert!(!is_reduced_order(&model1(), Scheme::Milstein));
    }
}
