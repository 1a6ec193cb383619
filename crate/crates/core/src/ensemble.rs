//! Monte Carlo ensembles and the analyses built on them: extinction
//! statistics, long-term averages, delay-bifurcation scans and the
//! prey/predator crossover.
//!
//! Run `i` of an ensemble always draws from stream `(base_seed, i)` and
//! per-node sums are accumulated in run-index order, so results are
//! bit-identical for any thread count.

use rayon::prelude::*;

use crate::dde::{integrate_dde, PredatorPreyField, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::history::HistoryFunction;
use crate::model::{ModelParams, Rates, State};
use crate::rng::seed_stream;
use crate::sdde::{integrate_sdde, StochasticModel};
use crate::stats;

pub const DEFAULT_EXTINCTION_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_TRANSIENT_FRACTION: f64 = 0.5;
/// Half peak-to-peak prey amplitude above which a limit cycle is declared.
pub const HOPF_AMPLITUDE_THRESHOLD: f64 = 1e-2;
/// Bracket width at which the bisection for the critical delay stops.
pub const HOPF_BISECTION_WIDTH: f64 = 0.01;
pub const DEFAULT_N_RUNS: usize = 200;
pub const DEFAULT_T_END: f64 = 1500.0;

/// Upper bound on trajectories held in memory at once.
const MAX_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub mean_trajectory: Trajectory,
    /// Predator extinction time per run.
    pub extinction_times: Vec<Option<f64>>,
    pub final_states: Vec<State>,
    pub n_runs: usize,
    pub base_seed: u64,
    pub threshold: f64,
}

impl EnsembleResult {
    pub fn fraction_extinct(&self) -> f64 {
        self.extinction_times.iter().filter(|t| t.is_some()).count() as f64 / self.n_runs as f64
    }

    /// Fraction of runs whose predator went extinct no later than `t`.
    pub fn fraction_extinct_by(&self, t: f64) -> f64 {
        self.extinction_times
            .iter()
            .filter(|e| matches!(e, Some(te) if *te <= t))
            .count() as f64
            / self.n_runs as f64
    }
}

pub fn run_ensemble(
    model: &StochasticModel,
    psi: &HistoryFunction,
    cfg: &SolverConfig,
    n_runs: usize,
    base_seed: u64,
) -> Result<EnsembleResult> {
    run_ensemble_with_threshold(
        model,
        psi,
        cfg,
        n_runs,
        base_seed,
        DEFAULT_EXTINCTION_THRESHOLD,
    )
}

pub fn run_ensemble_with_threshold(
    model: &StochasticModel,
    psi: &HistoryFunction,
    cfg: &SolverConfig,
    n_runs: usize,
    base_seed: u64,
    threshold: f64,
) -> Result<EnsembleResult> {
    if n_runs == 0 {
        return Err(Error::validation("n-runs", "must be at least 1"));
    }
    let dt = cfg.snapped_dt(model.params.tau)?;
    let n = cfg.node_count(dt);

    let mut sum_states = vec![[0.0f64; 2]; n];
    let mut sum_drifts = vec![[0.0f64; 2]; n];
    let mut extinction_times = Vec::with_capacity(n_runs);
    let mut final_states = Vec::with_capacity(n_runs);
    let mut diverged = Vec::new();

    let batch = (rayon::current_num_threads() * 2).clamp(1, MAX_BATCH);
    let mut start = 0;
    while start < n_runs {
        let end = (start + batch).min(n_runs);
        let runs: Vec<Result<Trajectory>> = (start..end)
            .into_par_iter()
            .map(|i| integrate_sdde(model, psi, cfg, &mut seed_stream(base_seed, i as u64)))
            .collect();
        for (offset, run) in runs.into_iter().enumerate() {
            match run {
                Ok(traj) => {
                    for (acc, s) in sum_states.iter_mut().zip(&traj.states) {
                        acc[0] += s.x;
                        acc[1] += s.y;
                    }
                    for (acc, f) in sum_drifts.iter_mut().zip(&traj.drifts) {
                        acc[0] += f[0];
                        acc[1] += f[1];
                    }
                    extinction_times.push(extinction_time(&traj, threshold));
                    final_states.push(traj.final_state().unwrap_or_default());
                }
                Err(Error::Divergence { .. }) => {
                    diverged.push(start + offset);
                    extinction_times.push(None);
                    final_states.push(State::new(f64::NAN, f64::NAN));
                }
                Err(other) => return Err(other),
            }
        }
        start = end;
    }
    if !diverged.is_empty() {
        return Err(Error::EnsembleDivergence { runs: diverged });
    }

    let scale = 1.0 / n_runs as f64;
    let mut mean_trajectory = Trajectory::with_capacity(dt, n);
    for (s, f) in sum_states.iter().zip(&sum_drifts) {
        let avg: Rates = [f[0] * scale, f[1] * scale];
        mean_trajectory.push(State::new(s[0] * scale, s[1] * scale), avg);
    }
    Ok(EnsembleResult {
        mean_trajectory,
        extinction_times,
        final_states,
        n_runs,
        base_seed,
        threshold,
    })
}

/// First node time at which the predator is at or below `threshold`.
pub fn extinction_time(traj: &Trajectory, threshold: f64) -> Option<f64> {
    traj.states
        .iter()
        .position(|s| s.y <= threshold)
        .map(|i| traj.time(i))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrema {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extrema {
    /// Half the peak-to-peak prey excursion.
    pub fn x_amplitude(&self) -> f64 {
        0.5 * (self.x_max - self.x_min)
    }
}

fn check_fraction(transient_fraction: f64) -> Result<()> {
    if !(0.0..1.0).contains(&transient_fraction) {
        return Err(Error::validation(
            "transient-fraction",
            format!("must lie in [0, 1), got {transient_fraction}"),
        ));
    }
    Ok(())
}

/// Index of the first node inside the post-transient window; errors if
/// the window holds fewer than two nodes.
fn window_start(traj: &Trajectory, transient_fraction: f64) -> Result<usize> {
    check_fraction(transient_fraction)?;
    let cutoff = transient_fraction * traj.t_end();
    let start = traj.times().position(|t| t >= cutoff).unwrap_or(traj.len());
    if traj.len().saturating_sub(start) < 2 {
        return Err(Error::EmptyWindow);
    }
    Ok(start)
}

pub fn post_transient_extrema(traj: &Trajectory, transient_fraction: f64) -> Result<Extrema> {
    let start = window_start(traj, transient_fraction)?;
    let mut e = Extrema {
        x_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_min: f64::INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for s in &traj.states[start..] {
        e.x_min = e.x_min.min(s.x);
        e.x_max = e.x_max.max(s.x);
        e.y_min = e.y_min.min(s.y);
        e.y_max = e.y_max.max(s.y);
    }
    Ok(e)
}

/// Time average of `(x, y)` over the post-transient window.
pub fn post_transient_mean(traj: &Trajectory, transient_fraction: f64) -> Result<(f64, f64)> {
    let start = window_start(traj, transient_fraction)?;
    let window = &traj.states[start..];
    let n = window.len() as f64;
    let (sx, sy) = window
        .iter()
        .fold((0.0, 0.0), |(a, b), s| (a + s.x, b + s.y));
    Ok((sx / n, sy / n))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation(
            "tau-grid",
            "must contain at least one delay",
        ));
    }
    if let Some(bad) = grid.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::validation(
            "tau-grid",
            format!("invalid delay {bad}"),
        ));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation(
            "tau-grid",
            "delays must be strictly increasing",
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BifurcationRow {
    pub tau: f64,
    pub extrema: Extrema,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationDiagram {
    pub rows: Vec<BifurcationRow>,
    pub tau_star: Option<f64>,
}

fn deterministic_extrema(
    params: &ModelParams,
    psi: &HistoryFunction,
    tau: f64,
    cfg: &SolverConfig,
    transient_fraction: f64,
) -> Result<Extrema> {
    let field = PredatorPreyField::new(params.with_tau(tau))?;
    let traj = integrate_dde(&field, psi, cfg)?;
    post_transient_extrema(&traj, transient_fraction)
}

/// Post-transient extrema of the deterministic system across delays, and
/// the smallest delay at which a limit cycle appears.
pub fn bifurcation_scan(
    params: &ModelParams,
    psi: &HistoryFunction,
    tau_grid: &[f64],
    cfg: &SolverConfig,
    transient_fraction: f64,
) -> Result<BifurcationDiagram> {
    check_grid(tau_grid)?;
    check_fraction(transient_fraction)?;
    let rows = tau_grid
        .par_iter()
        .map(|&tau| {
            deterministic_extrema(params, psi, tau, cfg, transient_fraction)
                .map(|extrema| BifurcationRow { tau, extrema })
        })
        .collect::<Result<Vec<_>>>()?;

    let first = rows
        .iter()
        .position(|r| r.extrema.x_amplitude() > HOPF_AMPLITUDE_THRESHOLD);
    let tau_star = match first {
        None => None,
        Some(0) => Some(rows[0].tau),
        Some(k) => {
            let (mut lo, mut hi) = (rows[k - 1].tau, rows[k].tau);
            while hi - lo > HOPF_BISECTION_WIDTH + 1e-12 {
                let mid = 0.5 * (lo + hi);
                let e = deterministic_extrema(params, psi, mid, cfg, transient_fraction)?;
                if e.x_amplitude() > HOPF_AMPLITUDE_THRESHOLD {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Some(0.5 * (lo + hi))
        }
    };
    Ok(BifurcationDiagram { rows, tau_star })
}

/// Ensemble-and-time average of `(x, y)` over the post-transient window at
/// delay `tau`.
pub fn long_term_average(
    model: &StochasticModel,
    psi: &HistoryFunction,
    tau: f64,
    cfg: &SolverConfig,
    n_runs: usize,
    transient_fraction: f64,
    base_seed: u64,
) -> Result<(f64, f64)> {
    check_fraction(transient_fraction)?;
    let ens = run_ensemble(&model.with_tau(tau), psi, cfg, n_runs, base_seed)?;
    post_transient_mean(&ens.mean_trajectory, transient_fraction)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossoverRow {
    pub tau: f64,
    pub mean_x: f64,
    pub mean_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverResult {
    pub rows: Vec<CrossoverRow>,
    pub tau_star_star: Option<f64>,
}

/// Delay at which `mean_x - mean_y` first changes sign, by linear
/// interpolation between neighbouring rows.
pub fn locate_crossover(rows: &[CrossoverRow]) -> Option<f64> {
    let diff = |r: &CrossoverRow| r.mean_x - r.mean_y;
    if let Some(r) = rows.first().filter(|r| diff(r) == 0.0) {
        return Some(r.tau);
    }
    rows.windows(2).find_map(|w| {
        let (da, db) = (diff(&w[0]), diff(&w[1]));
        if db == 0.0 {
            Some(w[1].tau)
        } else if da.signum() != db.signum() {
            Some(w[0].tau + (w[1].tau - w[0].tau) * da / (da - db))
        } else {
            None
        }
    })
}

pub fn find_crossover(
    model: &StochasticModel,
    psi: &HistoryFunction,
    tau_grid: &[f64],
    cfg: &SolverConfig,
    n_runs: usize,
    transient_fraction: f64,
    base_seed: u64,
) -> Result<CrossoverResult> {
    check_grid(tau_grid)?;
    let mut rows = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let (mean_x, mean_y) =
            long_term_average(model, psi, tau, cfg, n_runs, transient_fraction, base_seed)?;
        rows.push(CrossoverRow {
            tau,
            mean_x,
            mean_y,
        });
    }
    let tau_star_star = locate_crossover(&rows);
    Ok(CrossoverResult {
        rows,
        tau_star_star,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtinctionRow {
    pub tau: f64,
    /// Mean over runs that went extinct; NaN if none did.
    pub mean_time: f64,
    pub std_time: f64,
    pub fraction_extinct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtinctionCurve {
    pub rows: Vec<ExtinctionRow>,
}

pub fn extinction_curve(
    model: &StochasticModel,
    psi: &HistoryFunction,
    tau_grid: &[f64],
    cfg: &SolverConfig,
    n_runs: usize,
    threshold: f64,
    base_seed: u64,
) -> Result<ExtinctionCurve> {
    check_grid(tau_grid)?;
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(Error::validation(
            "threshold",
            format!("must be finite and >= 0, got {threshold}"),
        ));
    }
    let mut rows = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let ens = run_ensemble_with_threshold(
            &model.with_tau(tau),
            psi,
            cfg,
            n_runs,
            base_seed,
            threshold,
        )?;
        let times: Vec<f64> = ens.extinction_times.iter().flatten().copied().collect();
        rows.push(ExtinctionRow {
            tau,
            mean_time: stats::mean(&times),
            std_time: stats::sample_std(&times),
            fraction_extinct: ens.fraction_extinct(),
        });
    }
    Ok(ExtinctionCurve { rows })
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = one per core).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dde::Scheme;
    use approx::assert_abs_diff_eq;

    fn synthetic(
        xs: impl Fn(f64) -> f64,
        ys: impl Fn(f64) -> f64,
        dt: f64,
        n: usize,
    ) -> Trajectory {
        let mut traj = Trajectory::with_capacity(dt, n);
        for i in 0..n {
            let t = i as f64 * dt;
            traj.push(State::new(xs(t), ys(t)), [0.0, 0.0]);
        }
        traj
    }

    #[test]
    fn extinction_time_first_crossing() {
        let traj = synthetic(
            |_| 1.0,
            |t| if t >= 4.2 - 1e-9 { 0.0 } else { 2.0 },
            0.1,
            100,
        );
        assert_abs_diff_eq!(extinction_time(&traj, 0.0).unwrap(), 4.2, epsilon = 1e-12);
        let alive = synthetic(|_| 1.0, |t| 1.0 + t, 0.1, 100);
        assert_eq!(extinction_time(&alive, 1e-3), None);
    }

    #[test]
    fn extrema_of_constant() {
        let traj = synthetic(|_| 2.0, |_| 3.0, 0.1, 50);
        let e = post_transient_extrema(&traj, 0.5).unwrap();
        assert_eq!((e.x_min, e.x_max, e.y_min, e.y_max), (2.0, 2.0, 3.0, 3.0));
    }

    #[test]
    fn extrema_of_sine() {
        let (m, a, dt) = (1.5, 0.4, 0.01);
        let traj = synthetic(|t| m + a * (2.0 * t).sin(), |_| 1.0, dt, 2001);
        let e = post_transient_extrema(&traj, 0.5).unwrap();
        // one node of sampling error: |d/dt| <= 2a
        assert_abs_diff_eq!(e.x_min, m - a, epsilon = 2.0 * a * dt);
        assert_abs_diff_eq!(e.x_max, m + a, epsilon = 2.0 * a * dt);
        assert_abs_diff_eq!(e.x_amplitude(), a, epsilon = 2.0 * a * dt);
    }

    #[test]
    fn extrema_window_errors() {
        let traj = synthetic(|_| 1.0, |_| 1.0, 0.1, 10);
        assert_eq!(
            post_transient_extrema(&traj, 0.999),
            Err(Error::EmptyWindow)
        );
        assert!(post_transient_extrema(&traj, 1.0).is_err());
        assert!(post_transient_extrema(&traj, -0.1).is_err());
    }

    fn row(tau: f64, d: f64) -> CrossoverRow {
        CrossoverRow {
            tau,
            mean_x: 1.0 + d,
            mean_y: 1.0,
        }
    }

    #[test]
    fn crossover_interpolates() {
        let t = locate_crossover(&[row(0.6, -1.0), row(1.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(t, 0.8, epsilon = 1e-12);
        assert_eq!(
            locate_crossover(&[row(0.4, 1.0), row(0.5, 2.0), row(0.6, 0.5)]),
            None
        );
        assert_eq!(
            locate_crossover(&[row(0.4, -1.0), row(0.5, 0.0)]),
            Some(0.5)
        );
    }

    fn quiet_model(tau: f64) -> StochasticModel {
        StochasticModel::model1(
            ModelParams::stochastic_set()
                .with_noise(0.0, 0.0)
                .with_tau(tau),
        )
        .unwrap()
    }

    #[test]
    fn single_run_ensemble_equals_run() {
        let m = StochasticModel::model1(ModelParams::stochastic_set().with_tau(0.5)).unwrap();
        let psi = HistoryFunction::constant(3.0, 1.0);
        let cfg = SolverConfig::new(0.01, 10.0, Scheme::Milstein);
        let ens = run_ensemble(&m, &psi, &cfg, 1, 77).unwrap();
        let run = integrate_sdde(&m, &psi, &cfg, &mut seed_stream(77, 0)).unwrap();
        assert_eq!(ens.mean_trajectory, run);
    }

    #[test]
    fn noiseless_ensemble_runs_agree() {
        let psi = HistoryFunction::constant(3.0, 1.0);
        let cfg = SolverConfig::new(0.01, 10.0, Scheme::Milstein);
        let ens = run_ensemble(&quiet_model(0.5), &psi, &cfg, 10, 3).unwrap();
        let run = integrate_sdde(&quiet_model(0.5), &psi, &cfg, &mut seed_stream(99, 9)).unwrap();
        assert!(ens
            .final_states
            .iter()
            .all(|s| *s == run.final_state().unwrap()));
        for (a, b) in ens.mean_trajectory.states.iter().zip(&run.states) {
            assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-12);
            assert_abs_diff_eq!(a.y, b.y, epsilon = 1e-12);
        }
    }

    #[test]
    fn ensemble_independent_of_thread_count() {
        let m = StochasticModel::model2(ModelParams::stochastic_set().with_tau(0.3)).unwrap();
        let psi = HistoryFunction::constant(3.0, 1.0);
        let cfg = SolverConfig::new(0.01, 5.0, Scheme::EulerMaruyama);
        let one = with_threads(1, || run_ensemble(&m, &psi, &cfg, 40, 5).unwrap());
        let many = with_threads(4, || run_ensemble(&m, &psi, &cfg, 40, 5).unwrap());
        assert_eq!(one, many);
    }

    #[test]
    fn ensemble_rejects_zero_runs() {
        let cfg = SolverConfig::new(0.01, 1.0, Scheme::Milstein);
        assert!(run_ensemble(
            &quiet_model(0.5),
            &HistoryFunction::constant(3.0, 1.0),
            &cfg,
            0,
            1
        )
        .is_err());
    }

    #[test]
    fn noiseless_long_term_average_matches_equilibrium() {
        let params = ModelParams::hopf_set();
        let m = StochasticModel::model1(params).unwrap();
        let cfg = SolverConfig::new(0.01, 400.0, Scheme::Milstein);
        let (mx, my) = long_term_average(
            &m,
            &HistoryFunction::constant(3.0, 1.0),
            0.2,
            &cfg,
            2,
            0.5,
            1,
        )
        .unwrap();
        let eq = crate::model::compute_equilibria(&params)
            .unwrap()
            .eps_plus
            .unwrap();
        assert_abs_diff_eq!(mx, eq.x, epsilon = 1e-2);
        assert_abs_diff_eq!(my, eq.y, epsilon = 1e-2);
    }

    #[test]
    fn immediate_extinction_below_threshold() {
        let m = StochasticModel::model2(ModelParams::stochastic_set()).unwrap();
        let psi = HistoryFunction::constant(3.0, 0.5);
        let cfg = SolverConfig::new(0.01, 1.0, Scheme::EulerMaruyama);
        let curve = extinction_curve(&m, &psi, &[0.1, 0.3], &cfg, 5, 1.0, 2).unwrap();
        for r in &curve.rows {
            assert_eq!(r.mean_time, 0.0);
            assert_eq!(r.std_time, 0.0);
            assert_eq!(r.fraction_extinct, 1.0);
        }
    }

    #[test]
    fn grid_validation() {
        let cfg = SolverConfig::rk4(0.01, 10.0);
        let psi = HistoryFunction::constant(3.0, 1.0);
        let p = ModelParams::hopf_set();
        assert!(bifurcation_scan(&p, &psi, &[], &cfg, 0.5).is_err());
        assert!(bifurcation_scan(&p, &psi, &[0.3, 0.2], &cfg, 0.5).is_err());
    }
}
