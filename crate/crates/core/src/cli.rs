//! Command-line front end.
//!
//! Configuration comes from an optional flat JSON file whose keys are the
//! long flag names (`"r"`, `"K"`, `"t-end"`, `"tau-grid"`, ...), overridden
//! by any flags given on the command line. Results are written as CSV with
//! a JSON metadata sidecar (`<output>.meta.json`) that records everything
//! needed to reproduce the run.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::dde::{integrate_dde, PredatorPreyField, Scheme, SolverConfig};
use crate::ensemble::{
    self, bifurcation_scan, extinction_curve, find_crossover, run_ensemble_with_threshold,
    DEFAULT_EXTINCTION_THRESHOLD, DEFAULT_N_RUNS, DEFAULT_TRANSIENT_FRACTION,
};
use crate::error::Error;
use crate::history::HistoryFunction;
use crate::model::{compute_equilibria, ModelParams};
use crate::rng::seed_stream;
use crate::sdde::{integrate_sdde, is_reduced_order, NoiseModel, StochasticModel};

pub const THREADS_ENV: &str = "DELAYDYN_THREADS";
pub const DEFAULT_SEED: u64 = 42;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn config(key: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_divergence() => EXIT_DIVERGED,
            _ => EXIT_INVALID,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "delaydyn",
    version,
    about = "Delayed predator-prey simulations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Equilibria,
    Simulate,
    Ensemble,
    Bifurcation,
    Crossover,
    Extinction,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the equilibria, R0, Rc and stability regime
    Equilibria(Flags),
    /// Integrate a single trajectory (CSV: t,x,y)
    Simulate(Flags),
    /// Monte Carlo ensemble mean (CSV: t,mean_x,mean_y)
    Ensemble(Flags),
    /// Deterministic delay scan (CSV: tau,x_min,x_max,y_min,y_max)
    Bifurcation(Flags),
    /// Long-term prey/predator averages across delays (CSV: tau,mean_x,mean_y)
    Crossover(Flags),
    /// Predator extinction times across delays
    /// (CSV: tau,mean_ext_time,std_ext_time,fraction_extinct)
    Extinction(Flags),
}

impl Command {
    fn parts(&self) -> (CommandKind, &Flags) {
        match self {
            Command::Equilibria(f) => (CommandKind::Equilibria, f),
            Command::Simulate(f) => (CommandKind::Simulate, f),
            Command::Ensemble(f) => (CommandKind::Ensemble, f),
            Command::Bifurcation(f) => (CommandKind::Bifurcation, f),
            Command::Crossover(f) => (CommandKind::Crossover, f),
            Command::Extinction(f) => (CommandKind::Extinction, f),
        }
    }
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Equilibria => "equilibria",
            CommandKind::Simulate => "simulate",
            CommandKind::Ensemble => "ensemble",
            CommandKind::Bifurcation => "bifurcation",
            CommandKind::Crossover => "crossover",
            CommandKind::Extinction => "extinction",
        }
    }
}

/// Flags shared by every subcommand; each may also be set in the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config file (flat object keyed by flag name)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// deterministic, model1 or model2
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<f64>,
    #[arg(long = "K", allow_negative_numbers = true)]
    pub k: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub nu1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub nu2: Option<f64>,
    /// Initial prey density (constant history)
    #[arg(long, allow_negative_numbers = true)]
    pub x0: Option<f64>,
    /// Initial predator density (constant history)
    #[arg(long, allow_negative_numbers = true)]
    pub y0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub dt: Option<f64>,
    #[arg(long = "t-end", allow_negative_numbers = true)]
    pub t_end: Option<f64>,
    /// rk4, euler-maruyama or milstein
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long = "n-runs")]
    pub n_runs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// start:step:stop or a comma-separated list
    #[arg(long = "tau-grid", allow_hyphen_values = true)]
    pub tau_grid: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    #[arg(long = "transient-fraction", allow_negative_numbers = true)]
    pub transient_fraction: Option<f64>,
    /// CSV output path (stdout if omitted)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Deterministic,
    Model1,
    Model2,
}

impl ModelKind {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deterministic" | "dde" => Some(ModelKind::Deterministic),
            "model1" | "1" => Some(ModelKind::Model1),
            "model2" | "2" => Some(ModelKind::Model2),
            _ => None,
        }
    }

    fn noise(self) -> Option<NoiseModel> {
        match self {
            ModelKind::Deterministic => None,
            ModelKind::Model1 => Some(NoiseModel::Model1),
            ModelKind::Model2 => Some(NoiseModel::Model2),
        }
    }

    fn default_scheme(self) -> Scheme {
        self.noise().map_or(Scheme::Rk4, NoiseModel::default_scheme)
    }
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub model: ModelKind,
    pub params: ModelParams,
    pub x0: f64,
    pub y0: f64,
    pub solver: SolverConfig,
    pub n_runs: usize,
    pub seed: u64,
    pub tau_grid: Vec<f64>,
    pub threshold: f64,
    pub transient_fraction: f64,
    pub output: Option<PathBuf>,
}

/// Keys accepted in the config file.
const KEYS: &[&str] = &[
    "model",
    "r",
    "K",
    "beta",
    "sigma",
    "a",
    "tau",
    "nu1",
    "nu2",
    "x0",
    "y0",
    "dt",
    "t-end",
    "scheme",
    "n-runs",
    "seed",
    "tau-grid",
    "threshold",
    "transient-fraction",
    "output",
];

fn parse_grid(key: &str, text: &str) -> CliResult<Vec<f64>> {
    let num = |s: &str| -> CliResult<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| CliError::config(key, format!("`{s}` is not a number")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.len() {
        1 => text.split(',').map(num).collect(),
        3 => {
            let (start, step, stop) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0) || !(stop >= start) {
                return Err(CliError::config(
                    key,
                    "range needs step > 0 and stop >= start",
                ));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            // round to suppress accumulated representation error
            Ok((0..=n)
                .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        _ => Err(CliError::config(
            key,
            "expected start:step:stop or a comma-separated list",
        )),
    }
}

/// Values read from a config file, keyed by flag name.
fn read_config_file(path: &Path) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::config(
            "config",
            "top level must be a JSON object",
        ));
    };
    if let Some(unknown) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(CliError::config(unknown, "unknown key"));
    }
    Ok(map)
}

fn json_f64(map: &Map<String, Value>, key: &str) -> CliResult<Option<f64>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| CliError::config(key, format!("expected a number, got {v}"))),
    }
}

fn json_u64(map: &Map<String, Value>, key: &str) -> CliResult<Option<u64>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.as_u64().map(Some).ok_or_else(|| {
            CliError::config(key, format!("expected a nonnegative integer, got {v}"))
        }),
    }
}

fn json_str(map: &Map<String, Value>, key: &str) -> CliResult<Option<String>> {
    match map.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(v) => Err(CliError::config(key, format!("expected a string, got {v}"))),
    }
}

fn json_grid(map: &Map<String, Value>, key: &str) -> CliResult<Option<Vec<f64>>> {
    match map.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => parse_grid(key, s).map(Some),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| CliError::config(key, format!("expected numbers, got {v}")))
            })
            .collect::<CliResult<Vec<f64>>>()
            .map(Some),
        Some(v) => Err(CliError::config(
            key,
            format!("expected a list or range string, got {v}"),
        )),
    }
}

fn default_grid(command: CommandKind) -> Vec<f64> {
    let range = |start: f64, step: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect()
    };
    match command {
        CommandKind::Bifurcation => range(0.30, 0.02, 16),
        CommandKind::Crossover => range(0.4, 0.1, 9),
        _ => vec![0.1, 0.3, 0.6, 0.9],
    }
}

fn default_model(command: CommandKind) -> ModelKind {
    match command {
        CommandKind::Ensemble | CommandKind::Crossover => ModelKind::Model1,
        CommandKind::Extinction => ModelKind::Model2,
        _ => ModelKind::Deterministic,
    }
}

impl RunConfig {
    /// Resolves defaults, then the config file, then flags.
    pub fn resolve(command: CommandKind, flags: &Flags) -> CliResult<Self> {
        let file = match &flags.config {
            Some(path) => read_config_file(path)?,
            None => Map::new(),
        };
        let pick_f64 = |flag: Option<f64>, key: &str| -> CliResult<Option<f64>> {
            Ok(match flag {
                Some(v) => Some(v),
                None => json_f64(&file, key)?,
            })
        };

        let model = match flags.model.clone().or(json_str(&file, "model")?) {
            Some(s) => ModelKind::parse(&s).ok_or_else(|| {
                CliError::config(
                    "model",
                    format!("unknown model `{s}` (deterministic, model1, model2)"),
                )
            })?,
            None => default_model(command),
        };
        let base = match (command, model) {
            (CommandKind::Equilibria | CommandKind::Bifurcation, _)
            | (_, ModelKind::Deterministic) => ModelParams::hopf_set(),
            _ => ModelParams::stochastic_set(),
        };
        let params = ModelParams {
            r: pick_f64(flags.r, "r")?.unwrap_or(base.r),
            k: pick_f64(flags.k, "K")?.unwrap_or(base.k),
            beta: pick_f64(flags.beta, "beta")?.unwrap_or(base.beta),
            sigma: pick_f64(flags.sigma, "sigma")?.unwrap_or(base.sigma),
            a: pick_f64(flags.a, "a")?.unwrap_or(base.a),
            tau: pick_f64(flags.tau, "tau")?.unwrap_or(0.5),
            nu1: pick_f64(flags.nu1, "nu1")?.unwrap_or(base.nu1),
            nu2: pick_f64(flags.nu2, "nu2")?.unwrap_or(base.nu2),
        };
        params.validate()?;

        let x0 = pick_f64(flags.x0, "x0")?.unwrap_or(3.0);
        let y0 = pick_f64(flags.y0, "y0")?.unwrap_or(1.0);
        for (key, v) in [("x0", x0), ("y0", y0)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::config(
                    key,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }

        let scheme = match flags.scheme.clone().or(json_str(&file, "scheme")?) {
            Some(s) => s
                .parse::<Scheme>()
                .map_err(|e| CliError::config("scheme", e))?,
            None => model.default_scheme(),
        };
        match (model, scheme) {
            (ModelKind::Deterministic, Scheme::Rk4) => {}
            (ModelKind::Deterministic, _) if command != CommandKind::Bifurcation => {
                return Err(CliError::config(
                    "scheme",
                    "the deterministic model uses rk4",
                ))
            }
            (ModelKind::Model1 | ModelKind::Model2, Scheme::Rk4) => {
                return Err(CliError::config(
                    "scheme",
                    "stochastic models use euler-maruyama or milstein",
                ))
            }
            _ => {}
        }
        let default_t_end = match command {
            CommandKind::Bifurcation => 3000.0,
            _ => ensemble::DEFAULT_T_END,
        };
        let solver = SolverConfig::new(
            pick_f64(flags.dt, "dt")?.unwrap_or(crate::dde::DEFAULT_DT),
            pick_f64(flags.t_end, "t-end")?.unwrap_or(default_t_end),
            if command == CommandKind::Bifurcation {
                Scheme::Rk4
            } else {
                scheme
            },
        );
        solver.validate()?;

        let n_runs = match flags.n_runs {
            Some(v) => Some(v),
            None => json_u64(&file, "n-runs")?,
        }
        .unwrap_or(DEFAULT_N_RUNS as u64);
        if n_runs == 0 {
            return Err(CliError::config("n-runs", "must be at least 1"));
        }
        let seed = match flags.seed {
            Some(v) => Some(v),
            None => json_u64(&file, "seed")?,
        }
        .unwrap_or(DEFAULT_SEED);

        let tau_grid = match &flags.tau_grid {
            Some(s) => parse_grid("tau-grid", s)?,
            None => json_grid(&file, "tau-grid")?.unwrap_or_else(|| default_grid(command)),
        };
        if tau_grid.is_empty() || tau_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(CliError::config(
                "tau-grid",
                "delays must be finite and >= 0",
            ));
        }
        if tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CliError::config(
                "tau-grid",
                "delays must be strictly increasing",
            ));
        }

        let threshold =
            pick_f64(flags.threshold, "threshold")?.unwrap_or(DEFAULT_EXTINCTION_THRESHOLD);
        if !(threshold.is_finite() && threshold >= 0.0) {
            return Err(CliError::config(
                "threshold",
                format!("must be finite and >= 0, got {threshold}"),
            ));
        }
        let transient_fraction = pick_f64(flags.transient_fraction, "transient-fraction")?
            .unwrap_or(DEFAULT_TRANSIENT_FRACTION);
        if !(0.0..1.0).contains(&transient_fraction) {
            return Err(CliError::config(
                "transient-fraction",
                format!("must lie in [0, 1), got {transient_fraction}"),
            ));
        }
        let output = match &flags.output {
            Some(p) => Some(p.clone()),
            None => json_str(&file, "output")?.map(PathBuf::from),
        };

        let cfg = RunConfig {
            command,
            model,
            params,
            x0,
            y0,
            solver,
            n_runs: n_runs as usize,
            seed,
            tau_grid,
            threshold,
            transient_fraction,
            output,
        };
        // every delay this command will integrate must admit the step
        for tau in cfg.delays() {
            solver.snapped_dt(tau)?;
        }
        Ok(cfg)
    }

    fn uses_grid(&self) -> bool {
        matches!(
            self.command,
            CommandKind::Bifurcation | CommandKind::Crossover | CommandKind::Extinction
        )
    }

    fn delays(&self) -> Vec<f64> {
        match self.command {
            CommandKind::Equilibria => Vec::new(),
            _ if self.uses_grid() => self.tau_grid.clone(),
            _ => vec![self.params.tau],
        }
    }

    pub fn history(&self) -> HistoryFunction {
        HistoryFunction::constant(self.x0, self.y0)
    }

    fn stochastic_model(&self) -> CliResult<StochasticModel> {
        let kind = self.model.noise().ok_or_else(|| {
            CliError::config(
                "model",
                format!("`{}` needs a stochastic model", self.command.name()),
            )
        })?;
        Ok(StochasticModel::new(kind, self.params)?)
    }

    fn metadata(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("version".into(), json!(crate::VERSION));
        m.insert("command".into(), json!(self.command.name()));
        m.insert("model".into(), json!(self.model));
        m.insert("params".into(), json!(self.params));
        m.insert("x0".into(), json!(self.x0));
        m.insert("y0".into(), json!(self.y0));
        m.insert("dt_requested".into(), json!(self.solver.dt));
        let snapped: Vec<Value> = self
            .delays()
            .iter()
            .map(|&tau| json!({"tau": tau, "dt": self.solver.snapped_dt(tau).ok()}))
            .collect();
        m.insert("dt_snapped".into(), Value::Array(snapped));
        m.insert("t_end".into(), json!(self.solver.t_end));
        m.insert("scheme".into(), json!(self.solver.scheme.name()));
        if let Some(kind) = self.model.noise() {
            let model = StochasticModel {
                kind,
                params: self.params,
            };
            m.insert(
                "reduced_order".into(),
                json!(is_reduced_order(&model, self.solver.scheme)),
            );
            m.insert("seed".into(), json!(self.seed));
            m.insert("n_runs".into(), json!(self.n_runs));
        }
        if self.uses_grid() {
            m.insert("tau_grid".into(), json!(self.tau_grid));
        }
        m.insert("threshold".into(), json!(self.threshold));
        m.insert("transient_fraction".into(), json!(self.transient_fraction));
        m
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

fn write_csv(out: &mut dyn Write, header: &[&str], rows: &[Vec<f64>]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format_f64(*v)))?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

/// Path of the metadata sidecar for a CSV output.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn emit(
    cfg: &RunConfig,
    header: &[&str],
    rows: &[Vec<f64>],
    results: BTreeMap<&str, Value>,
) -> CliResult<()> {
    let mut meta = cfg.metadata();
    for (k, v) in results {
        meta.insert(k.to_string(), v);
    }
    let meta_text =
        serde_json::to_string_pretty(&Value::Object(meta)).expect("metadata serializes");
    match &cfg.output {
        Some(path) => {
            let io_err = |p: &Path| {
                let p = p.display().to_string();
                move |source| CliError::Io { path: p, source }
            };
            let mut file = fs::File::create(path).map_err(io_err(path))?;
            write_csv(&mut file, header, rows)?;
            let side = sidecar_path(path);
            fs::write(&side, meta_text + "\n").map_err(io_err(&side))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_csv(&mut lock, header, rows)?;
            eprintln!("{meta_text}");
        }
    }
    Ok(())
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

pub fn execute(cfg: &RunConfig) -> CliResult<()> {
    match cfg.command {
        CommandKind::Equilibria => {
            let eq = compute_equilibria(&cfg.params)?;
            let mut out = String::new();
            match eq.eps_plus {
                Some(p) => {
                    out += &format!("x*={:.4}\ny*={:.4}\n", p.x, p.y);
                }
                None => out += "x*=none\ny*=none\n",
            }
            out += &format!("R0={:.4}\nRc={:.4}\nregime={:?}\n", eq.r0, eq.rc, eq.regime);
            print!("{out}");
            Ok(())
        }
        CommandKind::Simulate => {
            let psi = cfg.history();
            let traj = match cfg.model.noise() {
                None => integrate_dde(&PredatorPreyField::new(cfg.params)?, &psi, &cfg.solver)?,
                Some(_) => {
                    let model = cfg.stochastic_model()?;
                    integrate_sdde(&model, &psi, &cfg.solver, &mut seed_stream(cfg.seed, 0))?
                }
            };
            let rows: Vec<Vec<f64>> = traj
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| vec![traj.time(i), s.x, s.y])
                .collect();
            let mut results = BTreeMap::new();
            results.insert("stream_index", json!(0));
            emit(cfg, &["t", "x", "y"], &rows, results)
        }
        CommandKind::Ensemble => {
            let model = cfg.stochastic_model()?;
            let ens = run_ensemble_with_threshold(
                &model,
                &cfg.history(),
                &cfg.solver,
                cfg.n_runs,
                cfg.seed,
                cfg.threshold,
            )?;
            let traj = &ens.mean_trajectory;
            let rows: Vec<Vec<f64>> = traj
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| vec![traj.time(i), s.x, s.y])
                .collect();
            let mut results = BTreeMap::new();
            results.insert("fraction_extinct", json!(ens.fraction_extinct()));
            results.insert(
                "extinction_times",
                Value::Array(ens.extinction_times.iter().map(|t| opt(*t)).collect()),
            );
            emit(cfg, &["t", "mean_x", "mean_y"], &rows, results)
        }
        CommandKind::Bifurcation => {
            let diagram = bifurcation_scan(
                &cfg.params,
                &cfg.history(),
                &cfg.tau_grid,
                &cfg.solver,
                cfg.transient_fraction,
            )?;
            let rows: Vec<Vec<f64>> = diagram
                .rows
                .iter()
                .map(|r| {
                    let e = r.extrema;
                    vec![r.tau, e.x_min, e.x_max, e.y_min, e.y_max]
                })
                .collect();
            let mut results = BTreeMap::new();
            results.insert("tau_star", opt(diagram.tau_star));
            results.insert(
                "amplitude_threshold",
                json!(ensemble::HOPF_AMPLITUDE_THRESHOLD),
            );
            emit(
                cfg,
                &["tau", "x_min", "x_max", "y_min", "y_max"],
                &rows,
                results,
            )
        }
        CommandKind::Crossover => {
            let model = cfg.stochastic_model()?;
            let res = find_crossover(
                &model,
                &cfg.history(),
                &cfg.tau_grid,
                &cfg.solver,
                cfg.n_runs,
                cfg.transient_fraction,
                cfg.seed,
            )?;
            let rows: Vec<Vec<f64>> = res
                .rows
                .iter()
                .map(|r| vec![r.tau, r.mean_x, r.mean_y])
                .collect();
            let mut results = BTreeMap::new();
            results.insert("tau_star_star", opt(res.tau_star_star));
            emit(cfg, &["tau", "mean_x", "mean_y"], &rows, results)
        }
        CommandKind::Extinction => {
            let model = cfg.stochastic_model()?;
            let curve = extinction_curve(
                &model,
                &cfg.history(),
                &cfg.tau_grid,
                &cfg.solver,
                cfg.n_runs,
                cfg.threshold,
                cfg.seed,
            )?;
            let rows: Vec<Vec<f64>> = curve
                .rows
                .iter()
                .map(|r| vec![r.tau, r.mean_time, r.std_time, r.fraction_extinct])
                .collect();
            emit(
                cfg,
                &["tau", "mean_ext_time", "std_ext_time", "fraction_extinct"],
                &rows,
                BTreeMap::new(),
            )
        }
    }
}

/// Worker count from `DELAYDYN_THREADS` (unset or 0 = automatic).
pub fn thread_count() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(s) if s.trim().is_empty() => Ok(0),
        Ok(s) => s.trim().parse::<usize>().map_err(|_| {
            CliError::config(
                THREADS_ENV,
                format!("expected a nonnegative integer, got `{s}`"),
            )
        }),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    let (kind, flags) = cli.command.parts();
    let outcome = RunConfig::resolve(kind, flags).and_then(|cfg| {
        let threads = thread_count()?;
        ensemble::with_threads(threads, || execute(&cfg))
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> Flags {
        Flags::default()
    }

    fn config_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn flags_override_file() {
        let file = config_file(r#"{"r": 0.8, "K": 6}"#);
        let f = Flags {
            config: Some(file.path().to_path_buf()),
            r: Some(0.9),
            ..flags()
        };
        let cfg = RunConfig::resolve(CommandKind::Simulate, &f).unwrap();
        assert_eq!(cfg.params.r, 0.9);
        assert_eq!(cfg.params.k, 6.0);
    }

    #[test]
    fn flags_alone_suffice() {
        let f = Flags {
            model: Some("model1".into()),
            r: Some(0.8),
            k: Some(5.0),
            beta: Some(0.5),
            sigma: Some(1.0 / 3.0),
            a: Some(0.3),
            tau: Some(0.5),
            nu1: Some(0.1),
            nu2: Some(0.1),
            dt: Some(0.01),
            t_end: Some(10.0),
            ..flags()
        };
        let cfg = RunConfig::resolve(CommandKind::Simulate, &f).unwrap();
        assert_eq!(cfg.model, ModelKind::Model1);
        assert_eq!(cfg.solver.scheme, Scheme::Milstein);
    }

    fn key_of(err: CliError) -> String {
        match err {
            CliError::Config { key, .. } => key,
            CliError::Core(Error::Validation { field, .. }) => field,
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn invalid_value_names_key() {
        let f = Flags {
            k: Some(-1.0),
            ..flags()
        };
        assert_eq!(
            key_of(RunConfig::resolve(CommandKind::Simulate, &f).unwrap_err()),
            "K"
        );
    }

    #[test]
    fn unknown_and_mistyped_keys_named() {
        let file = config_file(r#"{"rr": 1.0}"#);
        let f = Flags {
            config: Some(file.path().to_path_buf()),
            ..flags()
        };
        assert_eq!(
            key_of(RunConfig::resolve(CommandKind::Simulate, &f).unwrap_err()),
            "rr"
        );

        let file = config_file(r#"{"beta": "fast"}"#);
        let f = Flags {
            config: Some(file.path().to_path_buf()),
            ..flags()
        };
        assert_eq!(
            key_of(RunConfig::resolve(CommandKind::Simulate, &f).unwrap_err()),
            "beta"
        );

        let file = config_file(r#"{"n-runs": 2.5}"#);
        let f = Flags {
            config: Some(file.path().to_path_buf()),
            ..flags()
        };
        assert_eq!(
            key_of(RunConfig::resolve(CommandKind::Ensemble, &f).unwrap_err()),
            "n-runs"
        );
    }

    #[test]
    fn step_larger_than_delay_rejected() {
        let f = Flags {
            tau: Some(0.005),
            ..flags()
        };
        assert_eq!(
            key_of(RunConfig::resolve(CommandKind::Simulate, &f).unwrap_err()),
            "dt"
        );
    }

    #[test]
    fn scheme_must_match_model() {
        let f = Flags {
            model: Some("model2".into()),
            scheme: Some("rk4".into()),
            ..flags()
        };
        assert_eq!(
            key_of(RunConfig::resolve(CommandKind::Simulate, &f).unwrap_err()),
            "scheme"
        );
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("tau-grid", "0.3:0.02:0.6").unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g[0], 0.3);
        assert_eq!(g[15], 0.6);
        assert_eq!(g[1], 0.32);
        assert_eq!(
            parse_grid("tau-grid", "0.1,0.3, 0.9").unwrap(),
            vec![0.1, 0.3, 0.9]
        );
        assert!(parse_grid("tau-grid", "0.1:x:1").is_err());
        let file = config_file(r#"{"tau-grid": [0.2, 0.1]}"#);
        let f = Flags {
            config: Some(file.path().to_path_buf()),
            ..flags()
        };
        assert_eq!(
            key_of(RunConfig::resolve(CommandKind::Crossover, &f).unwrap_err()),
            "tau-grid"
        );
    }

    #[test]
    fn defaults_follow_command() {
        let cfg = RunConfig::resolve(CommandKind::Extinction, &flags()).unwrap();
        assert_eq!(cfg.model, ModelKind::Model2);
        assert_eq!(cfg.solver.scheme, Scheme::EulerMaruyama);
        assert_eq!(cfg.params.sigma, 1.0 / 3.0);
        assert_eq!(cfg.threshold, 1e-3);
        let cfg = RunConfig::resolve(CommandKind::Bifurcation, &flags()).unwrap();
        assert_eq!(cfg.params.sigma, 0.01);
        assert_eq!(cfg.solver.t_end, 3000.0);
        assert_eq!(cfg.tau_grid.len(), 16);
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE, -0.5] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
