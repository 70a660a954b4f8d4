//! Experiment runner behind the `distsub` binary.
//!
//! A TOML [`ExperimentConfig`] describes one run. [`run_experiment`] writes
//! `trace.csv` and `summary.json` into an output directory, and
//! [`run_sweep`] repeats the run over a list of values of one parameter and
//! writes `sweep.csv`. Randomness only enters through the schedule and the
//! initial estimates, both derived from the config seed, so the same config
//! and seed always produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{run, theorem1_bound, theorem1_constants, theorem1_persistent, verify_theorem1};
use crate::error::{Error, Result};
use crate::network::{
    make_schedule, validate_assumption2, validate_schedule_weights, ScheduleSpec, WeightSchedule,
};
use crate::objectives::{ObjectiveSpec, ObjectiveSuite};
use crate::quantized::{
    floor_units, grid_from_reals, quant_constants, run_quantized, theorem2_bound, theorem2_persistent,
    transient, verify_theorem2, QuantizedTrace, QuantizerSpec, Resolution,
};
use crate::report::{VerificationReport, Violation};
use crate::vecops::mean;

/// Stream index reserved for drawing initial estimates. Schedules use the
/// step index as their stream, so this never collides in practice.
const INITIAL_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Simulate and export, without checking any inequality.
    #[default]
    Run,
    /// Simulate and check every bound; violations make the exit status nonzero.
    Verify,
    /// Verify once per value of the `[sweep]` axis.
    Sweep,
}

/// Initial estimates `x_i(0)`.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    #[default]
    Zero,
    /// Components drawn uniformly from `[-radius, radius]` with the config
    /// seed. Without a radius, `αL/√m` is used, which keeps every
    /// `‖x_i(0)‖ <= αL`. Quantized runs truncate the draw toward zero onto
    /// the grid.
    Uniform {
        #[serde(default)]
        radius: Option<f64>,
    },
    /// One row of `m` reals per agent. Quantized runs need grid values.
    Explicit { values: Vec<Vec<f64>> },
    /// One row of `m` integer grid units per agent (quantized runs only).
    Grid { units: Vec<Vec<i64>> },
}

/// A sweep value as written in TOML: an integer, a float, or a string such as `"inf"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Int(v) => write!(f, "{v}"),
            SweepValue::Float(v) => write!(f, "{v}"),
            SweepValue::Str(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: String,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub k_max: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "unquantized")]
    pub quantizer: Resolution,
    pub schedule: ScheduleSpec,
    pub objectives: Vec<ObjectiveSpec>,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

fn unquantized() -> Resolution {
    Resolution::Infinite
}

/// Wraps an error so its message starts with the offending config field.
fn at(field: impl Into<String>) -> impl FnOnce(Error) -> Error {
    let field = field.into();
    move |e| {
        let detail = match e {
            Error::InvalidInput(m) | Error::Unsupported(m) | Error::Io(m) => m,
            other => other.to_string(),
        };
        Error::InvalidInput(format!("{field}: {detail}"))
    }
}

fn field_error(field: &str, msg: impl fmt::Display) -> Error {
    Error::InvalidInput(format!("{field}: {msg}"))
}

fn check_shape<T>(field: &str, rows: &[Vec<T>], n: usize, m: usize) -> Result<()> {
    if rows.len() != n {
        return Err(field_error(field, format!("expected {n} rows (one per agent), got {}", rows.len())));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
        return Err(field_error(field, format!("row {} has {} entries, expected m = {m}", i + 1, r.len())));
    }
    Ok(())
}

/// Starting point of a run, in real or grid form.
#[derive(Debug, Clone, PartialEq)]
enum Start {
    Real(Vec<Vec<f64>>),
    Grid(Vec<Vec<i64>>, u64),
}

/// Validated inputs of one run.
struct Prepared {
    schedule: WeightSchedule,
    suite: ObjectiveSuite,
    start: Start,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks every field without running anything.
    pub fn validate(&self) -> Result<()> {
        self.prepare_inputs().map(|_| ())
    }

    fn build_suite(&self) -> Result<ObjectiveSuite> {
        if self.objectives.len() != self.n {
            return Err(field_error(
                "objectives",
                format!("expected {} entries (one per agent), got {}", self.n, self.objectives.len()),
            ));
        }
        let objs = self
            .objectives
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let name = format!("objectives[{}]", i + 1);
                let obj = spec.build().map_err(at(name.clone()))?;
                if obj.dim() != self.m {
                    return Err(field_error(&name, format!("dimension {} differs from m = {}", obj.dim(), self.m)));
                }
                Ok(obj)
            })
            .collect::<Result<Vec<_>>>()?;
        ObjectiveSuite::new(objs).map_err(at("objectives"))
    }

    fn prepare_inputs(&self) -> Result<Prepared> {
        if self.n == 0 {
            return Err(field_error("n", "must be a positive integer"));
        }
        if self.m == 0 {
            return Err(field_error("m", "must be a positive integer"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(field_error("alpha", format!("must be a positive finite number, got {}", self.alpha)));
        }
        if self.k_max == 0 {
            return Err(field_error("k_max", "must be a positive integer"));
        }
        if self.mode == Mode::Sweep && self.sweep.is_none() {
            return Err(field_error("sweep", "sweep mode needs a [sweep] section or --axis/--values"));
        }
        if let Some(sw) = &self.sweep {
            sw.axis.parse::<SweepAxis>().map_err(at("sweep.axis"))?;
            if sw.values.is_empty() {
                return Err(field_error("sweep.values", "must list at least one value"));
            }
        }
        let suite = self.build_suite()?;
        let schedule = make_schedule(&self.schedule, self.n, self.seed).map_err(at("schedule"))?;
        let start = self.initial_estimates(&suite)?;
        Ok(Prepared { schedule, suite, start })
    }

    /// Validation plus the weight and connectivity assumptions over the run
    /// horizon.
    fn prepare(&self) -> Result<Prepared> {
        let p = self.prepare_inputs()?;
        let horizon = self.k_max.max(p.schedule.window());
        if let Some((k, report)) = validate_schedule_weights(&p.schedule, horizon).into_iter().next() {
            let list: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            return Err(field_error(
                "schedule",
                format!("weight assumption fails for A({k}): {}", list.join("; ")),
            ));
        }
        let conn = validate_assumption2(&p.schedule, horizon).map_err(at("schedule"))?;
        if let Some(w) = conn.failing_windows.first() {
            return Err(field_error(
                "schedule",
                format!("window {w} of length B = {} is not strongly connected", p.schedule.window()),
            ));
        }
        Ok(p)
    }

    fn initial_estimates(&self, suite: &ObjectiveSuite) -> Result<Start> {
        let (n, m) = (self.n, self.m);
        let q = match self.quantizer {
            Resolution::Finite(q) => Some(q),
            Resolution::Infinite => None,
        };
        let real = match &self.initial {
            InitialSpec::Zero => vec![vec![0.0; m]; n],
            InitialSpec::Uniform { radius } => {
                let r = match radius {
                    Some(r) if r.is_finite() && *r >= 0.0 => *r,
                    Some(r) => return Err(field_error("initial.radius", format!("must be finite and >= 0, got {r}"))),
                    None => {
                        let l = suite.subgradient_bound();
                        if !l.is_finite() {
                            return Err(field_error(
                                "initial.radius",
                                "required when an objective has unbounded subgradients",
                            ));
                        }
                        self.alpha * l / (m as f64).sqrt()
                    }
                };
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(INITIAL_STREAM);
                let draw: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..m).map(|_| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 }).collect())
                    .collect();
                if let Some(q) = q {
                    let units = draw
                        .iter()
                        .map(|row| row.iter().map(|v| truncate_units(*v, q)).collect::<Result<Vec<_>>>())
                        .collect::<Result<Vec<_>>>()
                        .map_err(at("initial"))?;
                    return Ok(Start::Grid(units, q));
                }
                draw
            }
            InitialSpec::Explicit { values } => {
                check_shape("initial.values", values, n, m)?;
                if values.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(field_error("initial.values", "entries must be finite"));
                }
                values.clone()
            }
            InitialSpec::Grid { units } => {
                check_shape("initial.units", units, n, m)?;
                let q = q.ok_or_else(|| field_error("initial.units", "grid units need a finite quantizer"))?;
                return Ok(Start::Grid(units.clone(), q));
            }
        };
        match q {
            Some(q) => Ok(Start::Grid(grid_from_reals(&real, q).map_err(at("initial.values"))?, q)),
            None => Ok(Start::Real(real)),
        }
    }
}

/// Grid units of `v` rounded toward zero, so `|u/Q| <= |v|`.
fn truncate_units(v: f64, q: u64) -> Result<i64> {
    let u = floor_units(v.abs(), q)?;
    Ok(if v < 0.0 { -u } else { u })
}

/// Constants and reference quantities behind the bound column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundInfo {
    pub window: usize,
    pub eta: f64,
    /// `L`; serialized as `null` when infinite.
    pub subgradient_bound: Option<f64>,
    pub optimal_value: Option<f64>,
    /// Distance from the mean initial estimate to the optimal set.
    pub dist0: Option<f64>,
    pub beta: f64,
    pub c1: f64,
    pub c: f64,
    /// Quantized constants at the configured resolution; `None` when `αL` is
    /// zero or infinite.
    pub c1_tilde: Option<f64>,
    pub c_tilde: Option<f64>,
    pub persistent_bound: Option<f64>,
}

/// Everything a run produces, kept in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub n: usize,
    pub m: usize,
    pub k_max: usize,
    /// `estimates[k][i]` for `0 <= k <= k_max`.
    pub estimates: Vec<Vec<Vec<f64>>>,
    /// `averaged_values[k-1][i] = f(x̂_i(k))`.
    pub averaged_values: Vec<Vec<f64>>,
    /// `bounds[k-1]`, the gap bound at `k`, when an optimum oracle exists.
    pub bounds: Option<Vec<f64>>,
    /// `max_errors[k-1][i]`, the largest component of `e_i(k)` (quantized runs).
    pub max_errors: Option<Vec<Vec<f64>>>,
    /// `V(k) = Σ_i ‖x_i(k) - x̄(k)‖²`.
    pub disagreement: Vec<f64>,
    pub info: BoundInfo,
    /// Present in verify mode.
    pub report: Option<VerificationReport>,
}

fn disagreement(x: &[Vec<f64>]) -> f64 {
    let c = mean(x);
    x.iter()
        .flat_map(|xi| xi.iter().zip(&c).map(|(v, ci)| (v - ci) * (v - ci)))
        .fold(0.0, |acc, v| acc + v)
}

/// Estimates, averaged values and largest error components of a quantized run.
type QuantizedSeries = (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>, Vec<Vec<f64>>);

fn quantized_series(trace: &QuantizedTrace, suite: &ObjectiveSuite) -> Result<QuantizedSeries> {
    let (n, k_max) = (trace.n(), trace.k_max());
    let estimates = (0..=k_max).map(|k| (0..n).map(|i| trace.value(k, i)).collect()).collect();
    let mut values = Vec::with_capacity(k_max);
    let mut errors = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        values.push(
            (0..n)
                .map(|i| suite.eval_sum(&trace.running_average(i, k)?))
                .collect::<Result<Vec<_>>>()?,
        );
        errors.push(
            (0..n)
                .map(|i| trace.error(k, i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        );
    }
    Ok((estimates, values, errors))
}

/// Runs the configured method, checking every bound when `verify` is set.
pub fn simulate(config: &ExperimentConfig, verify: bool) -> Result<Simulation> {
    let Prepared { schedule, suite, start } = config.prepare()?;
    let (n, m, alpha, k_max) = (config.n, config.m, config.alpha, config.k_max);
    let (window, eta) = (schedule.window(), schedule.eta());
    let l = suite.subgradient_bound();
    let t1 = theorem1_constants(n, window, eta)?;
    let qc = if l.is_finite() && alpha * l > 0.0 {
        Some(quant_constants(n, window, eta, alpha, l, m, config.quantizer)?)
    } else {
        None
    };
    let has_bound = !suite.is_bound_exempt() && suite.optimum().is_some();
    let optimal_value = if has_bound { Some(suite.optimal_value()?) } else { None };

    let (estimates, averaged_values, max_errors, report, persistent) = match &start {
        Start::Real(x0) => {
            let (trace, report) = if verify {
                let out = verify_theorem1(&schedule, &suite, x0, alpha, k_max)?;
                (out.trace, Some(out.report))
            } else {
                (run(&schedule, &suite, x0, alpha, k_max)?, None)
            };
            let persistent = has_bound.then(|| theorem1_persistent(&t1, n, alpha, l));
            (trace.estimates, trace.averaged_values, None, report, persistent)
        }
        Start::Grid(units, q) => {
            let spec = QuantizerSpec::new(*q, m)?;
            let (trace, report) = if verify {
                let out = verify_theorem2(&schedule, &suite, units, alpha, &spec, k_max)?;
                (out.trace, Some(out.report))
            } else {
                (run_quantized(&schedule, &suite, units, alpha, &spec, k_max)?, None)
            };
            let (estimates, values, errors) = quantized_series(&trace, &suite)?;
            let persistent = match &qc {
                Some(c) if has_bound => Some(theorem2_persistent(c, n, alpha, l)),
                None if has_bound => Some(0.0),
                _ => None,
            };
            (estimates, values, Some(errors), report, persistent)
        }
    };

    let dist0 = if has_bound { Some(suite.dist_to_optimum(&mean(&estimates[0]))?) } else { None };
    let bounds = match dist0 {
        Some(d) => Some(
            (1..=k_max)
                .map(|k| match (&start, &qc) {
                    (Start::Real(_), _) => theorem1_bound(&t1, n, alpha, l, d, k),
                    (Start::Grid(..), Some(c)) => theorem2_bound(c, n, alpha, l, d, k),
                    (Start::Grid(..), None) => transient(n, alpha, d, k),
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let disagreement = estimates.iter().map(|x| disagreement(x)).collect();
    Ok(Simulation {
        n,
        m,
        k_max,
        estimates,
        averaged_values,
        bounds,
        max_errors,
        disagreement,
        info: BoundInfo {
            window,
            eta,
            subgradient_bound: l.is_finite().then_some(l),
            optimal_value,
            dist0,
            beta: t1.beta,
            c1: t1.c1,
            c: t1.c,
            c1_tilde: qc.as_ref().map(|c| c.c1_tilde),
            c_tilde: qc.as_ref().map(|c| c.c_tilde),
            persistent_bound: persistent,
        },
        report,
    })
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the trace in `(k, agent)` order with header
/// `k,agent,x1..xm,f_avg,bound,disagreement,max_error`. Agents are 1-based;
/// fields that do not apply are left empty.
pub fn write_trace_csv<W: Write>(sim: &Simulation, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let mut header = vec!["k".to_string(), "agent".to_string()];
    header.extend((1..=sim.m).map(|c| format!("x{c}")));
    header.extend(["f_avg", "bound", "disagreement", "max_error"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    let mut line = String::new();
    for k in 0..=sim.k_max {
        for i in 0..sim.n {
            line.clear();
            line.push_str(&format!("{k},{}", i + 1));
            for v in &sim.estimates[k][i] {
                line.push(',');
                line.push_str(&num(*v));
            }
            let f_avg = (k > 0).then(|| sim.averaged_values[k - 1][i]);
            let bound = sim.bounds.as_ref().filter(|_| k > 0).map(|b| b[k - 1]);
            let err = sim.max_errors.as_ref().filter(|_| k > 0).map(|e| e[k - 1][i]);
            for v in [f_avg, bound, Some(sim.disagreement[k]), err] {
                line.push(',');
                if let Some(v) = v {
                    line.push_str(&num(v));
                }
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mode: Mode,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub quantizer: Resolution,
    pub k_max: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub info: BoundInfo,
    /// Gap bound at `k_max`.
    pub bound: Option<f64>,
    /// `f(x̂_i(k_max))` per agent.
    pub final_values: Vec<f64>,
    /// `f(x̂_i(k_max)) - f*` per agent.
    pub final_gaps: Option<Vec<f64>>,
    pub max_final_gap: Option<f64>,
    pub final_disagreement: f64,
    pub checks: Option<usize>,
    pub violations: Option<usize>,
    pub violations_by_check: BTreeMap<String, usize>,
    /// Up to ten violations, in the order they were found.
    pub first_violations: Vec<Violation>,
}

impl Summary {
    pub fn from_simulation(config: &ExperimentConfig, mode: Mode, sim: &Simulation) -> Self {
        let final_values = sim.averaged_values[sim.k_max - 1].clone();
        let final_gaps = sim
            .info
            .optimal_value
            .map(|f| final_values.iter().map(|v| v - f).collect::<Vec<_>>());
        let max_final_gap = final_gaps
            .as_ref()
            .map(|g| g.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let mut by_check = BTreeMap::new();
        if let Some(r) = &sim.report {
            for v in &r.violations {
                *by_check.entry(v.check.to_string()).or_insert(0) += 1;
            }
        }
        Summary {
            mode,
            n: config.n,
            m: config.m,
            alpha: config.alpha,
            quantizer: config.quantizer,
            k_max: config.k_max,
            seed: config.seed,
            info: sim.info.clone(),
            bound: sim.bounds.as_ref().map(|b| b[sim.k_max - 1]),
            final_values,
            final_gaps,
            max_final_gap,
            final_disagreement: sim.disagreement[sim.k_max],
            checks: sim.report.as_ref().map(|r| r.checked),
            violations: sim.report.as_ref().map(|r| r.violations.len()),
            violations_by_check: by_check,
            first_violations: sim
                .report
                .as_ref()
                .map(|r| r.violations.iter().take(10).cloned().collect())
                .unwrap_or_default(),
        }
    }

    pub fn violation_count(&self) -> usize {
        self.violations.unwrap_or(0)
    }
}

/// Runs one experiment (mode `run` or `verify`) and writes `trace.csv` and
/// `summary.json` into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    let mode = match config.mode {
        Mode::Sweep => return Err(field_error("mode", "use run_sweep for sweep mode")),
        m => m,
    };
    let sim = simulate(config, mode == Mode::Verify)?;
    let summary = Summary::from_simulation(config, mode, &sim);
    fs::create_dir_all(out_dir)?;
    write_trace_csv(&sim, fs::File::create(out_dir.join("trace.csv"))?)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(out_dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Q,
    Alpha,
    N,
    B,
    Eta,
    KMax,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Q" | "q" => Ok(SweepAxis::Q),
            "alpha" => Ok(SweepAxis::Alpha),
            "n" => Ok(SweepAxis::N),
            "B" | "b" => Ok(SweepAxis::B),
            "eta" => Ok(SweepAxis::Eta),
            "k_max" => Ok(SweepAxis::KMax),
            _ => Err(Error::invalid(format!(
                "unknown sweep axis {s:?}; expected one of Q, alpha, n, B, eta, k_max"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Q => "Q",
            SweepAxis::Alpha => "alpha",
            SweepAxis::N => "n",
            SweepAxis::B => "B",
            SweepAxis::Eta => "eta",
            SweepAxis::KMax => "k_max",
        })
    }
}

fn parse_value<T: FromStr>(axis: SweepAxis, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("sweep value {value:?} is not valid for axis {axis}")))
}

/// The config for one sweep point, in verify mode.
pub fn apply_axis(config: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    c.mode = Mode::Verify;
    c.sweep = None;
    match axis {
        SweepAxis::Q => c.quantizer = value.parse().map_err(at("sweep.values"))?,
        SweepAxis::Alpha => c.alpha = parse_value(axis, value)?,
        SweepAxis::N => {
            let n: usize = parse_value(axis, value)?;
            if !matches!(c.schedule, ScheduleSpec::Complete { .. } | ScheduleSpec::RandomConnected { .. }) {
                return Err(field_error("schedule", "a sweep over n needs a complete or random_connected schedule"));
            }
            if !matches!(c.initial, InitialSpec::Zero | InitialSpec::Uniform { .. }) {
                return Err(field_error("initial", "a sweep over n needs zero or uniform initial estimates"));
            }
            if c.objectives.is_empty() {
                return Err(field_error("objectives", "must list at least one objective"));
            }
            c.objectives = (0..n).map(|i| config.objectives[i % config.objectives.len()].clone()).collect();
            c.n = n;
        }
        SweepAxis::B => c.schedule.set_window(parse_value(axis, value)?),
        SweepAxis::Eta => c.schedule.set_eta(parse_value(axis, value)?),
        SweepAxis::KMax => c.k_max = parse_value(axis, value)?,
    }
    Ok(c)
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub c1: f64,
    pub c: f64,
    pub c1_tilde: Option<f64>,
    pub c_tilde: Option<f64>,
    pub persistent_bound: Option<f64>,
    /// Gap bound at `k_max`.
    pub bound: Option<f64>,
    /// Largest `f(x̂_i(k_max)) - f*` over agents.
    pub final_gap: Option<f64>,
    pub violations: usize,
}

/// Verifies the config once per value. Points run in parallel; rows come
/// back in the order of `values`.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(field_error("sweep.values", "must list at least one value"));
    }
    let points = values
        .iter()
        .map(|v| apply_axis(config, axis, v).map_err(at(format!("sweep {axis}={v}"))))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<Result<SweepRow>> = points
        .par_iter()
        .zip(values.par_iter())
        .map(|(c, v)| {
            let sim = simulate(c, true).map_err(at(format!("sweep {axis}={v}")))?;
            let summary = Summary::from_simulation(c, Mode::Verify, &sim);
            Ok(SweepRow {
                value: v.clone(),
                c1: sim.info.c1,
                c: sim.info.c,
                c1_tilde: sim.info.c1_tilde,
                c_tilde: sim.info.c_tilde,
                persistent_bound: sim.info.persistent_bound,
                bound: summary.bound,
                final_gap: summary.max_final_gap,
                violations: summary.violation_count(),
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Writes the sweep table; the first column is named after the axis.
pub fn write_sweep_csv<W: Write>(axis: SweepAxis, rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{axis},c1,c,c1_tilde,c_tilde,persistent_bound,bound,final_gap,violations")?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.value,
            num(r.c1),
            num(r.c),
            opt(r.c1_tilde),
            opt(r.c_tilde),
            opt(r.persistent_bound),
            opt(r.bound),
            opt(r.final_gap),
            r.violations
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the sweep described by `config.sweep` and writes `sweep.csv`.
pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SweepRow>> {
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| field_error("sweep", "missing [sweep] section"))?;
    let axis: SweepAxis = spec.axis.parse().map_err(at("sweep.axis"))?;
    let values: Vec<String> = spec.values.iter().map(|v| v.to_string()).collect();
    let rows = sweep(config, axis, &values)?;
    fs::create_dir_all(out_dir)?;
    write_sweep_csv(axis, &rows, fs::File::create(out_dir.join("sweep.csv"))?)?;
    Ok(rows)
}

/// Total violations of whatever `config.mode` asks for, after writing its artifacts.
pub fn execute(config: &ExperimentConfig, out_dir: &Path) -> Result<usize> {
    match config.mode {
        Mode::Sweep => Ok(run_sweep(config, out_dir)?.iter().map(|r| r.violations).sum()),
        _ => Ok(run_experiment(config, out_dir)?.violation_count()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::theorem1_constants;

    const TWO_AGENTS: &str = r#"
n = 2
m = 1
alpha = 0.1
k_max = 100
seed = 1
mode = "verify"

[schedule]
kind = "complete"

[[objectives]]
kind = "abs_shift"
shift = [1.0]

[[objectives]]
kind = "abs_shift"
shift = [3.0]
"#;

    const THREE_AGENTS: &str = r#"
n = 3
m = 1
alpha = 0.05
k_max = 300
seed = 9
mode = "verify"

[schedule]
kind = "cycle"
graphs = [[[1, 2]], [[2, 3]]]

[initial]
kind = "uniform"

[[objectives]]
kind = "max_affine"
pieces = [{ slope = [1.0], intercept = 0.0 }, { slope = [-2.0], intercept = 1.0 }]

[[objectives]]
kind = "max_affine"
pieces = [{ slope = [-1.0], intercept = 0.0 }, { slope = [2.0], intercept = -1.0 }]

[[objectives]]
kind = "abs_shift"
shift = [0.5]
"#;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap()
    }

    fn err_of(text: &str) -> String {
        match ExperimentConfig::from_toml_str(text).and_then(|c| simulate(&c, true)) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("config was accepted"),
        }
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn zero_objectives_verify_cleanly() {
        let text = r#"
n = 3
m = 2
alpha = 0.1
k_max = 20
mode = "verify"
[schedule]
kind = "complete"
[[objectives]]
kind = "zero"
dim = 2
[[objectives]]
kind = "zero"
dim = 2
[[objectives]]
kind = "zero"
dim = 2
"#;
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&config(text), dir.path()).unwrap();
        assert_eq!(summary.violations, Some(0));
        assert!(summary.checks.unwrap() > 0);
        assert!(summary.final_gaps.unwrap().iter().all(|g| *g == 0.0));
        assert_eq!(execute(&config(text), dir.path()).unwrap(), 0);
    }

    #[test]
    fn permutation_schedule_is_rejected_before_simulation() {
        let text = r#"
n = 2
m = 1
alpha = 0.1
k_max = 10
[schedule]
kind = "explicit"
matrices = [[[0.0, 1.0], [1.0, 0.0]]]
eta = 0.5
window = 1
[[objectives]]
kind = "zero"
dim = 1
[[objectives]]
kind = "zero"
dim = 1
"#;
        let msg = err_of(text);
        assert!(msg.contains("schedule"), "{msg}");
        assert!(msg.contains("positive diagonal violated"), "{msg}");
    }

    #[test]
    fn running_two_agent_example_bound() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&config(TWO_AGENTS), dir.path()).unwrap();
        let bound = summary.bound.unwrap();
        assert!((bound - 80.627419).abs() < 1e-6);
        let t1 = theorem1_constants(2, 1, 0.5).unwrap();
        assert!((bound - theorem1_bound(&t1, 2, 0.1, 1.0, 1.0, 100).unwrap()).abs() < 1e-12);
        assert_eq!(summary.info.dist0, Some(1.0));
        assert_eq!(summary.violation_count(), 0);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(json["bound"].as_f64().unwrap(), bound);
        assert_eq!(json["mode"], "verify");
    }

    #[test]
    fn run_mode_skips_checks() {
        let mut c = config(TWO_AGENTS);
        c.mode = Mode::Run;
        let sim = simulate(&c, false).unwrap();
        assert!(sim.report.is_none());
        assert!(sim.bounds.is_some());
    }

    #[test]
    fn trace_layout_and_bounds_recheck_from_csv() {
        let c = config(THREE_AGENTS);
        let sim = simulate(&c, true).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&sim, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,agent,x1,f_avg,bound,disagreement,max_error");
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 301 * 3);
        let f_star = sim.info.optimal_value.unwrap();
        for (idx, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), 7);
            assert_eq!(r[0].parse::<usize>().unwrap(), idx / 3);
            assert_eq!(r[1].parse::<usize>().unwrap(), idx % 3 + 1);
            let x: f64 = r[2].parse().unwrap();
            assert_eq!(x, sim.estimates[idx / 3][idx % 3][0]);
            if idx >= 3 {
                let f: f64 = r[3].parse().unwrap();
                let b: f64 = r[4].parse().unwrap();
                assert!(f - f_star <= b + 1e-9);
            } else {
                assert_eq!((r[3], r[4]), ("", ""));
            }
            assert_eq!(r[6], "");
        }
    }

    #[test]
    fn quantized_trace_reports_errors_on_grid() {
        let mut c = config(THREE_AGENTS);
        c.quantizer = Resolution::Finite(100);
        c.initial = InitialSpec::Explicit { values: vec![vec![0.03], vec![-0.05], vec![0.1]] };
        let sim = simulate(&c, true).unwrap();
        assert_eq!(sim.report.as_ref().unwrap().violations.len(), 0);
        for row in &sim.estimates {
            for x in row {
                assert_eq!((x[0] * 100.0).round() / 100.0, x[0]);
            }
        }
        let errors = sim.max_errors.as_ref().unwrap();
        assert!(errors.iter().flatten().all(|e| (0.0..=0.01).contains(e)));
        let mut buf = Vec::new();
        write_trace_csv(&sim, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let last = text.lines().last().unwrap();
        assert!(!last.ends_with(','));
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let c = config(THREE_AGENTS);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&c, a.path()).unwrap();
        run_experiment(&c, b.path()).unwrap();
        for f in ["trace.csv", "summary.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
        let mut other = c.clone();
        other.seed += 1;
        let d = tempfile::tempdir().unwrap();
        run_experiment(&other, d.path()).unwrap();
        assert_ne!(fs::read(a.path().join("trace.csv")).unwrap(), fs::read(d.path().join("trace.csv")).unwrap());
    }

    #[test]
    fn uniform_start_respects_norm_precondition() {
        let c = config(THREE_AGENTS);
        let sim = simulate(&c, false).unwrap();
        let limit = c.alpha * sim.info.subgradient_bound.unwrap();
        assert!(sim.estimates[0].iter().all(|x| x[0].abs() <= limit));
        assert!(sim.estimates[0].iter().any(|x| x[0] != 0.0));
    }

    #[test]
    fn quantizer_sweep_constants_decrease_to_unquantized() {
        let c = config(TWO_AGENTS);
        let rows = sweep(&c, SweepAxis::Q, &strings(&["1", "10", "100", "inf"])).unwrap();
        let values: Vec<&str> = rows.iter().map(|r| r.value.as_str()).collect();
        assert_eq!(values, ["1", "10", "100", "inf"]);
        for w in rows.windows(2) {
            assert!(w[1].c_tilde.unwrap() < w[0].c_tilde.unwrap());
            assert!(w[1].bound.unwrap() <= w[0].bound.unwrap());
        }
        let last = rows.last().unwrap();
        assert!((last.c_tilde.unwrap() - last.c).abs() <= 1e-9);
        assert!((rows[1].c_tilde.unwrap() - 2147.064516).abs() < 1e-6);
        assert!((rows[1].bound.unwrap() - 161.104839).abs() < 1e-6);
        assert!(rows.iter().all(|r| r.violations == 0));
    }

    #[test]
    fn k_max_sweep_shrinks_transient_term() {
        let c = config(TWO_AGENTS);
        let rows = sweep(&c, SweepAxis::KMax, &strings(&["10", "100", "1000"])).unwrap();
        for (r, k) in rows.iter().zip([10.0, 100.0, 1000.0]) {
            let transient = r.bound.unwrap() - r.persistent_bound.unwrap();
            assert!((transient - 2.0 / (2.0 * 0.1 * k)).abs() < 1e-9);
        }
    }

    #[test]
    fn alpha_sweep_scales_persistent_term() {
        let c = config(TWO_AGENTS);
        let rows = sweep(&c, SweepAxis::Alpha, &strings(&["0.01", "0.1"])).unwrap();
        let ratio = rows[1].persistent_bound.unwrap() / rows[0].persistent_bound.unwrap();
        assert!((ratio - 10.0).abs() < 1e-9);
    }

    #[test]
    fn n_sweep_cycles_objectives() {
        let c = config(TWO_AGENTS);
        let rows = sweep(&c, SweepAxis::N, &strings(&["2", "3", "5"])).unwrap();
        for (r, n) in rows.iter().zip([2, 3, 5]) {
            let t1 = theorem1_constants(n, 1, 1.0 / n as f64).unwrap();
            assert_eq!(r.c1, t1.c1);
            assert_eq!(r.violations, 0);
        }
        let msg = sweep(&config(THREE_AGENTS), SweepAxis::N, &strings(&["4"])).unwrap_err().to_string();
        assert!(msg.contains("complete or random_connected"), "{msg}");
    }

    #[test]
    fn window_and_eta_sweeps() {
        let c = config(THREE_AGENTS);
        let rows = sweep(&c, SweepAxis::B, &strings(&["2", "4"])).unwrap();
        assert!(rows[1].c1 > rows[0].c1);
        let msg = sweep(&c, SweepAxis::B, &strings(&["1"])).unwrap_err().to_string();
        assert!(msg.contains("B=1") && msg.contains("connectivity"), "{msg}");
        let rows = sweep(&c, SweepAxis::Eta, &strings(&["0.3", "0.1"])).unwrap();
        assert!(rows[1].c1 > rows[0].c1);
        let msg = sweep(&c, SweepAxis::Eta, &strings(&["0.6"])).unwrap_err().to_string();
        assert!(msg.contains("eta"), "{msg}");
    }

    #[test]
    fn unknown_axis_and_bad_values_are_rejected() {
        assert!("gamma".parse::<SweepAxis>().is_err());
        let c = config(TWO_AGENTS);
        assert!(sweep(&c, SweepAxis::Q, &strings(&["0"])).is_err());
        assert!(sweep(&c, SweepAxis::Alpha, &strings(&["abc"])).is_err());
        assert!(sweep(&c, SweepAxis::Alpha, &[]).is_err());
        let text = format!("{TWO_AGENTS}\n[sweep]\naxis = \"gamma\"\nvalues = [1]\n");
        assert!(err_of(&text).contains("sweep.axis"));
    }

    #[test]
    fn diagnostics_name_the_offending_field() {
        let swap = |from: &str, to: &str| TWO_AGENTS.replacen(from, to, 1);
        assert!(err_of(&swap("alpha = 0.1", "alpha = 0.0")).contains("alpha:"));
        assert!(err_of(&swap("k_max = 100", "k_max = 0")).contains("k_max:"));
        assert!(err_of(&swap("m = 1", "m = 2")).contains("objectives[1]"));
        assert!(err_of(&swap("n = 2", "n = 3")).contains("objectives:"));
        assert!(err_of(&swap("alpha = 0.1\n", "")).contains("alpha"));
        assert!(err_of(&swap("seed = 1", "sede = 1")).contains("sede"));
        assert!(err_of(&swap("kind = \"complete\"", "kind = \"ring\"")).contains("ring"));
        assert!(err_of(&swap("mode = \"verify\"", "quantizer = 0")).contains("quantizer"));
        let grid = format!("{TWO_AGENTS}\n[initial]\nkind = \"grid\"\nunits = [[1], [2]]\n");
        assert!(err_of(&grid).contains("initial.units"));
        let off = format!("{}\n[initial]\nkind = \"explicit\"\nvalues = [[0.05], [0.0]]\n", swap("mode", "quantizer = 10\nmode"));
        assert!(err_of(&off).contains("initial.values"));
        let short = format!("{TWO_AGENTS}\n[initial]\nkind = \"explicit\"\nvalues = [[0.0]]\n");
        assert!(err_of(&short).contains("initial.values"));
        let far = format!("{TWO_AGENTS}\n[initial]\nkind = \"explicit\"\nvalues = [[0.5], [0.0]]\n");
        assert!(err_of(&far).contains("alpha*L"));
    }

    #[test]
    fn disconnected_static_graph_is_rejected() {
        let text = TWO_AGENTS
            .replace("n = 2", "n = 3")
            .replace("kind = \"complete\"", "kind = \"static\"\nedges = [[1, 2]]")
            + "\n[[objectives]]\nkind = \"abs_shift\"\nshift = [2.0]\n";
        assert!(err_of(&text).starts_with("invalid input: schedule:"));
    }

    #[test]
    fn sweep_csv_has_axis_header_and_input_order() {
        let c = config(TWO_AGENTS);
        let rows = sweep(&c, SweepAxis::Q, &strings(&["inf", "1"])).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(SweepAxis::Q, &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Q,c1,c,c1_tilde,c_tilde,persistent_bound,bound,final_gap,violations");
        assert!(lines[1].starts_with("inf,") && lines[2].starts_with("1,"));
    }
}
