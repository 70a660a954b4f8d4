//! The quantized method
//! `x^Q_i(k+1) = ⌊Σ_j a_ij(k) x^Q_j(k) - α d̃_i(k)⌋`, where `⌊·⌋` rounds each
//! component down to a multiple of `1/Q`.
//!
//! Estimates are held as integer grid units, so every stored value is an
//! exact multiple of `1/Q`. The rounding error
//! `e_i(k+1) = (pre-rounding value) - x^Q_i(k+1)` lies in `[0, 1/Q)`.
//! The centralized sequence `y(k)` is realized by its recursion
//! `y(k+1) = y(k) - (α/n) Σ_j d̃_j(k) - (1/n) Σ_j e_j(k+1)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dynamics::{
    check_alpha, check_estimates, check_initial_norms, check_verifiable, mix_and_step, prefix_sums,
    theorem1_constants, BOUND_SLACK,
};
use crate::error::{check_dim, Error, Result};
use crate::network::{WeightMatrix, WeightSchedule};
use crate::objectives::ObjectiveSuite;
use crate::report::{Check, VerificationReport};
use crate::vecops::{dist, mean, norm};

/// Largest grid magnitude kept exact in `f64` arithmetic.
const MAX_UNITS: f64 = 9_007_199_254_740_992.0; // 2^53

/// Number of grid levels per unit length, or no quantization at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Finite(u64),
    Infinite,
}

impl Resolution {
    /// `1/Q`, zero for [`Resolution::Infinite`].
    pub fn step(self) -> f64 {
        match self {
            Resolution::Finite(q) => 1.0 / q as f64,
            Resolution::Infinite => 0.0,
        }
    }

    pub fn finite(self) -> Result<u64> {
        match self {
            Resolution::Finite(q) => Ok(q),
            Resolution::Infinite => Err(Error::invalid("a finite quantizer Q is required")),
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::Finite(q) => write!(f, "{q}"),
            Resolution::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") {
            return Ok(Resolution::Infinite);
        }
        match s.parse::<u64>() {
            Ok(q) if q >= 1 => Ok(Resolution::Finite(q)),
            _ => Err(Error::invalid(format!(
                "quantizer must be a positive integer or \"inf\", got {s:?}"
            ))),
        }
    }
}

impl Serialize for Resolution {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Resolution::Finite(q) => serializer.serialize_u64(*q),
            Resolution::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(q) if q >= 1 => Ok(Resolution::Finite(q as u64)),
            Raw::Int(q) => Err(serde::de::Error::custom(format!(
                "quantizer must be a positive integer or \"inf\", got {q}"
            ))),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    pub resolution: Resolution,
    pub dim: usize,
}

impl QuantizerSpec {
    pub fn new(q: u64, dim: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("quantizer Q must be at least 1"));
        }
        Ok(Self {
            resolution: Resolution::Finite(q),
            dim,
        })
    }
}

/// Largest `u` with `u/Q <= v`, where `u/Q` is evaluated in `f64`.
pub(crate) fn floor_units(v: f64, q: u64) -> Result<i64> {
    if !v.is_finite() {
        return Err(Error::invalid(format!("cannot quantize non-finite value {v}")));
    }
    let qf = q as f64;
    let mut u = (v * qf).floor();
    if u.abs() >= MAX_UNITS {
        return Err(Error::invalid(format!("value {v} exceeds the representable grid range")));
    }
    // v * Q may round across an integer; settle against the stored grid value
    while u / qf > v {
        u -= 1.0;
    }
    while (u + 1.0) / qf <= v {
        u += 1.0;
    }
    Ok(u as i64)
}

/// Grid value of `units` at resolution `q`.
pub fn grid_value(units: i64, q: u64) -> f64 {
    units as f64 / q as f64
}

/// Rounds each component down to the grid, returning grid units.
pub fn quantize(v: &[f64], spec: &QuantizerSpec) -> Result<Vec<i64>> {
    check_dim(spec.dim, v.len())?;
    let q = spec.resolution.finite()?;
    v.iter().map(|x| floor_units(*x, q)).collect()
}

/// Converts real initial estimates to grid units, rejecting values that are
/// not exact multiples of `1/Q`.
pub fn grid_from_reals(x: &[Vec<f64>], q: u64) -> Result<Vec<Vec<i64>>> {
    x.iter()
        .enumerate()
        .map(|(i, xi)| {
            xi.iter()
                .map(|v| {
                    let u = floor_units(*v, q)?;
                    if grid_value(u, q) == *v {
                        Ok(u)
                    } else {
                        Err(Error::invalid(format!(
                            "initial estimate {v} of agent {} is not a multiple of 1/{q}",
                            i + 1
                        )))
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedState {
    /// `x^Q_i(k) = units[i] / Q`.
    pub units: Vec<Vec<i64>>,
    pub k: usize,
}

impl QuantizedState {
    pub fn values(&self, q: u64) -> Vec<Vec<f64>> {
        self.units
            .iter()
            .map(|u| u.iter().map(|v| grid_value(*v, q)).collect())
            .collect()
    }
}

/// Rounding errors `e_i(k)` produced by the step into time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub e: Vec<Vec<f64>>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedStep {
    pub next: QuantizedState,
    pub errors: ErrorRecord,
    /// `d̃_i(k)`, evaluated at the pre-step grid estimates.
    pub subgradients: Vec<Vec<f64>>,
}

pub fn step_quantized(
    state: &QuantizedState,
    a: &WeightMatrix,
    suite: &ObjectiveSuite,
    alpha: f64,
    spec: &QuantizerSpec,
) -> Result<QuantizedStep> {
    let q = spec.resolution.finite()?;
    check_estimates(&state.units)?;
    check_dim(state.units.len(), a.n())?;
    check_dim(state.units.len(), suite.len())?;
    check_dim(spec.dim, state.units[0].len())?;
    check_dim(spec.dim, suite.dim())?;
    let x = state.values(q);
    let d: Vec<Vec<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, xi)| suite.objective(i).subgradient_unchecked(xi))
        .collect();
    let pre = mix_and_step(a, &x, &d, alpha);
    let mut units = Vec::with_capacity(pre.len());
    let mut errors = Vec::with_capacity(pre.len());
    for p in &pre {
        let u: Vec<i64> = p.iter().map(|v| floor_units(*v, q)).collect::<Result<_>>()?;
        errors.push(p.iter().zip(&u).map(|(v, ui)| v - grid_value(*ui, q)).collect());
        units.push(u);
    }
    Ok(QuantizedStep {
        next: QuantizedState {
            units,
            k: state.k + 1,
        },
        errors: ErrorRecord {
            e: errors,
            k: state.k + 1,
        },
        subgradients: d,
    })
}

/// Full trajectory of a quantized run.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTrace {
    pub q: u64,
    pub alpha: f64,
    /// Grid units of `x^Q_i(k)`, indexed `[k][i]` for `k = 0..=k_max`.
    pub states: Vec<Vec<Vec<i64>>>,
    /// `d̃_i(k)`, indexed `[k][i]` for `k = 0..k_max`.
    pub subgradients: Vec<Vec<Vec<f64>>>,
    /// `e_i(k+1)`, indexed `[k][i]` for `k = 0..k_max`.
    pub errors: Vec<Vec<Vec<f64>>>,
    sums: Vec<Vec<Vec<f64>>>,
}

impl QuantizedTrace {
    pub fn k_max(&self) -> usize {
        self.subgradients.len()
    }

    pub fn n(&self) -> usize {
        self.states[0].len()
    }

    pub fn dim(&self) -> usize {
        self.states[0][0].len()
    }

    /// `x^Q_i(k)` as reals.
    pub fn value(&self, k: usize, i: usize) -> Vec<f64> {
        self.states[k][i].iter().map(|u| grid_value(*u, self.q)).collect()
    }

    /// `e_i(k)` for `1 <= k <= k_max`.
    pub fn error(&self, k: usize, i: usize) -> &[f64] {
        &self.errors[k - 1][i]
    }

    /// `x̂^Q_i(k) = (1/k) Σ_{h<k} x^Q_i(h)` for `1 <= k <= k_max`.
    pub fn running_average(&self, i: usize, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.k_max() {
            return Err(Error::invalid(format!("running average needs 1 <= k <= {}", self.k_max())));
        }
        Ok(self.sums[k][i].iter().map(|s| s / k as f64).collect())
    }
}

/// Runs `k_max` synchronous quantized steps from grid units `x0_grid`.
pub fn run_quantized(
    schedule: &WeightSchedule,
    suite: &ObjectiveSuite,
    x0_grid: &[Vec<i64>],
    alpha: f64,
    spec: &QuantizerSpec,
    k_max: usize,
) -> Result<QuantizedTrace> {
    let q = spec.resolution.finite()?;
    check_alpha(alpha)?;
    check_estimates(x0_grid)?;
    check_dim(schedule.n(), x0_grid.len())?;
    let mut state = QuantizedState {
        units: x0_grid.to_vec(),
        k: 0,
    };
    let mut states = Vec::with_capacity(k_max + 1);
    let mut subgradients = Vec::with_capacity(k_max);
    let mut errors = Vec::with_capacity(k_max);
    states.push(state.units.clone());
    for k in 0..k_max {
        let step = step_quantized(&state, &schedule.matrix(k), suite, alpha, spec)?;
        states.push(step.next.units.clone());
        subgradients.push(step.subgradients);
        errors.push(step.errors.e);
        state = step.next;
    }
    let reals: Vec<Vec<Vec<f64>>> = states
        .iter()
        .map(|s| s.iter().map(|u| u.iter().map(|v| grid_value(*v, q)).collect()).collect())
        .collect();
    let sums = prefix_sums(&reals);
    Ok(QuantizedTrace {
        q,
        alpha,
        states,
        subgradients,
        errors,
        sums,
    })
}

/// The centralized sequence `y(k)` and its time averages.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppedModelTrace {
    /// `y(k)` for `k = 0..=k_max`.
    pub y: Vec<Vec<f64>>,
    /// `ŷ(k) = (1/k) Σ_{h<k} y(h)`, indexed `[k - 1]` for `k = 1..=k_max`.
    pub y_hat: Vec<Vec<f64>>,
}

/// `y(0) = (1/n) Σ_j x^Q_j(0)` and
/// `y(k+1) = y(k) - (α/n) Σ_j d̃_j(k) - (1/n) Σ_j e_j(k+1)`.
pub fn stopped_model_y(trace: &QuantizedTrace) -> StoppedModelTrace {
    let n = trace.n() as f64;
    let m = trace.dim();
    let initial: Vec<Vec<f64>> = (0..trace.n()).map(|i| trace.value(0, i)).collect();
    let mut y = Vec::with_capacity(trace.k_max() + 1);
    y.push(mean(&initial));
    for k in 0..trace.k_max() {
        let prev: &Vec<f64> = &y[k];
        let next: Vec<f64> = (0..m)
            .map(|c| {
                let d = trace.subgradients[k].iter().fold(0.0, |acc, dj| acc + dj[c]);
                let e = trace.errors[k].iter().fold(0.0, |acc, ej| acc + ej[c]);
                prev[c] - trace.alpha / n * d - e / n
            })
            .collect();
        y.push(next);
    }
    let mut y_hat = Vec::with_capacity(trace.k_max());
    let mut acc = vec![0.0; m];
    for (k, yk) in y[..trace.k_max()].iter().enumerate() {
        for (a, v) in acc.iter_mut().zip(yk) {
            *a += v;
        }
        y_hat.push(acc.iter().map(|a| a / (k + 1) as f64).collect());
    }
    StoppedModelTrace { y, y_hat }
}

/// Parameters shared by the quantized bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundParams {
    pub n: usize,
    pub window: usize,
    pub eta: f64,
    pub alpha: f64,
    /// Subgradient bound `L`.
    pub l: f64,
    /// Dimension `m`.
    pub m: usize,
    pub resolution: Resolution,
}

impl BoundParams {
    pub fn from_run(schedule: &WeightSchedule, suite: &ObjectiveSuite, alpha: f64, resolution: Resolution) -> Self {
        Self {
            n: schedule.n(),
            window: schedule.window(),
            eta: schedule.eta(),
            alpha,
            l: suite.subgradient_bound(),
            m: suite.dim(),
            resolution,
        }
    }

    /// `(αL + √m/Q)(1 + nB/(β(1-β)))`.
    fn c1_tilde(&self) -> Result<f64> {
        let c1 = theorem1_constants(self.n, self.window, self.eta)?.c1;
        Ok((self.alpha * self.l + (self.m as f64).sqrt() * self.resolution.step()) * c1)
    }
}

/// `2(αL + √m/Q)(1 + nB/(β(1-β)))` with `β = 1 - η/(4n²)`; the `√m/Q` term
/// vanishes for `Q = ∞`.
pub fn lemma2b_bound(
    n: usize,
    window: usize,
    eta: f64,
    alpha: f64,
    l: f64,
    m: usize,
    resolution: Resolution,
) -> Result<f64> {
    let p = BoundParams {
        n,
        window,
        eta,
        alpha,
        l,
        m,
        resolution,
    };
    Ok(2.0 * p.c1_tilde()?)
}

/// Checks `‖x^Q_i(k) - y(k)‖ <= lemma2b_bound` for every agent and
/// `k = 0..=k_max`.
pub fn verify_lemma2b(trace: &QuantizedTrace, stopped: &StoppedModelTrace, params: &BoundParams) -> Result<VerificationReport> {
    let bound = lemma2b_bound(
        params.n,
        params.window,
        params.eta,
        params.alpha,
        params.l,
        params.m,
        params.resolution,
    )?;
    let mut report = VerificationReport::default();
    for k in 0..=trace.k_max() {
        for i in 0..trace.n() {
            let lhs = dist(&trace.value(k, i), &stopped.y[k]);
            report.check(Check::AgentDeviation, k, Some(i), lhs, bound + BOUND_SLACK);
        }
    }
    Ok(report)
}

/// `C̃₁ = (αL + √m/Q)(1 + nB/(β(1-β)))` and `C̃ = 1 + 8nC̃₁/(αL)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantBoundConstants {
    pub c1_tilde: f64,
    pub c_tilde: f64,
}

pub fn quant_constants(
    n: usize,
    window: usize,
    eta: f64,
    alpha: f64,
    l: f64,
    m: usize,
    resolution: Resolution,
) -> Result<QuantBoundConstants> {
    let al = alpha * l;
    if !(al > 0.0 && al.is_finite()) {
        return Err(Error::invalid(format!(
            "quantized constants need alpha*L > 0, got {al}"
        )));
    }
    let p = BoundParams {
        n,
        window,
        eta,
        alpha,
        l,
        m,
        resolution,
    };
    let c1_tilde = p.c1_tilde()?;
    // C̃₁/(αL) = (1 + √m/(QαL))·C₁, written so that Q = ∞ reproduces C exactly
    let c1 = theorem1_constants(n, window, eta)?.c1;
    let ratio = 1.0 + (m as f64).sqrt() * resolution.step() / al;
    Ok(QuantBoundConstants {
        c1_tilde,
        c_tilde: 1.0 + 8.0 * n as f64 * (ratio * c1),
    })
}

pub(crate) fn transient(n: usize, alpha: f64, dist0: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("gap bound needs k >= 1"));
    }
    check_alpha(alpha)?;
    Ok(n as f64 * dist0 * dist0 / (2.0 * alpha * k as f64))
}

/// Persistent part of the quantized gap bound, `αL²C̃/2 + 2nLC̃₁`.
pub fn theorem2_persistent(constants: &QuantBoundConstants, n: usize, alpha: f64, l: f64) -> f64 {
    alpha * l * l * constants.c_tilde / 2.0 + 2.0 * n as f64 * l * constants.c1_tilde
}

/// Gap bound on `f(ŷ(k)) - f*`: `n·dist0²/(2αk) + αL²C̃/2`.
pub fn lemma3_bound(
    constants: &QuantBoundConstants,
    n: usize,
    alpha: f64,
    l: f64,
    dist0: f64,
    k: usize,
) -> Result<f64> {
    Ok(transient(n, alpha, dist0, k)? + alpha * l * l * constants.c_tilde / 2.0)
}

/// Gap bound on `f(x̂^Q_i(k)) - f*`: `n·dist0²/(2αk) + αL²C̃/2 + 2nLC̃₁`.
pub fn theorem2_bound(
    constants: &QuantBoundConstants,
    n: usize,
    alpha: f64,
    l: f64,
    dist0: f64,
    k: usize,
) -> Result<f64> {
    Ok(transient(n, alpha, dist0, k)? + theorem2_persistent(constants, n, alpha, l))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Outcome {
    pub trace: QuantizedTrace,
    pub stopped: StoppedModelTrace,
    pub report: VerificationReport,
    /// `None` when `L = 0`, where only the transient term remains.
    pub constants: Option<QuantBoundConstants>,
    pub params: BoundParams,
    pub optimal_value: f64,
    pub dist0: f64,
}

impl Theorem2Outcome {
    /// Bound on `f(x̂^Q_i(k)) - f*`.
    pub fn gap_bound(&self, k: usize) -> Result<f64> {
        let p = &self.params;
        match &self.constants {
            Some(c) => theorem2_bound(c, p.n, p.alpha, p.l, self.dist0, k),
            None => transient(p.n, p.alpha, self.dist0, k),
        }
    }

    /// Bound on `f(ŷ(k)) - f*`.
    pub fn centralized_bound(&self, k: usize) -> Result<f64> {
        let p = &self.params;
        match &self.constants {
            Some(c) => lemma3_bound(c, p.n, p.alpha, p.l, self.dist0, k),
            None => transient(p.n, p.alpha, self.dist0, k),
        }
    }
}

/// Runs the quantized method and checks, for every agent and step: the
/// error range `0 <= e_i(k) <= 1/Q`, the deviation bound
/// `‖x^Q_i(k) - y(k)‖ <= lemma2b_bound`, the centralized gap
/// `f(ŷ(k)) <= f* + lemma3_bound(k)` and the agent gap
/// `f(x̂^Q_i(k)) <= f* + theorem2_bound(k)`.
///
/// With `L = 0` the persistent terms tend to zero and only the transient
/// term `n·dist0²/(2αk)` is used.
pub fn verify_theorem2(
    schedule: &WeightSchedule,
    suite: &ObjectiveSuite,
    x0_grid: &[Vec<i64>],
    alpha: f64,
    spec: &QuantizerSpec,
    k_max: usize,
) -> Result<Theorem2Outcome> {
    check_verifiable(suite)?;
    check_alpha(alpha)?;
    let q = spec.resolution.finite()?;
    let l = suite.subgradient_bound();
    check_estimates(x0_grid)?;
    check_initial_norms(
        x0_grid
            .iter()
            .map(|u| norm(&u.iter().map(|v| grid_value(*v, q)).collect::<Vec<_>>())),
        alpha,
        l,
    )?;
    let trace = run_quantized(schedule, suite, x0_grid, alpha, spec, k_max)?;
    let stopped = stopped_model_y(&trace);
    let params = BoundParams::from_run(schedule, suite, alpha, spec.resolution);
    let constants = if alpha * l > 0.0 {
        Some(quant_constants(
            params.n,
            params.window,
            params.eta,
            alpha,
            l,
            params.m,
            params.resolution,
        )?)
    } else {
        None
    };
    let optimal_value = suite.optimal_value()?;
    let dist0 = suite.dist_to_optimum(&stopped.y[0])?;
    let mut outcome = Theorem2Outcome {
        trace,
        stopped,
        report: VerificationReport::default(),
        constants,
        params,
        optimal_value,
        dist0,
    };

    let mut report = VerificationReport::default();
    let step = 1.0 / q as f64;
    let trace = &outcome.trace;
    for k in 1..=k_max {
        for i in 0..trace.n() {
            let e = trace.error(k, i);
            let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            report.check(Check::QuantizationErrorRange, k, Some(i), -lo, 0.0);
            report.check(Check::QuantizationErrorRange, k, Some(i), hi, step);
        }
    }
    report.merge(verify_lemma2b(trace, &outcome.stopped, &params)?);
    for k in 1..=k_max {
        let y_hat = &outcome.stopped.y_hat[k - 1];
        let rhs = optimal_value + outcome.centralized_bound(k)? + BOUND_SLACK;
        report.check(Check::CentralizedGap, k, None, suite.eval_sum_unchecked(y_hat), rhs);
        let rhs = optimal_value + outcome.gap_bound(k)? + BOUND_SLACK;
        for i in 0..trace.n() {
            let avg = trace.running_average(i, k)?;
            report.check(Check::QuantizedGap, k, Some(i), suite.eval_sum_unchecked(&avg), rhs);
        }
    }
    outcome.report = report;
    Ok(outcome)
}
