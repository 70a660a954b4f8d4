//! The real-valued distributed subgradient method
//! `x_i(k+1) = Σ_j a_ij(k) x_j(k) - α d_i(k)` with `d_i(k) ∈ ∂f_i(x_i(k))`,
//! its running averages, and the bound on `f(x̂_i(k)) - f*`.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::network::{WeightMatrix, WeightSchedule};
use crate::objectives::ObjectiveSuite;
use crate::quantized::{lemma2b_bound, Resolution};
use crate::report::{Check, VerificationReport};
use crate::vecops::{dist, mean, norm};

/// Additive slack on the convergence-bound inequalities.
pub const BOUND_SLACK: f64 = 1e-9;

/// Estimates `x_1(k), …, x_n(k)` with the stepsize.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStates {
    pub x: Vec<Vec<f64>>,
    pub k: usize,
    pub alpha: f64,
}

impl AgentStates {
    pub fn new(x0: Vec<Vec<f64>>, alpha: f64) -> Result<Self> {
        check_estimates(&x0)?;
        check_alpha(alpha)?;
        Ok(Self { x: x0, k: 0, alpha })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    /// One synchronous update: every agent mixes the step-`k` estimates
    /// before any estimate is replaced.
    pub fn step(&self, a: &WeightMatrix, suite: &ObjectiveSuite) -> Result<AgentStates> {
        self.step_with_subgradients(a, suite).map(|(s, _)| s)
    }

    /// Like [`AgentStates::step`], also returning the subgradients `d_i(k)`.
    pub fn step_with_subgradients(
        &self,
        a: &WeightMatrix,
        suite: &ObjectiveSuite,
    ) -> Result<(AgentStates, Vec<Vec<f64>>)> {
        check_dim(self.n(), a.n())?;
        check_dim(self.n(), suite.len())?;
        check_dim(self.dim(), suite.dim())?;
        let d: Vec<Vec<f64>> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, xi)| suite.objective(i).subgradient_unchecked(xi))
            .collect();
        let next = mix_and_step(a, &self.x, &d, self.alpha);
        Ok((
            AgentStates {
                x: next,
                k: self.k + 1,
                alpha: self.alpha,
            },
            d,
        ))
    }
}

/// `Σ_j a_ij x_j - α d_i` for every agent, summed in ascending `j`.
pub(crate) fn mix_and_step(a: &WeightMatrix, x: &[Vec<f64>], d: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    let m = x[0].len();
    (0..x.len())
        .map(|i| {
            let row = a.row(i);
            (0..m)
                .map(|c| {
                    let mixed = row
                        .iter()
                        .zip(x)
                        .fold(0.0, |acc, (aij, xj)| acc + aij * xj[c]);
                    mixed - alpha * d[i][c]
                })
                .collect()
        })
        .collect()
}

pub(crate) fn check_estimates<T>(x0: &[Vec<T>]) -> Result<()> {
    let first = x0
        .first()
        .ok_or_else(|| Error::invalid("need at least one agent"))?;
    if first.is_empty() {
        return Err(Error::invalid("estimate dimension must be positive"));
    }
    for x in x0 {
        check_dim(first.len(), x.len())?;
    }
    Ok(())
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("stepsize alpha must be positive, got {alpha}")))
    }
}

/// Running sums `Σ_{h<k} x_i(h)` for `k = 0..=k_max`, indexed `[k][i]`.
pub(crate) fn prefix_sums(estimates: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let n = estimates[0].len();
    let m = estimates[0][0].len();
    let mut sums = Vec::with_capacity(estimates.len());
    let mut acc = vec![vec![0.0; m]; n];
    sums.push(acc.clone());
    for xk in &estimates[..estimates.len() - 1] {
        for (a, x) in acc.iter_mut().zip(xk) {
            for (ac, xc) in a.iter_mut().zip(x) {
                *ac += xc;
            }
        }
        sums.push(acc.clone());
    }
    sums
}

/// Full trajectory of a real-valued run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub alpha: f64,
    /// `x_i(k)`, indexed `[k][i]` for `k = 0..=k_max`.
    pub estimates: Vec<Vec<Vec<f64>>>,
    /// `d_i(k)`, indexed `[k][i]` for `k = 0..k_max`.
    pub subgradients: Vec<Vec<Vec<f64>>>,
    sums: Vec<Vec<Vec<f64>>>,
    /// `f(x̂_i(k))`, indexed `[k - 1][i]` for `k = 1..=k_max`.
    pub averaged_values: Vec<Vec<f64>>,
}

impl RunTrace {
    pub fn k_max(&self) -> usize {
        self.subgradients.len()
    }

    pub fn n(&self) -> usize {
        self.estimates[0].len()
    }

    /// `x̂_i(k) = (1/k) Σ_{h<k} x_i(h)` for `1 <= k <= k_max`.
    pub fn running_average(&self, i: usize, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.k_max() {
            return Err(Error::invalid(format!("running average needs 1 <= k <= {}", self.k_max())));
        }
        Ok(self.sums[k][i].iter().map(|s| s / k as f64).collect())
    }

    /// `f(x̂_i(k))` for `1 <= k <= k_max`.
    pub fn averaged_value(&self, i: usize, k: usize) -> f64 {
        self.averaged_values[k - 1][i]
    }
}

/// Runs `k_max` synchronous steps from `x0`.
pub fn run(
    schedule: &WeightSchedule,
    suite: &ObjectiveSuite,
    x0: &[Vec<f64>],
    alpha: f64,
    k_max: usize,
) -> Result<RunTrace> {
    let mut state = AgentStates::new(x0.to_vec(), alpha)?;
    check_dim(schedule.n(), state.n())?;
    check_dim(state.n(), suite.len())?;
    check_dim(state.dim(), suite.dim())?;
    let mut estimates = Vec::with_capacity(k_max + 1);
    let mut subgradients = Vec::with_capacity(k_max);
    estimates.push(state.x.clone());
    for k in 0..k_max {
        let (next, d) = state.step_with_subgradients(&schedule.matrix(k), suite)?;
        subgradients.push(d);
        estimates.push(next.x.clone());
        state = next;
    }
    let sums = prefix_sums(&estimates);
    let averaged_values = (1..=k_max)
        .map(|k| {
            sums[k]
                .iter()
                .map(|s| {
                    let avg: Vec<f64> = s.iter().map(|v| v / k as f64).collect();
                    suite.eval_sum_unchecked(&avg)
                })
                .collect()
        })
        .collect();
    Ok(RunTrace {
        alpha,
        estimates,
        subgradients,
        sums,
        averaged_values,
    })
}

/// Recomputes `x_i(k+1)` for every agent from `x(s)` and the recorded
/// subgradients `d(s), …, d(k)` through transition matrices:
///
/// `x_i(k+1) = Σ_j [Φ(k,s)]_ij x_j(s) - α Σ_{r=s}^{k-1} Σ_j [Φ(k,r+1)]_ij d_j(r) - α d_i(k)`.
///
/// The products are built by right-multiplication, `Φ(k,r) = Φ(k,r+1) A(r)`.
pub fn expand_via_transitions(
    schedule: &WeightSchedule,
    trace: &RunTrace,
    k: usize,
    s: usize,
) -> Result<Vec<Vec<f64>>> {
    if s > k {
        return Err(Error::invalid(format!("expansion needs s <= k, got s = {s}, k = {k}")));
    }
    if k >= trace.k_max() {
        return Err(Error::invalid(format!(
            "expansion at k = {k} needs a trace longer than {}",
            trace.k_max()
        )));
    }
    let n = trace.n();
    let m = trace.estimates[0][0].len();
    let alpha = trace.alpha;
    let mut out = vec![vec![0.0; m]; n];

    // middle sum, r = k-1 down to s, with phi = Φ(k, r+1)
    let mut phi = schedule.matrix(k);
    for r in (s..k).rev() {
        let d = &trace.subgradients[r];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, dj) in d.iter().enumerate() {
                let w = phi.get(i, j);
                for c in 0..m {
                    o[c] -= alpha * w * dj[c];
                }
            }
        }
        phi = phi.mul(&schedule.matrix(r));
    }
    // phi is now Φ(k, s)
    let xs = &trace.estimates[s];
    for (i, o) in out.iter_mut().enumerate() {
        for c in 0..m {
            let mixed = (0..n).fold(0.0, |acc, j| acc + phi.get(i, j) * xs[j][c]);
            o[c] += mixed - alpha * trace.subgradients[k][i][c];
        }
    }
    Ok(out)
}

/// `β = 1 - η/(4n²)`, `C₁ = 1 + nB/(β(1-β))`, `C = 1 + 8nC₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem1Constants {
    pub beta: f64,
    pub c1: f64,
    pub c: f64,
}

pub fn theorem1_constants(n: usize, window: usize, eta: f64) -> Result<Theorem1Constants> {
    if n == 0 || window == 0 {
        return Err(Error::invalid("n and B must be at least 1"));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    let nf = n as f64;
    let beta = 1.0 - eta / (4.0 * nf * nf);
    let c1 = 1.0 + nf * window as f64 / (beta * (1.0 - beta));
    let c = 1.0 + 8.0 * nf * c1;
    Ok(Theorem1Constants { beta, c1, c })
}

/// Persistent part of the real-valued gap bound, `αL²C/2 + 2αnL²C₁`.
pub fn theorem1_persistent(constants: &Theorem1Constants, n: usize, alpha: f64, l: f64) -> f64 {
    let l2 = l * l;
    alpha * l2 * constants.c / 2.0 + 2.0 * alpha * n as f64 * l2 * constants.c1
}

/// Gap bound `n·dist0²/(2αk) + αL²C/2 + 2αnL²C₁` on `f(x̂_i(k)) - f*`.
pub fn theorem1_bound(
    constants: &Theorem1Constants,
    n: usize,
    alpha: f64,
    l: f64,
    dist0: f64,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("gap bound needs k >= 1"));
    }
    check_alpha(alpha)?;
    let transient = n as f64 * dist0 * dist0 / (2.0 * alpha * k as f64);
    Ok(transient + theorem1_persistent(constants, n, alpha, l))
}

/// Checks the precondition `max_i ‖x_i(0)‖ <= αL`.
pub(crate) fn check_initial_norms(norms: impl Iterator<Item = f64>, alpha: f64, l: f64) -> Result<()> {
    let limit = alpha * l;
    for (i, v) in norms.enumerate() {
        if v > limit + 1e-12 {
            return Err(Error::invalid(format!(
                "initial estimate of agent {} has norm {v}, above alpha*L = {limit}",
                i + 1
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_verifiable(suite: &ObjectiveSuite) -> Result<()> {
    if suite.is_bound_exempt() {
        return Err(Error::invalid(
            "objective suite contains bound-exempt objectives (unbounded subgradients)",
        ));
    }
    if suite.optimum().is_none() {
        return Err(Error::Unsupported("objective suite has no optimal-set oracle".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Outcome {
    pub trace: RunTrace,
    pub report: VerificationReport,
    pub constants: Theorem1Constants,
    pub optimal_value: f64,
    /// `dist(y(0), X*)` with `y(0)` the mean initial estimate.
    pub dist0: f64,
    /// Bound on `‖x_i(k) - y(k)‖`.
    pub deviation_bound: f64,
    /// `L` of the suite.
    pub subgradient_bound: f64,
}

impl Theorem1Outcome {
    pub fn gap_bound(&self, k: usize) -> f64 {
        let n = self.trace.n();
        let l = self.subgradient_bound;
        theorem1_bound(&self.constants, n, self.trace.alpha, l, self.dist0, k).unwrap_or(f64::NAN)
    }
}

/// Runs the method and checks, for every agent `i` and `1 <= k <= k_max`,
/// `f(x̂_i(k)) <= f* + theorem1_bound(k)`, plus the agreement bound
/// `‖x_i(k) - y(k)‖ <= 2αL(1 + nB/(β(1-β)))` against the centralized
/// sequence `y(k+1) = y(k) - (α/n) Σ_j d_j(k)`.
pub fn verify_theorem1(
    schedule: &WeightSchedule,
    suite: &ObjectiveSuite,
    x0: &[Vec<f64>],
    alpha: f64,
    k_max: usize,
) -> Result<Theorem1Outcome> {
    check_verifiable(suite)?;
    check_alpha(alpha)?;
    let l = suite.subgradient_bound();
    check_initial_norms(x0.iter().map(|x| norm(x)), alpha, l)?;
    let n = schedule.n();
    let trace = run(schedule, suite, x0, alpha, k_max)?;
    let constants = theorem1_constants(n, schedule.window(), schedule.eta())?;
    let optimal_value = suite.optimal_value()?;
    let y0 = mean(x0);
    let dist0 = suite.dist_to_optimum(&y0)?;
    let deviation_bound = lemma2b_bound(
        n,
        schedule.window(),
        schedule.eta(),
        alpha,
        l,
        suite.dim(),
        Resolution::Infinite,
    )?;

    let mut report = VerificationReport::default();
    for k in 1..=k_max {
        let rhs = optimal_value + theorem1_bound(&constants, n, alpha, l, dist0, k)? + BOUND_SLACK;
        for i in 0..n {
            report.check(Check::RealGap, k, Some(i), trace.averaged_value(i, k), rhs);
        }
    }
    let mut y = y0;
    for k in 0..=k_max {
        for (i, xi) in trace.estimates[k].iter().enumerate() {
            report.check(Check::AgentDeviation, k, Some(i), dist(xi, &y), deviation_bound + BOUND_SLACK);
        }
        if k < k_max {
            let d = &trace.subgradients[k];
            for (c, yc) in y.iter_mut().enumerate() {
                let total = d.iter().fold(0.0, |acc, dj| acc + dj[c]);
                *yc -= alpha / n as f64 * total;
            }
        }
    }
    Ok(Theorem1Outcome {
        trace,
        report,
        constants,
        optimal_value,
        dist0,
        deviation_bound,
        subgradient_bound: l,
    })
}
