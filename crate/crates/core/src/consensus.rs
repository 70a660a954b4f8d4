//! Pure averaging dynamics `z(k+1) = A(k) z(k)` and the disagreement
//! `V(k) = Σ_j (z_j(k) - z̄(k))²`.

use crate::error::{Error, Result};
use crate::network::{WeightMatrix, WeightSchedule};
use crate::report::{Check, VerificationReport};

/// Additive slack on the averaging inequalities.
pub const LEMMA_SLACK: f64 = 1e-12;
/// Allowed drift of the mean under doubly stochastic mixing.
pub const MEAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub z: Vec<f64>,
    pub k: usize,
    initial_mean: f64,
}

impl ConsensusState {
    pub fn new(z0: Vec<f64>) -> Result<Self> {
        if z0.is_empty() {
            return Err(Error::invalid("consensus state needs at least one agent"));
        }
        let initial_mean = mean(&z0);
        Ok(Self { z: z0, k: 0, initial_mean })
    }

    pub fn initial_mean(&self) -> f64 {
        self.initial_mean
    }

    pub fn mean(&self) -> f64 {
        mean(&self.z)
    }

    /// One averaging step `z ← A z`.
    pub fn step_average(&self, a: &WeightMatrix) -> Result<Self> {
        Ok(Self {
            z: a.apply(&self.z)?,
            k: self.k + 1,
            initial_mean: self.initial_mean,
        })
    }
}

fn mean(z: &[f64]) -> f64 {
    z.iter().sum::<f64>() / z.len() as f64
}

/// `Σ_j (z_j - mean(z))²`, computed in two passes.
pub fn disagreement(z: &[f64]) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    let c = mean(z);
    z.iter().fold(0.0, |acc, v| acc + (v - c) * (v - c))
}

/// `V(0), V(1), …`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DisagreementTrace {
    pub values: Vec<f64>,
}

/// `1 - eta/(2n²)`, the per-window contraction of `V`.
pub fn window_contraction(n: usize, eta: f64) -> f64 {
    1.0 - eta / (2.0 * (n * n) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Outcome {
    pub trace: DisagreementTrace,
    pub report: VerificationReport,
}

/// Runs the averaging dynamics for `horizon` steps from `z0` and checks the
/// mean is preserved, `V` is nonincreasing, and
/// `V((w+1)B) <= (1 - eta/(2n²)) V(wB)` for every window inside the horizon.
pub fn verify_lemma1(schedule: &WeightSchedule, z0: &[f64], horizon: usize) -> Result<Lemma1Outcome> {
    let n = schedule.n();
    crate::error::check_dim(n, z0.len())?;
    let mut state = ConsensusState::new(z0.to_vec())?;
    let mut values = Vec::with_capacity(horizon + 1);
    values.push(disagreement(&state.z));
    let mut report = VerificationReport::default();
    for k in 0..horizon {
        state = state.step_average(&schedule.matrix(k))?;
        values.push(disagreement(&state.z));
        report.check(
            Check::AveragePreserved,
            k + 1,
            None,
            (state.mean() - state.initial_mean()).abs(),
            MEAN_TOL,
        );
        report.check(
            Check::DisagreementMonotone,
            k + 1,
            None,
            values[k + 1],
            values[k] + LEMMA_SLACK,
        );
    }
    let b = schedule.window();
    let factor = window_contraction(n, schedule.eta());
    let mut w = 0;
    while (w + 1) * b <= horizon {
        report.check(
            Check::DisagreementWindowDecay,
            (w + 1) * b,
            None,
            values[(w + 1) * b],
            factor * values[w * b] + LEMMA_SLACK,
        );
        w += 1;
    }
    Ok(Lemma1Outcome {
        trace: DisagreementTrace { values },
        report,
    })
}
