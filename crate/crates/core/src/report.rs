use std::fmt;

use serde::Serialize;

/// The inequality a [`Violation`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Mean of the averaging dynamics drifted from its initial value.
    AveragePreserved,
    /// `V(k+1) <= V(k)`.
    DisagreementMonotone,
    /// `V((k+1)B) <= (1 - eta/(2n^2)) V(kB)`.
    DisagreementWindowDecay,
    /// Gap of the running averages of the real-valued method.
    RealGap,
    /// Quantization error outside `[0, 1/Q]`.
    QuantizationErrorRange,
    /// Distance between a quantized estimate and the centralized sequence.
    AgentDeviation,
    /// Gap of the time-averaged centralized sequence.
    CentralizedGap,
    /// Gap of the running averages of the quantized method.
    QuantizedGap,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Check::AveragePreserved => "average_preserved",
            Check::DisagreementMonotone => "disagreement_monotone",
            Check::DisagreementWindowDecay => "disagreement_window_decay",
            Check::RealGap => "real_gap",
            Check::QuantizationErrorRange => "quantization_error_range",
            Check::AgentDeviation => "agent_deviation",
            Check::CentralizedGap => "centralized_gap",
            Check::QuantizedGap => "quantized_gap",
        };
        f.write_str(name)
    }
}

/// One failed inequality `lhs <= rhs` (slack already applied to `rhs`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub check: Check,
    pub k: usize,
    /// Zero-based agent index, when the inequality is per agent.
    pub agent: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    /// Number of inequalities evaluated.
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// Records the outcome of `lhs <= rhs`.
    pub(crate) fn check(&mut self, check: Check, k: usize, agent: Option<usize>, lhs: f64, rhs: f64) {
        self.checked += 1;
        // NaN on either side counts as a violation.
        if !(lhs <= rhs) {
            self.violations.push(Violation { check, k, agent, lhs, rhs });
        }
    }

    pub(crate) fn merge(&mut self, other: VerificationReport) {
        self.checked += other.checked;
        self.violations.extend(other.violations);
    }

    pub fn count(&self, check: Check) -> usize {
        self.violations.iter().filter(|v| v.check == check).count()
    }
}
