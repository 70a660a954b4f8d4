//! Per-agent convex objectives and the sum objective `f = Σ f_i`.
//!
//! Only objectives with globally bounded subgradients take part in bound
//! verification. Quadratics are available for free runs and are marked
//! bound-exempt.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::vecops::{dot, norm};

/// One affine piece `a·x + b` of a max-affine function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub slope: Vec<f64>,
    pub intercept: f64,
}

impl AffinePiece {
    pub fn new(slope: Vec<f64>, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.slope, x) + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// `max_p (a_p·x + b_p)`.
    MaxAffine(Vec<AffinePiece>),
    /// `‖x - c‖₁`.
    AbsShift(Vec<f64>),
    /// `(w/2)‖x - c‖²`, bound-exempt.
    Quadratic { center: Vec<f64>, weight: f64 },
}

/// A convex function `ℝ^m → ℝ` with a deterministic subgradient oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexObjective {
    kind: Kind,
    dim: usize,
    subgradient_bound: f64,
}

/// Builds `f(x) = max_p (a_p·x + b_p)`.
///
/// The subgradient oracle returns the slope of the lowest-index maximizing
/// piece, and the subgradient bound is `max_p ‖a_p‖₂`.
pub fn make_max_affine(pieces: Vec<AffinePiece>) -> Result<ConvexObjective> {
    let first = pieces
        .first()
        .ok_or_else(|| Error::invalid("max-affine objective needs at least one piece"))?;
    let dim = first.slope.len();
    if dim == 0 {
        return Err(Error::invalid("objective dimension must be positive"));
    }
    for p in &pieces {
        check_dim(dim, p.slope.len())?;
        if !p.intercept.is_finite() || p.slope.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("max-affine pieces must be finite"));
        }
    }
    let subgradient_bound = pieces.iter().map(|p| norm(&p.slope)).fold(0.0, f64::max);
    Ok(ConvexObjective {
        kind: Kind::MaxAffine(pieces),
        dim,
        subgradient_bound,
    })
}

impl ConvexObjective {
    /// `‖x - shift‖₁`. At a kink the oracle picks 0 for that component.
    pub fn abs_shift(shift: Vec<f64>) -> Result<Self> {
        if shift.is_empty() {
            return Err(Error::invalid("objective dimension must be positive"));
        }
        if shift.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("shift must be finite"));
        }
        let dim = shift.len();
        Ok(Self {
            kind: Kind::AbsShift(shift),
            dim,
            subgradient_bound: (dim as f64).sqrt(),
        })
    }

    /// `(weight/2)‖x - center‖²`. Its gradient is unbounded, so the
    /// objective is excluded from bound verification.
    pub fn quadratic(center: Vec<f64>, weight: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::invalid("objective dimension must be positive"));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::invalid("quadratic weight must be positive and finite"));
        }
        let dim = center.len();
        Ok(Self {
            kind: Kind::Quadratic { center, weight },
            dim,
            subgradient_bound: f64::INFINITY,
        })
    }

    /// The identically zero function on `ℝ^m`.
    pub fn zero(dim: usize) -> Result<Self> {
        make_max_affine(vec![AffinePiece::new(vec![0.0; dim], 0.0)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subgradient_bound(&self) -> f64 {
        self.subgradient_bound
    }

    pub fn is_bound_exempt(&self) -> bool {
        matches!(self.kind, Kind::Quadratic { .. })
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.value_unchecked(x))
    }

    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::MaxAffine(pieces) => pieces
                .iter()
                .map(|p| p.eval(x))
                .fold(f64::NEG_INFINITY, f64::max),
            Kind::AbsShift(c) => x.iter().zip(c).fold(0.0, |acc, (xi, ci)| acc + (xi - ci).abs()),
            Kind::Quadratic { center, weight } => {
                let sq = x
                    .iter()
                    .zip(center)
                    .fold(0.0, |acc, (xi, ci)| acc + (xi - ci) * (xi - ci));
                0.5 * weight * sq
            }
        }
    }

    pub fn subgradient_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(self.subgradient_unchecked(x))
    }

    pub(crate) fn subgradient_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::MaxAffine(pieces) => {
                let mut best = 0;
                let mut best_val = pieces[0].eval(x);
                for (p, piece) in pieces.iter().enumerate().skip(1) {
                    let v = piece.eval(x);
                    if v > best_val {
                        best = p;
                        best_val = v;
                    }
                }
                pieces[best].slope.clone()
            }
            Kind::AbsShift(c) => x
                .iter()
                .zip(c)
                .map(|(xi, ci)| {
                    if xi > ci {
                        1.0
                    } else if xi < ci {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            Kind::Quadratic { center, weight } => {
                x.iter().zip(center).map(|(xi, ci)| weight * (xi - ci)).collect()
            }
        }
    }

    /// Slopes at `-∞` and `+∞` and the kinks of a one-dimensional objective.
    fn profile_1d(&self) -> Option<Profile1d> {
        match &self.kind {
            Kind::MaxAffine(pieces) => {
                let slopes: Vec<f64> = pieces.iter().map(|p| p.slope[0]).collect();
                let mut kinks = Vec::new();
                for (p, a) in pieces.iter().enumerate() {
                    for b in &pieces[p + 1..] {
                        let da = a.slope[0] - b.slope[0];
                        if da != 0.0 {
                            kinks.push((b.intercept - a.intercept) / da);
                        }
                    }
                }
                Some(Profile1d {
                    left_slope: slopes.iter().copied().fold(f64::INFINITY, f64::min),
                    right_slope: slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    kinks,
                })
            }
            Kind::AbsShift(c) => Some(Profile1d {
                left_slope: -1.0,
                right_slope: 1.0,
                kinks: vec![c[0]],
            }),
            Kind::Quadratic { .. } => None,
        }
    }

    fn is_constant(&self) -> bool {
        match &self.kind {
            Kind::MaxAffine(pieces) => pieces.iter().all(|p| p.slope.iter().all(|a| *a == 0.0)),
            _ => false,
        }
    }
}

struct Profile1d {
    left_slope: f64,
    right_slope: f64,
    kinks: Vec<f64>,
}

/// Closed-form description of the optimal set `X*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalSet {
    Point(Vec<f64>),
    /// Axis-aligned box; bounds may be infinite. An interval is the
    /// one-dimensional case.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl OptimalSet {
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        match self {
            OptimalSet::Point(p) => p.clone(),
            OptimalSet::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (lo, hi))| v.max(*lo).min(*hi))
                .collect(),
        }
    }

    pub fn distance(&self, y: &[f64]) -> f64 {
        match self {
            OptimalSet::Point(p) => crate::vecops::dist(y, p),
            OptimalSet::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .fold(0.0, |acc, (v, (lo, hi))| {
                    let d = if v < lo {
                        lo - v
                    } else if v > hi {
                        v - hi
                    } else {
                        0.0
                    };
                    acc + d * d
                })
                .sqrt(),
        }
    }
}

/// Optimal value `f*` together with the optimal set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimum {
    pub value: f64,
    pub set: OptimalSet,
}

/// The agents' objectives `f_1, …, f_n`, the shared bound `L`, and, when a
/// closed form is known, the optimum of `f = Σ f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSuite {
    objectives: Vec<ConvexObjective>,
    dim: usize,
    bound: f64,
    optimum: Option<Optimum>,
}

impl ObjectiveSuite {
    /// Builds a suite and derives its optimum where a closed form exists:
    /// all-quadratic suites, all-`abs_shift` suites, constant suites, and any
    /// one-dimensional piecewise-linear suite.
    pub fn new(objectives: Vec<ConvexObjective>) -> Result<Self> {
        let dim = objectives
            .first()
            .ok_or_else(|| Error::invalid("suite needs at least one objective"))?
            .dim();
        for o in &objectives {
            check_dim(dim, o.dim())?;
        }
        let bound = objectives
            .iter()
            .map(ConvexObjective::subgradient_bound)
            .fold(0.0, f64::max);
        let mut suite = Self {
            objectives,
            dim,
            bound,
            optimum: None,
        };
        suite.optimum = suite.derive_optimum();
        Ok(suite)
    }

    /// Drops the optimum oracle, as for a suite without a closed form.
    pub fn without_optimum(mut self) -> Self {
        self.optimum = None;
        self
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn objectives(&self) -> &[ConvexObjective] {
        &self.objectives
    }

    pub fn objective(&self, i: usize) -> &ConvexObjective {
        &self.objectives[i]
    }

    /// `L = max_i` of the per-objective subgradient bounds.
    pub fn subgradient_bound(&self) -> f64 {
        self.bound
    }

    pub fn is_bound_exempt(&self) -> bool {
        self.objectives.iter().any(ConvexObjective::is_bound_exempt)
    }

    pub fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }

    /// `f(x) = Σ_i f_i(x)`, summed in index order.
    pub fn eval_sum(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.eval_sum_unchecked(x))
    }

    pub(crate) fn eval_sum_unchecked(&self, x: &[f64]) -> f64 {
        self.objectives
            .iter()
            .fold(0.0, |acc, o| acc + o.value_unchecked(x))
    }

    pub fn optimal_value(&self) -> Result<f64> {
        self.require_optimum().map(|o| o.value)
    }

    /// Euclidean distance from `y` to `X*`.
    pub fn dist_to_optimum(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        Ok(self.require_optimum()?.set.distance(y))
    }

    fn require_optimum(&self) -> Result<&Optimum> {
        self.optimum
            .as_ref()
            .ok_or_else(|| Error::Unsupported("objective suite has no optimal-set oracle".into()))
    }

    fn derive_optimum(&self) -> Option<Optimum> {
        let m = self.dim;
        if self.objectives.iter().all(ConvexObjective::is_constant) {
            let set = OptimalSet::Box {
                lower: vec![f64::NEG_INFINITY; m],
                upper: vec![f64::INFINITY; m],
            };
            return Some(Optimum {
                value: self.eval_sum_unchecked(&vec![0.0; m]),
                set,
            });
        }
        if self.objectives.iter().all(|o| matches!(o.kind, Kind::Quadratic { .. })) {
            let mut num = vec![0.0; m];
            let mut den = 0.0;
            for o in &self.objectives {
                if let Kind::Quadratic { center, weight } = &o.kind {
                    for (acc, c) in num.iter_mut().zip(center) {
                        *acc += weight * c;
                    }
                    den += weight;
                }
            }
            let point: Vec<f64> = num.into_iter().map(|v| v / den).collect();
            return Some(Optimum {
                value: self.eval_sum_unchecked(&point),
                set: OptimalSet::Point(point),
            });
        }
        if self.objectives.iter().all(|o| matches!(o.kind, Kind::AbsShift(_))) {
            return Some(self.median_box());
        }
        if m == 1 && !self.is_bound_exempt() {
            return self.piecewise_linear_1d();
        }
        None
    }

    /// Separable `‖x - c_i‖₁` sums are minimized on the box of coordinate
    /// medians.
    fn median_box(&self) -> Optimum {
        let n = self.objectives.len();
        let mut lower = Vec::with_capacity(self.dim);
        let mut upper = Vec::with_capacity(self.dim);
        for c in 0..self.dim {
            let mut coords: Vec<f64> = self
                .objectives
                .iter()
                .map(|o| match &o.kind {
                    Kind::AbsShift(s) => s[c],
                    _ => unreachable!("median_box requires abs_shift objectives"),
                })
                .collect();
            coords.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                lower.push(coords[n / 2]);
                upper.push(coords[n / 2]);
            } else {
                lower.push(coords[n / 2 - 1]);
                upper.push(coords[n / 2]);
            }
        }
        let value = self.eval_sum_unchecked(&lower);
        let set = if lower == upper {
            OptimalSet::Point(lower)
        } else {
            OptimalSet::Box { lower, upper }
        };
        Optimum { value, set }
    }

    /// Exact minimization of a convex piecewise-linear `f: ℝ → ℝ` by
    /// evaluating every kink. Returns `None` when `f` is unbounded below.
    fn piecewise_linear_1d(&self) -> Option<Optimum> {
        let profiles: Vec<Profile1d> = self
            .objectives
            .iter()
            .map(ConvexObjective::profile_1d)
            .collect::<Option<_>>()?;
        let left: f64 = profiles.iter().map(|p| p.left_slope).sum();
        let right: f64 = profiles.iter().map(|p| p.right_slope).sum();
        if left > 0.0 || right < 0.0 {
            return None;
        }
        let mut candidates: Vec<f64> = profiles.iter().flat_map(|p| p.kinks.iter().copied()).collect();
        if candidates.is_empty() {
            candidates.push(0.0);
        }
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        let values: Vec<f64> = candidates
            .iter()
            .map(|t| self.eval_sum_unchecked(&[*t]))
            .collect();
        let best = values.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = 1e-12 * (1.0 + best.abs());
        let first = values.iter().position(|v| *v <= best + tol)?;
        let last = values.iter().rposition(|v| *v <= best + tol)?;
        let mut lo = candidates[first];
        let mut hi = candidates[last];
        if first == 0 && left == 0.0 {
            lo = f64::NEG_INFINITY;
        }
        if last == candidates.len() - 1 && right == 0.0 {
            hi = f64::INFINITY;
        }
        let value = values[first..=last].iter().copied().fold(f64::INFINITY, f64::min);
        let set = if lo == hi {
            OptimalSet::Point(vec![lo])
        } else {
            OptimalSet::Box {
                lower: vec![lo],
                upper: vec![hi],
            }
        };
        Some(Optimum { value, set })
    }
}

/// Tagged objective description used in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    MaxAffine { pieces: Vec<AffinePiece> },
    AbsShift { shift: Vec<f64> },
    Quadratic { center: Vec<f64>, weight: f64 },
    Zero { dim: usize },
}

impl ObjectiveSpec {
    pub fn build(&self) -> Result<ConvexObjective> {
        match self {
            ObjectiveSpec::MaxAffine { pieces } => make_max_affine(pieces.clone()),
            ObjectiveSpec::AbsShift { shift } => ConvexObjective::abs_shift(shift.clone()),
            ObjectiveSpec::Quadratic { center, weight } => {
                ConvexObjective::quadratic(center.clone(), *weight)
            }
            ObjectiveSpec::Zero { dim } => ConvexObjective::zero(*dim),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn abs() -> ConvexObjective {
        make_max_affine(vec![
            AffinePiece::new(vec![1.0], 0.0),
            AffinePiece::new(vec![-1.0], 0.0),
        ])
        .unwrap()
    }

    fn abs_at(c: f64) -> ConvexObjective {
        ConvexObjective::abs_shift(vec![c]).unwrap()
    }

    fn random_max_affine(rng: &mut ChaCha8Rng, m: usize, pieces: usize) -> ConvexObjective {
        make_max_affine(
            (0..pieces)
                .map(|_| {
                    AffinePiece::new(
                        (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn eval_sum_of_two_absolute_values() {
        let suite = ObjectiveSuite::new(vec![abs_at(0.0), abs_at(1.0)]).unwrap();
        assert_eq!(suite.eval_sum(&[0.5]).unwrap(), 1.0);
    }

    #[test]
    fn eval_sum_of_zero_functions() {
        let suite = ObjectiveSuite::new(vec![
            ConvexObjective::zero(2).unwrap(),
            ConvexObjective::zero(2).unwrap(),
        ])
        .unwrap();
        assert_eq!(suite.eval_sum(&[3.0, -7.0]).unwrap(), 0.0);
    }

    #[test]
    fn eval_sum_of_hand_evaluated_max_affines() {
        // f1 = max(x - y, 2y + 1), f2 = max(-x, 0.5x + y - 2), f3 = max(3, x + y)
        let f1 = make_max_affine(vec![
            AffinePiece::new(vec![1.0, -1.0], 0.0),
            AffinePiece::new(vec![0.0, 2.0], 1.0),
        ])
        .unwrap();
        let f2 = make_max_affine(vec![
            AffinePiece::new(vec![-1.0, 0.0], 0.0),
            AffinePiece::new(vec![0.5, 1.0], -2.0),
        ])
        .unwrap();
        let f3 = make_max_affine(vec![
            AffinePiece::new(vec![0.0, 0.0], 3.0),
            AffinePiece::new(vec![1.0, 1.0], 0.0),
        ])
        .unwrap();
        let suite = ObjectiveSuite::new(vec![f1, f2, f3]).unwrap();
        // at (2, 0.5): f1 = max(1.5, 2) = 2, f2 = max(-2, -0.5) = -0.5, f3 = max(3, 2.5) = 3
        assert_eq!(suite.eval_sum(&[2.0, 0.5]).unwrap(), 4.5);
    }

    #[test]
    fn eval_sum_rejects_wrong_dimension() {
        let suite = ObjectiveSuite::new(vec![abs()]).unwrap();
        assert_eq!(
            suite.eval_sum(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        );
    }

    #[test]
    fn abs_subgradients_follow_the_kink_rule() {
        let f = abs_at(0.0);
        assert_eq!(f.subgradient_at(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(f.subgradient_at(&[-2.0]).unwrap(), vec![-1.0]);
        assert_eq!(f.subgradient_at(&[5.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn max_affine_picks_lowest_index_active_piece() {
        // max(x, 2x - 1) at x = 1: both pieces equal 1, the first wins.
        let f = make_max_affine(vec![
            AffinePiece::new(vec![1.0], 0.0),
            AffinePiece::new(vec![2.0], -1.0),
        ])
        .unwrap();
        assert_eq!(f.subgradient_at(&[1.0]).unwrap(), vec![1.0]);
        // Strictly right of the kink only the second piece is active.
        assert_eq!(f.subgradient_at(&[1.5]).unwrap(), vec![2.0]);
    }

    #[test]
    fn max_affine_second_piece_active_at_one() {
        // max(-x, 2x - 1): at x = 1 the values are -1 and 1, so the slope is 2.
        let f = make_max_affine(vec![
            AffinePiece::new(vec![-1.0], 0.0),
            AffinePiece::new(vec![2.0], -1.0),
        ])
        .unwrap();
        let g = f.subgradient_at(&[1.0]).unwrap();
        assert_eq!(g, vec![2.0]);
        for i in -100..=100 {
            let z = i as f64 * 0.1;
            assert!(f.value(&[1.0]).unwrap() + g[0] * (z - 1.0) <= f.value(&[z]).unwrap() + 1e-9);
        }
    }

    #[test]
    fn make_max_affine_absolute_value() {
        let f = abs();
        assert_eq!(f.subgradient_bound(), 1.0);
        assert_eq!(f.value(&[-3.0]).unwrap(), 3.0);
    }

    #[test]
    fn make_max_affine_constant() {
        let f = make_max_affine(vec![AffinePiece::new(vec![0.0], 5.0)]).unwrap();
        assert_eq!(f.value(&[123.0]).unwrap(), 5.0);
        assert_eq!(f.subgradient_at(&[-4.0]).unwrap(), vec![0.0]);
        assert_eq!(f.subgradient_bound(), 0.0);
    }

    #[test]
    fn make_max_affine_three_pieces_at_two() {
        let f = make_max_affine(vec![
            AffinePiece::new(vec![1.0], 0.0),
            AffinePiece::new(vec![-1.0], 0.0),
            AffinePiece::new(vec![2.0], -3.0),
        ])
        .unwrap();
        // pieces at 2: 2, -2, 1
        assert_eq!(f.value(&[2.0]).unwrap(), 2.0);
        assert_eq!(f.subgradient_at(&[2.0]).unwrap(), vec![1.0]);
        assert_eq!(f.subgradient_bound(), 2.0);
    }

    #[test]
    fn make_max_affine_rejects_empty_and_ragged() {
        assert!(matches!(make_max_affine(vec![]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            make_max_affine(vec![
                AffinePiece::new(vec![1.0], 0.0),
                AffinePiece::new(vec![1.0, 2.0], 0.0)
            ]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dist_to_point_optimum() {
        let suite = ObjectiveSuite::new(vec![abs(), abs()]).unwrap();
        assert_eq!(suite.optimal_value().unwrap(), 0.0);
        assert_eq!(suite.dist_to_optimum(&[3.0]).unwrap(), 3.0);
    }

    /// Brute-force minimizer on a fine grid, independent of the closed forms.
    fn grid_argmin_interval(suite: &ObjectiveSuite, lo: f64, hi: f64, steps: usize) -> (f64, f64, f64) {
        let pts: Vec<f64> = (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect();
        let vals: Vec<f64> = pts.iter().map(|t| suite.eval_sum(&[*t]).unwrap()).collect();
        let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let inside: Vec<f64> = pts
            .iter()
            .zip(&vals)
            .filter(|(_, v)| **v <= best + 1e-9)
            .map(|(t, _)| *t)
            .collect();
        (best, inside[0], *inside.last().unwrap())
    }

    #[test]
    fn dist_to_interval_optimum() {
        for suite in [
            ObjectiveSuite::new(vec![abs_at(0.0), abs_at(1.0)]).unwrap(),
            // same function, built as max-affine pieces, uses the kink solver
            ObjectiveSuite::new(vec![
                abs(),
                make_max_affine(vec![
                    AffinePiece::new(vec![1.0], -1.0),
                    AffinePiece::new(vec![-1.0], 1.0),
                ])
                .unwrap(),
            ])
            .unwrap(),
        ] {
            let (best, lo, hi) = grid_argmin_interval(&suite, -3.0, 3.0, 6000);
            assert!((best - 1.0).abs() < 1e-12);
            assert!((lo - 0.0).abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
            assert_eq!(suite.optimal_value().unwrap(), 1.0);
            assert_eq!(suite.dist_to_optimum(&[0.5]).unwrap(), 0.0);
            assert_eq!(suite.dist_to_optimum(&[2.0]).unwrap(), 1.0);
            assert_eq!(suite.dist_to_optimum(&[-0.25]).unwrap(), 0.25);
        }
    }

    #[test]
    fn kink_solver_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..40 {
            let objs: Vec<_> = (0..3).map(|_| random_max_affine(&mut rng, 1, 4)).collect();
            let suite = ObjectiveSuite::new(objs).unwrap();
            let Some(opt) = suite.optimum() else { continue };
            let OptimalSet::Box { lower, upper } = &opt.set else {
                let OptimalSet::Point(p) = &opt.set else { unreachable!() };
                if p[0].abs() > 50.0 {
                    continue;
                }
                let (best, _, _) = grid_argmin_interval(&suite, p[0] - 1.0, p[0] + 1.0, 20000);
                assert!(opt.value <= best + 1e-12);
                assert!(best - opt.value < 1e-3);
                checked += 1;
                continue;
            };
            if lower[0].is_finite() && upper[0].is_finite() && upper[0] - lower[0] < 100.0 {
                let (best, lo, hi) = grid_argmin_interval(&suite, lower[0] - 1.0, upper[0] + 1.0, 20000);
                assert!(opt.value <= best + 1e-12);
                assert!(best - opt.value < 1e-3);
                let step = (upper[0] - lower[0] + 2.0) / 20000.0;
                assert!(lo >= lower[0] - step && hi <= upper[0] + step);
                checked += 1;
            }
        }
        assert!(checked > 5);
    }

    #[test]
    fn unbounded_suite_has_no_optimum() {
        let suite = ObjectiveSuite::new(vec![
            make_max_affine(vec![AffinePiece::new(vec![1.0], 0.0)]).unwrap(),
        ])
        .unwrap();
        assert!(suite.optimum().is_none());
        assert!(matches!(suite.dist_to_optimum(&[0.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn suite_without_oracle_is_unsupported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let suite = ObjectiveSuite::new(vec![random_max_affine(&mut rng, 2, 3)]).unwrap();
        assert!(matches!(suite.optimal_value(), Err(Error::Unsupported(_))));
    }

    #[test]
    fn median_box_for_abs_shifts() {
        let suite = ObjectiveSuite::new(vec![
            ConvexObjective::abs_shift(vec![0.0, 1.0]).unwrap(),
            ConvexObjective::abs_shift(vec![2.0, -1.0]).unwrap(),
        ])
        .unwrap();
        let opt = suite.optimum().unwrap();
        assert_eq!(
            opt.set,
            OptimalSet::Box {
                lower: vec![0.0, -1.0],
                upper: vec![2.0, 1.0]
            }
        );
        assert_eq!(opt.value, 4.0);
        assert_eq!(suite.dist_to_optimum(&[3.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn zero_suite_is_optimal_everywhere() {
        let suite = ObjectiveSuite::new(vec![ConvexObjective::zero(3).unwrap()]).unwrap();
        assert_eq!(suite.dist_to_optimum(&[1e6, -2.0, 0.5]).unwrap(), 0.0);
        assert_eq!(suite.optimal_value().unwrap(), 0.0);
    }

    #[test]
    fn quadratic_suite_is_bound_exempt() {
        let suite = ObjectiveSuite::new(vec![
            ConvexObjective::quadratic(vec![0.0], 1.0).unwrap(),
            ConvexObjective::quadratic(vec![3.0], 2.0).unwrap(),
        ])
        .unwrap();
        assert!(suite.is_bound_exempt());
        assert!(suite.subgradient_bound().is_infinite());
        assert_eq!(suite.optimum().unwrap().set, OptimalSet::Point(vec![2.0]));
    }

    fn builtin_objectives(m: usize, seed: u64) -> Vec<ConvexObjective> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        vec![
            random_max_affine(&mut rng, m, 5),
            ConvexObjective::abs_shift((0..m).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap(),
            ConvexObjective::zero(m).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn subgradient_inequality_holds(seed in any::<u64>(), m in 1usize..4,
                                        x in prop::collection::vec(-10.0f64..10.0, 3),
                                        z in prop::collection::vec(-10.0f64..10.0, 3)) {
            let x = &x[..m];
            let z = &z[..m];
            for f in builtin_objectives(m, seed) {
                let g = f.subgradient_at(x).unwrap();
                let lhs = f.value(x).unwrap() + dot(&g, z) - dot(&g, x);
                prop_assert!(lhs <= f.value(z).unwrap() + 1e-9);
                prop_assert!(norm(&g) <= f.subgradient_bound() + 1e-12);
            }
        }

        #[test]
        fn eval_sum_is_the_ordered_sum(seed in any::<u64>(), x in -10.0f64..10.0) {
            let objs = builtin_objectives(1, seed);
            let expected = objs.iter().fold(0.0, |acc, f| acc + f.value(&[x]).unwrap());
            let suite = ObjectiveSuite::new(objs).unwrap();
            prop_assert_eq!(suite.eval_sum(&[x]).unwrap().to_bits(), expected.to_bits());
        }

        #[test]
        fn optimum_lower_bounds_samples(seed in any::<u64>(), y in -20.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut objs: Vec<_> = (0..3).map(|_| random_max_affine(&mut rng, 1, 3)).collect();
            objs.push(abs_at(rng.gen_range(-2.0..2.0)));
            let suite = ObjectiveSuite::new(objs).unwrap();
            if let Some(opt) = suite.optimum() {
                let fy = suite.eval_sum(&[y]).unwrap();
                prop_assert!(opt.value <= fy + 1e-9);
                let proj = opt.set.project(&[y]);
                if proj[0].is_finite() {
                    prop_assert!((suite.eval_sum(&proj).unwrap() - opt.value).abs() <= 1e-9);
                }
                if suite.dist_to_optimum(&[y]).unwrap() == 0.0 {
                    prop_assert!((fy - opt.value).abs() <= 1e-9);
                }
            }
        }
    }
}
