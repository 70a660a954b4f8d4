//! Weight matrices, time-varying schedules and their transition products.
//!
//! A schedule is a deterministic map `k ↦ A(k)` with two declared
//! constants: the floor `eta` on positive weights and the connectivity
//! window `B`. Both enter the convergence bounds, so they are declared
//! inputs and the validators check the matrices against them.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Absolute tolerance for row/column sums and the eta floor.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Dense `n × n` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix size must be positive"));
        }
        check_dim(n * n, entries.len())?;
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::invalid(format!(
                    "matrix is not square: {n} rows but a row of length {}",
                    r.len()
                )));
            }
        }
        Self::new(n, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// `self · rhs`, accumulating each entry in ascending inner index.
    pub fn mul(&self, rhs: &WeightMatrix) -> WeightMatrix {
        assert_eq!(self.n, rhs.n, "matrix sizes differ");
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += self.get(i, l) * rhs.get(l, j);
                }
                entries[i * n + j] = acc;
            }
        }
        WeightMatrix { n, entries }
    }

    /// `self · z`.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, z.len())?;
        Ok((0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(z)
                    .fold(0.0, |acc, (a, v)| acc + a * v)
            })
            .collect())
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Directed edges `(j, i)` with `a_ij > 0`, self-loops included, as an
    /// adjacency table indexed `[from][to]`.
    fn edge_table(&self) -> Vec<Vec<bool>> {
        let n = self.n;
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                if self.get(i, j) > 0.0 {
                    adj[j][i] = true;
                }
            }
        }
        adj
    }
}

/// Simple undirected graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Edges are stored as `(min, max)` pairs, sorted and deduplicated.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        let mut out = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            if a == b {
                return Err(Error::invalid(format!("self-edge on node {a}")));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self { n, edges: out })
    }

    /// Builds a graph from 1-based `[i, j]` node pairs.
    pub fn from_one_based(n: usize, edges: &[[usize; 2]]) -> Result<Self> {
        let mut zero_based = Vec::with_capacity(edges.len());
        for [a, b] in edges {
            if *a == 0 || *b == 0 {
                return Err(Error::invalid("node ids are 1-based"));
            }
            zero_based.push((a - 1, b - 1));
        }
        Self::new(n, zero_based)
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self { n, edges }
    }

    pub fn path(n: usize) -> Self {
        Self {
            n,
            edges: (1..n).map(|i| (i - 1, i)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }
}

/// Metropolis weights: `a_ij = 1/(1 + max(deg_i, deg_j))` on edges and the
/// remaining mass on the diagonal. The result is symmetric, hence doubly
/// stochastic, and every positive entry is at least `1/n`.
pub fn metropolis_from_graph(graph: &Graph) -> WeightMatrix {
    let n = graph.n;
    let deg = graph.degrees();
    let mut m = WeightMatrix {
        n,
        entries: vec![0.0; n * n],
    };
    for &(a, b) in &graph.edges {
        let w = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        m.entries[a * n + b] = w;
        m.entries[b * n + a] = w;
    }
    for i in 0..n {
        let off = (0..n)
            .filter(|&j| j != i)
            .fold(0.0, |acc, j| acc + m.entries[i * n + j]);
        m.entries[i * n + i] = 1.0 - off;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum WeightViolation {
    NegativeEntry { row: usize, col: usize, value: f64 },
    RowSum { row: usize, sum: f64 },
    ColumnSum { col: usize, sum: f64 },
    NonPositiveDiagonal { index: usize, value: f64 },
    BelowEtaFloor { row: usize, col: usize, value: f64 },
}

impl fmt::Display for WeightViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // indices shown 1-based, as in configs
        match self {
            WeightViolation::NegativeEntry { row, col, value } => {
                write!(f, "negative entry a[{},{}] = {value}", row + 1, col + 1)
            }
            WeightViolation::RowSum { row, sum } => write!(f, "row {} sums to {sum}", row + 1),
            WeightViolation::ColumnSum { col, sum } => {
                write!(f, "column {} sums to {sum}", col + 1)
            }
            WeightViolation::NonPositiveDiagonal { index, value } => {
                write!(f, "positive diagonal violated: a[{0},{0}] = {value}", index + 1)
            }
            WeightViolation::BelowEtaFloor { row, col, value } => {
                write!(f, "entry a[{},{}] = {value} is below the eta floor", row + 1, col + 1)
            }
        }
    }
}

/// Violated clauses of the weight-matrix assumption; empty when valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WeightReport {
    pub violations: Vec<WeightViolation>,
}

impl WeightReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks double stochasticity, a positive diagonal, and that every
/// positive entry is at least `eta`.
pub fn validate_assumption1(m: &WeightMatrix, eta: f64) -> WeightReport {
    let n = m.n;
    let mut violations = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = m.get(i, j);
            if v < 0.0 {
                violations.push(WeightViolation::NegativeEntry { row: i, col: j, value: v });
            }
        }
    }
    for i in 0..n {
        let sum = m.row(i).iter().sum::<f64>();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            violations.push(WeightViolation::RowSum { row: i, sum });
        }
    }
    for j in 0..n {
        let sum = (0..n).fold(0.0, |acc, i| acc + m.get(i, j));
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            violations.push(WeightViolation::ColumnSum { col: j, sum });
        }
    }
    for i in 0..n {
        let v = m.get(i, i);
        if v <= 0.0 {
            violations.push(WeightViolation::NonPositiveDiagonal { index: i, value: v });
        }
    }
    for i in 0..n {
        for j in 0..n {
            let v = m.get(i, j);
            if v > 0.0 && v < eta - STOCHASTIC_TOL {
                violations.push(WeightViolation::BelowEtaFloor { row: i, col: j, value: v });
            }
        }
    }
    WeightReport { violations }
}

/// Directed reachability from every node over an `[from][to]` table.
fn strongly_connected(adj: &[Vec<bool>]) -> bool {
    let n = adj.len();
    (0..n).all(|start| {
        let mut seen = vec![false; n];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for (v, &edge) in adj[u].iter().enumerate() {
                if edge && !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == n
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Static(WeightMatrix),
    Periodic(Vec<WeightMatrix>),
    /// Erdős–Rényi Metropolis snapshots, with `backbone` at every multiple
    /// of the window.
    Random {
        p: f64,
        seed: u64,
        backbone: WeightMatrix,
    },
}

/// A deterministic sequence of weight matrices `A(0), A(1), …` together with
/// its declared `eta` and window `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    n: usize,
    eta: f64,
    window: usize,
    source: Source,
}

impl WeightSchedule {
    /// A schedule repeating `matrices` round-robin. Only shapes and the
    /// declared constants are checked; use the validators for the
    /// assumptions themselves.
    pub fn periodic(matrices: Vec<WeightMatrix>, eta: f64, window: usize) -> Result<Self> {
        let n = matrices
            .first()
            .ok_or_else(|| Error::invalid("schedule needs at least one matrix"))?
            .n();
        for m in &matrices {
            check_dim(n, m.n())?;
        }
        check_declared(eta, window)?;
        let source = if matrices.len() == 1 {
            Source::Static(matrices.into_iter().next().unwrap())
        } else {
            Source::Periodic(matrices)
        };
        Ok(Self { n, eta, window, source })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Re-declares the window without validation.
    pub fn with_window(mut self, window: usize) -> Result<Self> {
        check_declared(self.eta, window)?;
        self.window = window;
        Ok(self)
    }

    /// Re-declares eta without validation.
    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        check_declared(eta, self.window)?;
        self.eta = eta;
        Ok(self)
    }

    /// `A(k)`.
    pub fn matrix(&self, k: usize) -> WeightMatrix {
        match &self.source {
            Source::Static(m) => m.clone(),
            Source::Periodic(ms) => ms[k % ms.len()].clone(),
            Source::Random { p, seed, backbone } => {
                if k % self.window == 0 {
                    return backbone.clone();
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(k as u64);
                let mut edges = Vec::new();
                for i in 0..self.n {
                    for j in i + 1..self.n {
                        if rng.gen_bool(*p) {
                            edges.push((i, j));
                        }
                    }
                }
                metropolis_from_graph(&Graph { n: self.n, edges })
            }
        }
    }

    /// For periodic sources with period `P`, window starts repeat modulo
    /// `P` after `P` windows, so checking windows `0..P` settles the
    /// connectivity assumption for all `k`.
    fn period(&self) -> Option<usize> {
        match &self.source {
            Source::Static(_) => Some(1),
            Source::Periodic(ms) => Some(ms.len()),
            Source::Random { .. } => None,
        }
    }

    fn window_connected(&self, w: usize) -> bool {
        let mut adj = vec![vec![false; self.n]; self.n];
        for k in w * self.window..(w + 1) * self.window {
            for (from, row) in self.matrix(k).edge_table().into_iter().enumerate() {
                for (to, e) in row.into_iter().enumerate() {
                    adj[from][to] |= e;
                }
            }
        }
        strongly_connected(&adj)
    }
}

fn check_declared(eta: f64, window: usize) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    if window == 0 {
        return Err(Error::invalid("window B must be at least 1"));
    }
    Ok(())
}

/// Schedule description as it appears in experiment configs. Node ids are
/// 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Metropolis weights on one fixed graph.
    Static {
        edges: Vec<[usize; 2]>,
        #[serde(default)]
        window: Option<usize>,
        #[serde(default)]
        eta: Option<f64>,
    },
    /// Metropolis weights on the complete graph.
    Complete {
        #[serde(default)]
        window: Option<usize>,
        #[serde(default)]
        eta: Option<f64>,
    },
    /// Metropolis weights on a list of graphs applied round-robin.
    Cycle {
        graphs: Vec<Vec<[usize; 2]>>,
        #[serde(default)]
        window: Option<usize>,
        #[serde(default)]
        eta: Option<f64>,
    },
    /// Random `G(n, p)` snapshots with a path graph at every `window`-th step.
    RandomConnected {
        p: f64,
        window: usize,
        #[serde(default)]
        eta: Option<f64>,
    },
    /// Explicit matrices applied round-robin.
    Explicit {
        matrices: Vec<Vec<Vec<f64>>>,
        eta: f64,
        window: usize,
    },
}

impl ScheduleSpec {
    pub fn window(&self) -> Option<usize> {
        match self {
            ScheduleSpec::Static { window, .. }
            | ScheduleSpec::Complete { window, .. }
            | ScheduleSpec::Cycle { window, .. } => *window,
            ScheduleSpec::RandomConnected { window, .. } | ScheduleSpec::Explicit { window, .. } => {
                Some(*window)
            }
        }
    }

    pub fn set_window(&mut self, b: usize) {
        match self {
            ScheduleSpec::Static { window, .. }
            | ScheduleSpec::Complete { window, .. }
            | ScheduleSpec::Cycle { window, .. } => *window = Some(b),
            ScheduleSpec::RandomConnected { window, .. } | ScheduleSpec::Explicit { window, .. } => {
                *window = b
            }
        }
    }

    pub fn set_eta(&mut self, value: f64) {
        match self {
            ScheduleSpec::Static { eta, .. }
            | ScheduleSpec::Complete { eta, .. }
            | ScheduleSpec::Cycle { eta, .. }
            | ScheduleSpec::RandomConnected { eta, .. } => *eta = Some(value),
            ScheduleSpec::Explicit { eta, .. } => *eta = value,
        }
    }
}

/// Builds the schedule described by `spec` on `n` agents.
///
/// Metropolis-based schedules declare `eta = 1/n` unless overridden. A
/// declared window that cannot guarantee connectivity of every window is
/// rejected; for round-robin sources this check is exact over all `k`.
pub fn make_schedule(spec: &ScheduleSpec, n: usize, seed: u64) -> Result<WeightSchedule> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let default_eta = 1.0 / n as f64;
    let schedule = match spec {
        ScheduleSpec::Static { edges, window, eta } => {
            let g = Graph::from_one_based(n, edges)?;
            WeightSchedule::periodic(
                vec![metropolis_from_graph(&g)],
                eta.unwrap_or(default_eta),
                window.unwrap_or(1),
            )?
        }
        ScheduleSpec::Complete { window, eta } => WeightSchedule::periodic(
            vec![metropolis_from_graph(&Graph::complete(n))],
            eta.unwrap_or(default_eta),
            window.unwrap_or(1),
        )?,
        ScheduleSpec::Cycle { graphs, window, eta } => {
            if graphs.is_empty() {
                return Err(Error::invalid("cycle schedule needs at least one graph"));
            }
            let graphs: Vec<Graph> = graphs
                .iter()
                .map(|e| Graph::from_one_based(n, e))
                .collect::<Result<_>>()?;
            WeightSchedule::periodic(
                graphs.iter().map(metropolis_from_graph).collect(),
                eta.unwrap_or(default_eta),
                window.unwrap_or(graphs.len()),
            )?
        }
        ScheduleSpec::RandomConnected { p, window, eta } => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::invalid(format!("edge probability p must lie in [0, 1], got {p}")));
            }
            let eta = eta.unwrap_or(default_eta);
            check_declared(eta, *window)?;
            // the path backbone at every window start keeps each window connected
            WeightSchedule {
                n,
                eta,
                window: *window,
                source: Source::Random {
                    p: *p,
                    seed,
                    backbone: metropolis_from_graph(&Graph::path(n)),
                },
            }
        }
        ScheduleSpec::Explicit { matrices, eta, window } => {
            let ms: Vec<WeightMatrix> = matrices
                .iter()
                .map(|rows| WeightMatrix::from_rows(rows))
                .collect::<Result<_>>()?;
            if ms[0].n() != n {
                return Err(Error::invalid(format!(
                    "explicit matrices are {0}x{0} but n = {n}",
                    ms[0].n()
                )));
            }
            WeightSchedule::periodic(ms, *eta, *window)?
        }
    };
    if let Some(period) = schedule.period() {
        if let Some(w) = (0..period).find(|&w| !schedule.window_connected(w)) {
            return Err(Error::invalid(format!(
                "declared window B = {} does not guarantee connectivity (window {w} is not strongly connected)",
                schedule.window
            )));
        }
    }
    Ok(schedule)
}

/// Per-window outcome of the connectivity check.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConnectivityReport {
    pub windows_checked: usize,
    /// Indices `w` of windows `[wB, (w+1)B - 1]` whose union graph is not
    /// strongly connected.
    pub failing_windows: Vec<usize>,
}

impl ConnectivityReport {
    pub fn is_valid(&self) -> bool {
        self.failing_windows.is_empty()
    }
}

/// Checks strong connectivity of the union graph of every complete window
/// inside `A(0), …, A(horizon - 1)`.
pub fn validate_assumption2(schedule: &WeightSchedule, horizon: usize) -> Result<ConnectivityReport> {
    if horizon < schedule.window {
        return Err(Error::invalid(format!(
            "horizon {horizon} is shorter than the window B = {}",
            schedule.window
        )));
    }
    let windows = horizon / schedule.window;
    Ok(ConnectivityReport {
        windows_checked: windows,
        failing_windows: (0..windows).filter(|&w| !schedule.window_connected(w)).collect(),
    })
}

/// Weight-assumption reports for every `A(k)`, `k < horizon`, that fails.
pub fn validate_schedule_weights(schedule: &WeightSchedule, horizon: usize) -> Vec<(usize, WeightReport)> {
    (0..horizon)
        .filter_map(|k| {
            let r = validate_assumption1(&schedule.matrix(k), schedule.eta);
            (!r.is_valid()).then_some((k, r))
        })
        .collect()
}

/// `Φ(k, s) = A(k) A(k-1) ⋯ A(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub matrix: WeightMatrix,
    pub s: usize,
    pub k: usize,
}

/// Computes `Φ(k, s)` by left-multiplying `A(s+1), …, A(k)` onto `A(s)`.
pub fn transition_matrix(schedule: &WeightSchedule, k: usize, s: usize) -> Result<TransitionMatrix> {
    if k < s {
        return Err(Error::invalid(format!("transition matrix needs k >= s, got k = {k}, s = {s}")));
    }
    let mut phi = schedule.matrix(s);
    for r in s + 1..=k {
        phi = schedule.matrix(r).mul(&phi);
    }
    Ok(TransitionMatrix { matrix: phi, s, k })
}

/// `(1 - eta/(4n²))^(⌈(k-s+1)/B⌉ - 2)`, the entrywise bound on
/// `|[Φ(k,s)]_ij - 1/n|`. Exponents `<= 0` give a vacuous bound `>= 1`.
///
/// Panics if `k < s`.
pub fn corollary1_bound(n: usize, eta: f64, window: usize, k: usize, s: usize) -> f64 {
    assert!(k >= s, "corollary1_bound needs k >= s");
    let beta = 1.0 - eta / (4.0 * (n * n) as f64);
    beta.powi(window_exponent(window, k, s))
}

/// `⌈(k-s+1)/B⌉ - 2`.
pub(crate) fn window_exponent(window: usize, k: usize, s: usize) -> i32 {
    ((k - s + 1).div_ceil(window) as i64 - 2) as i32
}
