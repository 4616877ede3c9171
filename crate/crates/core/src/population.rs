//! Data models, parameter priors, and per-user parameter sampling.

use std::fmt;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Largest supported alphabet; states are stored as `u8`.
pub const MAX_STATES: usize = 256;

/// Edge structure shared by every user of a Markov model.
///
/// Edges are kept sorted lexicographically. Construction checks that every
/// state has an outgoing edge and that the graph is strongly connected and
/// aperiodic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkovStructure {
    r: usize,
    edges: Vec<(usize, usize)>,
    #[serde(skip)]
    out: Vec<Vec<usize>>,
}

impl MarkovStructure {
    pub fn new(r: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        ensure!((2..=MAX_STATES).contains(&r), Config, "markov model needs 2 <= r <= {MAX_STATES}, got {r}");
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        for &(i, j) in &edges {
            ensure!(i < r && j < r, Config, "edge ({i}, {j}) references a state outside 0..{r}");
        }
        edges.sort_unstable();
        edges.dedup();
        let mut out = vec![Vec::new(); r];
        for &(i, j) in &edges {
            out[i].push(j);
        }
        if let Some(i) = out.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("state {i} has no outgoing edge")));
        }
        let s = MarkovStructure { r, edges, out };
        ensure!(s.strongly_connected(), Config, "edge graph is not strongly connected (chain not irreducible)");
        let period = s.period();
        ensure!(period == 1, Config, "edge graph has period {period} (chain not aperiodic)");
        Ok(s)
    }

    /// All r² edges, including self-loops.
    pub fn complete(r: usize) -> Result<Self> {
        Self::new(r, (0..r).flat_map(|i| (0..r).map(move |j| (i, j))))
    }

    fn rebuild(&mut self) {
        let mut out = vec![Vec::new(); self.r];
        for &(i, j) in &self.edges {
            out[i].push(j);
        }
        self.out = out;
    }

    pub fn num_states(&self) -> usize {
        self.r
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Destinations reachable in one step from `state`, ascending.
    pub fn successors(&self, state: usize) -> &[usize] {
        &self.out[state]
    }

    /// Edges carried by the free-parameter vector: for every state, all
    /// outgoing edges except the one with the highest destination.
    pub fn free_edges(&self) -> Vec<(usize, usize)> {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, dest)| dest[..dest.len() - 1].iter().map(move |&j| (i, j)))
            .collect()
    }

    /// |E| - r.
    pub fn free_dim(&self) -> usize {
        self.edges.len() - self.r
    }

    fn reach(&self, reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.r];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(a, b) in &self.edges {
                let (from, to) = if reverse { (b, a) } else { (a, b) };
                if from == u && !seen[to] {
                    seen[to] = true;
                    stack.push(to);
                }
            }
        }
        seen
    }

    fn strongly_connected(&self) -> bool {
        self.reach(false).iter().all(|&x| x) && self.reach(true).iter().all(|&x| x)
    }

    /// gcd of cycle lengths, via BFS levels: gcd over edges of level(u) + 1 - level(v).
    fn period(&self) -> usize {
        let mut level = vec![usize::MAX; self.r];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.out[u] {
                if level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        self.edges.iter().fold(0usize, |g, &(u, v)| {
            let diff = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
            gcd(g, diff)
        })
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The data model every user's traces follow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    TwoState,
    RState { r: usize },
    Markov(MarkovStructure),
}

impl ModelSpec {
    pub fn r_state(r: usize) -> Result<Self> {
        ensure!((2..=MAX_STATES).contains(&r), Config, "r-state model needs 2 <= r <= {MAX_STATES}, got {r}");
        Ok(ModelSpec::RState { r })
    }

    pub fn markov(r: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Ok(ModelSpec::Markov(MarkovStructure::new(r, edges)?))
    }

    pub fn num_states(&self) -> usize {
        match self {
            ModelSpec::TwoState => 2,
            ModelSpec::RState { r } => *r,
            ModelSpec::Markov(s) => s.r,
        }
    }

    /// Length of the feature (and free-parameter) vector: 1, r-1 or |E|-r.
    pub fn feature_dim(&self) -> usize {
        match self {
            ModelSpec::TwoState => 1,
            ModelSpec::RState { r } => r - 1,
            ModelSpec::Markov(s) => s.free_dim(),
        }
    }

    pub fn is_markov(&self) -> bool {
        matches!(self, ModelSpec::Markov(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::TwoState => "two-state",
            ModelSpec::RState { .. } => "r-state",
            ModelSpec::Markov(_) => "markov",
        }
    }

    /// Short label used in result tables, e.g. `r-state(3)`.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::TwoState => "two-state".into(),
            ModelSpec::RState { r } => format!("r-state({r})"),
            ModelSpec::Markov(s) => format!("markov({},{})", s.r, s.edges.len()),
        }
    }

    /// Restores derived fields after deserialization.
    pub fn normalized(mut self) -> Self {
        if let ModelSpec::Markov(s) = &mut self {
            s.rebuild();
        }
        self
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PriorDensity {
    /// Lebesgue-uniform on the model's parameter region.
    Uniform,
    /// Two-state only: uniform on (low, high) within (0, 1).
    TruncatedUniform { low: f64, high: f64 },
}

/// Density f_P over user parameters plus its recorded bounds delta1, delta2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub density: PriorDensity,
    bounds: Option<(f64, f64)>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::uniform()
    }
}

impl PriorSpec {
    pub fn uniform() -> Self {
        PriorSpec {
            density: PriorDensity::Uniform,
            bounds: None,
        }
    }

    pub fn truncated_uniform(low: f64, high: f64) -> Self {
        PriorSpec {
            density: PriorDensity::TruncatedUniform { low, high },
            bounds: None,
        }
    }

    /// Overrides the recorded density bounds.
    pub fn with_bounds(mut self, delta1: f64, delta2: f64) -> Self {
        self.bounds = Some((delta1, delta2));
        self
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.density, PriorDensity::Uniform)
    }

    /// The (constant) density value on the support.
    pub fn density_value(&self, spec: &ModelSpec) -> f64 {
        match self.density {
            PriorDensity::TruncatedUniform { low, high } => 1.0 / (high - low),
            PriorDensity::Uniform => match spec {
                ModelSpec::TwoState => 1.0,
                // (r-1)! on the open simplex in r-1 free coordinates.
                ModelSpec::RState { r } => factorial(r - 1),
                ModelSpec::Markov(s) => s.out.iter().map(|d| factorial(d.len() - 1)).product(),
            },
        }
    }

    /// (delta1, delta2); defaults to the exact density constant on both sides.
    pub fn bounds(&self, spec: &ModelSpec) -> (f64, f64) {
        self.bounds.unwrap_or_else(|| {
            let c = self.density_value(spec);
            (c, c)
        })
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if let PriorDensity::TruncatedUniform { low, high } = self.density {
            ensure!(
                matches!(spec, ModelSpec::TwoState),
                Config,
                "truncated-uniform prior is only supported for the two-state model"
            );
            ensure!(
                low.is_finite() && high.is_finite() && 0.0 <= low && low < high && high <= 1.0,
                Config,
                "truncated-uniform prior needs 0 <= low < high <= 1, got ({low}, {high})"
            );
        }
        let (d1, d2) = self.bounds(spec);
        let c = self.density_value(spec);
        ensure!(
            d1 > 0.0 && d2.is_finite() && d1 <= c && c <= d2,
            Config,
            "prior bounds must satisfy 0 < delta1 <= f_P = {c} <= delta2 < inf, got ({d1}, {d2})"
        );
        Ok(())
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// A user's latent generating distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UserParams {
    /// Probability of emitting a 1.
    TwoState { p: f64 },
    /// Probability of each of the r symbols.
    RState { probs: Vec<f64> },
    /// Row-stochastic transition matrix and its free-parameter vector.
    Markov { matrix: Vec<Vec<f64>>, free: Vec<f64> },
}

impl UserParams {
    /// The parameter vector in feature coordinates: `[p]`, `probs[1..]`, or
    /// the Markov free vector.
    pub fn free_vector(&self) -> Vec<f64> {
        match self {
            UserParams::TwoState { p } => vec![*p],
            UserParams::RState { probs } => probs[1..].to_vec(),
            UserParams::Markov { free, .. } => free.clone(),
        }
    }

    /// Per-symbol probabilities for i.i.d. models.
    pub fn symbol_probs(&self) -> Option<Vec<f64>> {
        match self {
            UserParams::TwoState { p } => Some(vec![1.0 - p, *p]),
            UserParams::RState { probs } => Some(probs.clone()),
            UserParams::Markov { .. } => None,
        }
    }

    pub fn transition_matrix(&self) -> Option<&[Vec<f64>]> {
        match self {
            UserParams::Markov { matrix, .. } => Some(matrix),
            _ => None,
        }
    }

    /// Rebuilds Markov parameters from a free vector; the dropped edge of
    /// each state takes the remaining mass.
    pub fn markov_from_free(structure: &MarkovStructure, free: &[f64]) -> Result<Self> {
        ensure!(
            free.len() == structure.free_dim(),
            Argument,
            "free vector has length {}, structure needs {}",
            free.len(),
            structure.free_dim()
        );
        let r = structure.r;
        let mut matrix = vec![vec![0.0; r]; r];
        let mut it = free.iter();
        for (i, dest) in structure.out.iter().enumerate() {
            let (last, kept) = dest.split_last().expect("every state has an edge");
            let mut mass = 0.0;
            for &j in kept {
                let v = *it.next().expect("length checked");
                ensure!(v > 0.0 && v < 1.0, Argument, "transition ({i}, {j}) = {v} outside (0, 1)");
                matrix[i][j] = v;
                mass += v;
            }
            let rest = 1.0 - mass;
            ensure!(rest > 0.0, Argument, "row {i} of free vector sums to {mass} >= 1");
            matrix[i][*last] = rest;
        }
        Ok(UserParams::Markov {
            matrix,
            free: free.to_vec(),
        })
    }

    /// Checks the invariants against a model.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let inside = |v: f64| v > 0.0 && v < 1.0;
        match (self, spec) {
            (UserParams::TwoState { p }, ModelSpec::TwoState) => {
                ensure!(inside(*p), Argument, "p = {p} outside (0, 1)");
            }
            (UserParams::RState { probs }, ModelSpec::RState { r }) => {
                ensure!(probs.len() == *r, Argument, "expected {r} probabilities, got {}", probs.len());
                ensure!(probs.iter().all(|&v| inside(v)), Argument, "probabilities must lie in (0, 1)");
                let s: f64 = probs.iter().sum();
                ensure!((s - 1.0).abs() < 1e-12, Argument, "probabilities sum to {s}");
            }
            (UserParams::Markov { matrix, .. }, ModelSpec::Markov(st)) => {
                ensure!(matrix.len() == st.r, Argument, "matrix has {} rows, expected {}", matrix.len(), st.r);
                for (i, row) in matrix.iter().enumerate() {
                    ensure!(row.len() == st.r, Argument, "row {i} has wrong length");
                    for (j, &v) in row.iter().enumerate() {
                        let edge = st.out[i].contains(&j);
                        let ok = if !edge {
                            v == 0.0
                        } else if st.out[i].len() == 1 {
                            v == 1.0
                        } else {
                            inside(v)
                        };
                        ensure!(ok, Argument, "entry ({i}, {j}) = {v} inconsistent with edge set");
                    }
                    let s: f64 = row.iter().sum();
                    ensure!((s - 1.0).abs() < 1e-12, Argument, "row {i} sums to {s}");
                }
            }
            _ => return Err(Error::Argument(format!("parameters do not match model {spec}"))),
        }
        Ok(())
    }
}

/// Uniform draw from the open simplex with `k` vertices.
fn open_simplex<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| -rng.sample::<f64, _>(Open01).ln()).collect();
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Draws one user's parameters from the prior.
pub fn sample_user_params<R: Rng + ?Sized>(spec: &ModelSpec, prior: &PriorSpec, rng: &mut R) -> Result<UserParams> {
    prior.validate(spec)?;
    Ok(match spec {
        ModelSpec::TwoState => {
            let u: f64 = rng.sample(Open01);
            let p = match prior.density {
                PriorDensity::Uniform => u,
                PriorDensity::TruncatedUniform { low, high } => (low + (high - low) * u).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON),
            };
            UserParams::TwoState { p }
        }
        ModelSpec::RState { r } => UserParams::RState {
            probs: open_simplex(*r, rng),
        },
        ModelSpec::Markov(st) => {
            let mut matrix = vec![vec![0.0; st.r]; st.r];
            let mut free = Vec::with_capacity(st.free_dim());
            for (i, dest) in st.out.iter().enumerate() {
                let row = open_simplex(dest.len(), rng);
                for (&j, &v) in dest.iter().zip(&row) {
                    matrix[i][j] = v;
                }
                free.extend_from_slice(&row[..row.len() - 1]);
            }
            UserParams::Markov { matrix, free }
        }
    })
}

/// Union bound on some other user's parameter falling within 4·delta of
/// user 1's: `min(1, 8·n·delta·delta2)` for scalars. Vector models apply the
/// interval argument per coordinate, giving `min(1, 8·d·n·delta·delta2)`.
pub fn separation_bound(prior: &PriorSpec, spec: &ModelSpec, delta: f64, n: usize) -> Result<f64> {
    ensure!(delta > 0.0 && delta.is_finite(), Argument, "delta must be positive, got {delta}");
    let (_, delta2) = prior.bounds(spec);
    let d = spec.feature_dim() as f64;
    Ok((8.0 * d * n as f64 * delta * delta2).min(1.0))
}
