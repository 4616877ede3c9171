//! The adversary: match training traces to anonymized traces by their
//! empirical features, then read off data points.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::population::ModelSpec;
use crate::stats::{featurize, linf, threshold, FeatureVector, ThresholdSpec};
use crate::tracegen::Trace;

/// What the adversary observes: W, Y and the model. No permutation, no
/// parameters.
#[derive(Debug, Clone)]
pub struct AdversaryView<'a> {
    spec: &'a ModelSpec,
    training: &'a [Trace],
    observed: &'a [Trace],
    m: usize,
    l: usize,
    training_features: Vec<FeatureVector>,
    observed_features: Vec<FeatureVector>,
}

impl<'a> AdversaryView<'a> {
    pub fn new(spec: &'a ModelSpec, training: &'a [Trace], observed: &'a [Trace], m: usize, l: usize) -> Result<Self> {
        let n = training.len();
        ensure!(n >= 1 && observed.len() == n, Argument, "view needs |W| = |Y| >= 1");
        ensure!(training.iter().all(|t| t.len() == l), Argument, "training traces must have length l = {l}");
        ensure!(observed.iter().all(|t| t.len() == m), Argument, "observed traces must have length m = {m}");
        let featurize_all = |ts: &[Trace]| ts.iter().map(|t| featurize(t, spec)).collect::<Result<Vec<_>>>();
        Ok(AdversaryView {
            spec,
            training,
            observed,
            m,
            l,
            training_features: featurize_all(training)?,
            observed_features: featurize_all(observed)?,
        })
    }

    pub fn n(&self) -> usize {
        self.training.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn training(&self) -> &[Trace] {
        self.training
    }

    pub fn observed(&self) -> &[Trace] {
        self.observed
    }

    pub fn training_features(&self) -> &[FeatureVector] {
        &self.training_features
    }

    pub fn observed_features(&self) -> &[FeatureVector] {
        &self.observed_features
    }

    fn check_target(&self, target: usize) -> Result<()> {
        ensure!(target < self.n(), Argument, "target {target} out of range for n = {}", self.n());
        Ok(())
    }

    /// L∞ distances from `W_target`'s features to every `Y_j`'s.
    pub fn distances_from(&self, target: usize) -> Vec<f64> {
        let w = &self.training_features[target].values;
        self.observed_features.iter().map(|y| linf(w, &y.values)).collect()
    }

    /// Full n×n cost matrix, `cost[u][v] = distance(W_u, Y_v)`.
    pub fn cost_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|u| self.distances_from(u)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Matched(usize),
    /// Two or more pseudonyms passed the test.
    Ambiguous(Vec<usize>),
    NoMatch,
}

impl Verdict {
    pub fn matched(&self) -> Option<usize> {
        match self {
            Verdict::Matched(j) => Some(*j),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::Matched(_) => "matched",
            Verdict::Ambiguous(_) => "ambiguous",
            Verdict::NoMatch => "no-match",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub target: usize,
    pub verdict: Verdict,
    /// Filled in by the evaluator, which holds the ground truth.
    pub correct: Option<bool>,
}

impl MatchOutcome {
    pub fn new(target: usize, verdict: Verdict) -> Self {
        MatchOutcome {
            target,
            verdict,
            correct: None,
        }
    }
}

/// Attack selector used by experiments and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Threshold,
    Nearest,
    Assignment,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Threshold, AttackKind::Nearest, AttackKind::Assignment];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Threshold => "threshold",
            AttackKind::Nearest => "nearest",
            AttackKind::Assignment => "assignment",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "threshold" => Ok(AttackKind::Threshold),
            "nearest" | "nearest-neighbor" => Ok(AttackKind::Nearest),
            "assignment" | "full-assignment" => Ok(AttackKind::Assignment),
            other => Err(Error::Config(format!(
                "unknown attack `{other}` (expected threshold, nearest or assignment)"
            ))),
        }
    }
}

/// Pseudonyms within `radius` of `distances`' origin, classified.
pub fn threshold_verdict(distances: &[f64], radius: f64) -> Verdict {
    let hits: Vec<usize> = distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= radius)
        .map(|(j, _)| j)
        .collect();
    match hits.len() {
        0 => Verdict::NoMatch,
        1 => Verdict::Matched(hits[0]),
        _ => Verdict::Ambiguous(hits),
    }
}

/// Index of the smallest distance; ties go to the lowest index.
pub fn nearest_index(distances: &[f64]) -> usize {
    let mut best = 0;
    for (j, &d) in distances.iter().enumerate().skip(1) {
        if d < distances[best] {
            best = j;
        }
    }
    best
}

/// The threshold test: every `Y_j` whose features lie within
/// `n^{-(1/d + alpha/4)}` of `W_target`'s.
pub fn threshold_match(view: &AdversaryView<'_>, target: usize, alpha: f64) -> Result<MatchOutcome> {
    view.check_target(target)?;
    let radius = threshold(ThresholdSpec {
        n: view.n().max(2),
        alpha,
        dim: view.spec.feature_dim(),
    })?;
    Ok(MatchOutcome::new(target, threshold_verdict(&view.distances_from(target), radius)))
}

/// Threshold-free baseline: always the closest pseudonym.
pub fn nearest_neighbor_match(view: &AdversaryView<'_>, target: usize) -> Result<MatchOutcome> {
    view.check_target(target)?;
    Ok(MatchOutcome::new(target, Verdict::Matched(nearest_index(&view.distances_from(target)))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentOptions {
    /// Largest n solved exactly.
    pub cap: usize,
    /// Above the cap, fall back to greedy matching instead of failing.
    pub greedy_beyond_cap: bool,
}

impl Default for AssignmentOptions {
    fn default() -> Self {
        AssignmentOptions {
            cap: 2000,
            greedy_beyond_cap: false,
        }
    }
}

/// Global matching minimizing total feature distance; one outcome per user.
pub fn full_assignment_match(view: &AdversaryView<'_>, options: AssignmentOptions) -> Result<Vec<MatchOutcome>> {
    let n = view.n();
    let cost = view.cost_matrix();
    let assignment = if n <= options.cap {
        min_cost_assignment(&cost)?
    } else if options.greedy_beyond_cap {
        greedy_assignment(&cost)
    } else {
        return Err(Error::Resource(format!(
            "assignment over {n} users exceeds the cap of {}",
            options.cap
        )));
    };
    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(u, v)| MatchOutcome::new(u, Verdict::Matched(v)))
        .collect())
}

/// Exact minimum-cost perfect matching of a square matrix (shortest
/// augmenting paths with potentials, O(n³)). Returns `col[row]`.
///
/// Rows are inserted in index order and columns scanned in index order with
/// strict comparisons, so equal-cost choices resolve to the lowest index.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    hungarian(cost).map(|h| h.col)
}

pub(crate) struct Hungarian {
    pub col: Vec<usize>,
    /// Dual potentials: `row[i] + col_pot[j] <= cost[i][j]`, with equality
    /// on the matched pairs.
    pub row_pot: Vec<f64>,
    pub col_pot: Vec<f64>,
}

pub(crate) fn hungarian(cost: &[Vec<f64>]) -> Result<Hungarian> {
    let n = cost.len();
    ensure!(cost.iter().all(|r| r.len() == n), Argument, "cost matrix must be square");
    ensure!(
        cost.iter().flatten().all(|c| c.is_finite()),
        Argument,
        "cost matrix must be finite"
    );
    if n == 0 {
        return Ok(Hungarian {
            col: Vec::new(),
            row_pot: Vec::new(),
            col_pot: Vec::new(),
        });
    }
    // 1-based: index 0 is the virtual column holding the row being inserted.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        col[owner[j] - 1] = j - 1;
    }
    Ok(Hungarian {
        col,
        row_pot: u[1..].to_vec(),
        col_pot: v[1..].to_vec(),
    })
}

/// Repeatedly takes the globally cheapest remaining (row, column) pair.
pub fn greedy_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut pairs: Vec<(f64, usize, usize)> = cost
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &c)| (c, i, j)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut col = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    let mut left = n;
    for (_, i, j) in pairs {
        if left == 0 {
            break;
        }
        if col[i] == usize::MAX && !taken[j] {
            col[i] = j;
            taken[j] = true;
            left -= 1;
        }
    }
    col
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Estimate {
    pub state: u8,
    /// True when the verdict was not a match and the mode of W was used.
    pub fallback: bool,
}

/// The adversary's guess for `X_target(k)`: `Y_j(k)` after a match,
/// otherwise the most frequent symbol of `W_target`.
pub fn estimate_datapoint(view: &AdversaryView<'_>, outcome: &MatchOutcome, target: usize, k: usize) -> Result<Estimate> {
    view.check_target(target)?;
    ensure!(k < view.m, Argument, "time index {k} out of range for m = {}", view.m);
    Ok(match outcome.verdict {
        Verdict::Matched(j) => Estimate {
            state: view.observed[j].samples()[k],
            fallback: false,
        },
        _ => Estimate {
            state: view.training[target].mode(),
            fallback: true,
        },
    })
}
