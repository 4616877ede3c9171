//! Empirical features of traces, matching thresholds and tail bounds.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::population::ModelSpec;
use crate::tracegen::Trace;

/// Empirical statistic of a trace, in the same coordinates as
/// [`UserParams::free_vector`](crate::population::UserParams::free_vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Set for Markov features when some state was never left in the trace;
    /// that state's entries are 0.
    pub degenerate: bool,
}

impl FeatureVector {
    pub fn scalar(v: f64) -> Self {
        FeatureVector {
            values: vec![v],
            degenerate: false,
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        FeatureVector {
            values,
            degenerate: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Symbol or transition frequencies of `trace` under `spec`.
///
/// Two-state: the mean. R-state: frequencies of symbols `1..r`. Markov: for
/// each free edge (i, j), transitions i→j over visits to i among the first
/// `len - 1` positions.
pub fn featurize(trace: &Trace, spec: &ModelSpec) -> Result<FeatureVector> {
    ensure!(!trace.is_empty(), Argument, "cannot featurize an empty trace");
    let s = trace.samples();
    let len = s.len() as f64;
    match spec {
        ModelSpec::TwoState => {
            let ones = s.iter().filter(|&&x| x == 1).count();
            Ok(FeatureVector::scalar(ones as f64 / len))
        }
        ModelSpec::RState { r } => {
            let mut counts = vec![0usize; *r];
            for &x in s {
                counts[x as usize] += 1;
            }
            Ok(FeatureVector::from_values(counts[1..].iter().map(|&c| c as f64 / len).collect()))
        }
        ModelSpec::Markov(st) => {
            ensure!(s.len() >= 2, Argument, "markov features need a trace of length >= 2");
            let r = st.num_states();
            let mut visits = vec![0usize; r];
            let mut trans = vec![0usize; r * r];
            for w in s.windows(2) {
                visits[w[0] as usize] += 1;
                trans[w[0] as usize * r + w[1] as usize] += 1;
            }
            let mut degenerate = false;
            let values = st
                .free_edges()
                .iter()
                .map(|&(i, j)| {
                    if visits[i] == 0 {
                        degenerate = true;
                        0.0
                    } else {
                        trans[i * r + j] as f64 / visits[i] as f64
                    }
                })
                .collect();
            Ok(FeatureVector { values, degenerate })
        }
    }
}

/// L∞ distance between feature vectors.
pub fn distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Argument(format!("feature dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    Ok(linf(&a.values, &b.values))
}

#[inline]
pub(crate) fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Inputs of the matching radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub n: usize,
    pub alpha: f64,
    /// Feature dimension d.
    pub dim: usize,
}

/// Matching radius `n^{-(1/d + alpha/4)}`.
pub fn threshold(spec: ThresholdSpec) -> Result<f64> {
    let ThresholdSpec { n, alpha, dim } = spec;
    ensure!(n >= 2, Argument, "threshold needs n >= 2, got {n}");
    ensure!(alpha > 0.0 && alpha.is_finite(), Argument, "alpha must be positive, got {alpha}");
    ensure!(dim >= 1, Argument, "feature dimension must be at least 1");
    Ok((n as f64).powf(-(1.0 / dim as f64 + alpha / 4.0)))
}

/// Trace length `⌈c · n^{2/d + alpha}⌉`.
pub fn required_length(n: usize, alpha: f64, c: f64, dim: usize) -> Result<usize> {
    ensure!(c > 0.0 && c.is_finite(), Config, "length constant c must be positive, got {c}");
    ensure!(dim >= 1, Config, "feature dimension must be at least 1");
    ensure!(alpha.is_finite() && alpha > -2.0 / dim as f64, Config, "alpha = {alpha} gives a vanishing length exponent");
    ensure!(n >= 1, Config, "n must be positive");
    length_from_exponent(n, 2.0 / dim as f64 + alpha, c)
}

/// `⌈c · n^exponent⌉`, rejecting values that do not fit in `usize`.
pub fn length_from_exponent(n: usize, exponent: f64, c: f64) -> Result<usize> {
    let v = (c * (n as f64).powf(exponent)).ceil();
    ensure!(v.is_finite() && v < usize::MAX as f64, Config, "trace length c·n^{exponent} = {v:e} overflows");
    Ok((v as usize).max(1))
}

/// Tail bound on one empirical mean straying by half the radius:
/// `min(1, 2·exp(-m·delta²/(12·p)))`.
pub fn chernoff_bound(m: usize, delta: f64, p: f64) -> Result<f64> {
    tail(m, delta, p, 12.0)
}

/// Tail bound on a training mean straying by the full radius:
/// `min(1, 2·exp(-l·delta²/(3·p)))`.
pub fn training_deviation_bound(l: usize, delta: f64, p: f64) -> Result<f64> {
    tail(l, delta, p, 3.0)
}

fn tail(len: usize, delta: f64, p: f64, k: f64) -> Result<f64> {
    ensure!(len >= 1, Argument, "length must be positive");
    ensure!(delta > 0.0, Argument, "delta must be positive");
    // p = 1 is the limit case used for the parameter-free form of the bound.
    ensure!(p > 0.0 && p <= 1.0, Argument, "p = {p} outside (0, 1]");
    Ok((2.0 * (-(len as f64) * delta * delta / (k * p)).exp()).min(1.0))
}
