//! Trace generation for the training collection W and the actual collection X.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::population::{sample_user_params, ModelSpec, PriorSpec, UserParams};
use crate::rng::{Role, StreamKey};

/// A sequence of state indices in `0..r`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trace {
    samples: Vec<u8>,
}

impl Trace {
    /// Wraps `samples`, checking every entry is below `r`.
    pub fn new(samples: Vec<u8>, r: usize) -> Result<Self> {
        ensure!(!samples.is_empty(), Argument, "trace must be nonempty");
        if let Some(pos) = samples.iter().position(|&s| s as usize >= r) {
            return Err(Error::Argument(format!(
                "sample {} at position {pos} is not a state of a {r}-state model",
                samples[pos]
            )));
        }
        Ok(Trace { samples })
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Most frequent symbol; ties go to the smallest symbol.
    pub fn mode(&self) -> u8 {
        let mut counts = [0usize; 256];
        for &s in &self.samples {
            counts[s as usize] += 1;
        }
        let mut best = 0;
        for (s, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = s;
            }
        }
        best as u8
    }
}

/// The ground-truth triple: parameters, training traces W and actual traces X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCollection {
    pub spec: ModelSpec,
    pub params: Vec<UserParams>,
    pub training: Vec<Trace>,
    pub actual: Vec<Trace>,
    pub n: usize,
    pub m: usize,
    pub l: usize,
}

impl TraceCollection {
    /// Assembles a collection from parts, checking sizes.
    pub fn from_parts(spec: ModelSpec, params: Vec<UserParams>, training: Vec<Trace>, actual: Vec<Trace>) -> Result<Self> {
        let n = training.len();
        ensure!(n >= 1, Argument, "collection needs at least one user");
        ensure!(
            actual.len() == n && params.len() == n,
            Argument,
            "collection sizes disagree: |W| = {n}, |X| = {}, |params| = {}",
            actual.len(),
            params.len()
        );
        let l = training[0].len();
        let m = actual[0].len();
        ensure!(training.iter().all(|t| t.len() == l), Argument, "training traces differ in length");
        ensure!(actual.iter().all(|t| t.len() == m), Argument, "actual traces differ in length");
        Ok(TraceCollection {
            spec,
            params,
            training,
            actual,
            n,
            m,
            l,
        })
    }
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut c: Vec<f64> = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = c.last_mut() {
        *last = f64::INFINITY;
    }
    c
}

#[inline]
fn draw(cdf: &[f64], u: f64) -> usize {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// I.i.d. categorical trace from two-state or r-state parameters.
pub fn gen_iid_trace<R: Rng + ?Sized>(params: &UserParams, length: usize, rng: &mut R) -> Result<Trace> {
    ensure!(length > 0, Argument, "trace length must be positive");
    let samples = match params {
        UserParams::TwoState { p } => (0..length).map(|_| (rng.random::<f64>() < *p) as u8).collect(),
        UserParams::RState { probs } => {
            let cdf = cumulative(probs);
            (0..length).map(|_| draw(&cdf, rng.random()) as u8).collect()
        }
        UserParams::Markov { .. } => {
            return Err(Error::Argument("gen_iid_trace needs i.i.d. parameters".into()));
        }
    };
    Ok(Trace { samples })
}

/// Stationary distribution of a transition matrix, solved as the linear
/// system πP = π with the last balance equation replaced by Σπ = 1.
pub fn stationary_distribution(matrix: &[Vec<f64>]) -> Result<Vec<f64>> {
    let r = matrix.len();
    ensure!(r >= 1 && matrix.iter().all(|row| row.len() == r), Argument, "transition matrix must be square");
    // a[i][j] = P[j][i] - δ_ij, augmented with the right-hand side.
    let mut a: Vec<Vec<f64>> = (0..r)
        .map(|i| {
            let mut row: Vec<f64> = (0..r).map(|j| matrix[j][i] - if i == j { 1.0 } else { 0.0 }).collect();
            row.push(0.0);
            row
        })
        .collect();
    a[r - 1] = vec![1.0; r + 1];

    for col in 0..r {
        let pivot = (col..r)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("nonempty range");
        ensure!(
            a[pivot][col].abs() > 1e-14,
            Numeric,
            "stationary system is singular (pivot {:.3e} in column {col})",
            a[pivot][col]
        );
        a.swap(col, pivot);
        let pivot_row = a[col].clone();
        for (row, target) in a.iter_mut().enumerate() {
            if row != col {
                let f = target[col] / pivot_row[col];
                if f != 0.0 {
                    for (x, p) in target[col..].iter_mut().zip(&pivot_row[col..]) {
                        *x -= f * p;
                    }
                }
            }
        }
    }
    let pi: Vec<f64> = (0..r).map(|i| a[i][r] / a[i][i]).collect();

    let residual = (0..r)
        .map(|j| ((0..r).map(|i| pi[i] * matrix[i][j]).sum::<f64>() - pi[j]).abs())
        .fold(0.0, f64::max);
    ensure!(residual < 1e-10, Numeric, "stationary residual {residual:.3e} too large");
    ensure!(pi.iter().all(|&x| x > 0.0), Numeric, "stationary distribution has a non-positive entry: {pi:?}");
    Ok(pi)
}

/// Markov trace started from the stationary distribution.
pub fn gen_markov_trace<R: Rng + ?Sized>(params: &UserParams, length: usize, rng: &mut R) -> Result<Trace> {
    ensure!(length >= 2, Argument, "markov traces need length >= 2, got {length}");
    let matrix = params
        .transition_matrix()
        .ok_or_else(|| Error::Argument("gen_markov_trace needs markov parameters".into()))?;
    let pi = stationary_distribution(matrix)?;
    let rows: Vec<Vec<f64>> = matrix.iter().map(|row| cumulative(row)).collect();
    let mut samples = Vec::with_capacity(length);
    let mut state = draw(&cumulative(&pi), rng.random());
    samples.push(state as u8);
    for _ in 1..length {
        let row = &rows[state];
        // zero-probability entries have an empty interval and are never drawn
        state = draw(row, rng.random());
        samples.push(state as u8);
    }
    Ok(Trace { samples })
}

/// One trace of the given model.
pub fn gen_trace<R: Rng + ?Sized>(spec: &ModelSpec, params: &UserParams, length: usize, rng: &mut R) -> Result<Trace> {
    if spec.is_markov() {
        gen_markov_trace(params, length, rng)
    } else {
        gen_iid_trace(params, length, rng)
    }
}

/// Generates the full collection. User `u` draws its parameters, W trace and
/// X trace from the substreams `key/u/{Params,Training,Actual}`.
pub fn gen_collection(spec: &ModelSpec, prior: &PriorSpec, n: usize, m: usize, l: usize, key: StreamKey) -> Result<TraceCollection> {
    ensure!(n >= 2, Argument, "need at least two users, got {n}");
    gen_users(spec, prior, n, m, l, key)
}

/// [`gen_collection`] without the two-user minimum; the oracle accepts n = 1.
pub fn gen_users(spec: &ModelSpec, prior: &PriorSpec, n: usize, m: usize, l: usize, key: StreamKey) -> Result<TraceCollection> {
    ensure!(n >= 1, Argument, "need at least one user");
    ensure!(m >= 1 && l >= 1, Argument, "trace lengths must be positive (m = {m}, l = {l})");
    prior.validate(spec)?;
    let users: Vec<(UserParams, Trace, Trace)> = (0..n)
        .into_par_iter()
        .map(|u| {
            let k = key.child(u as u64);
            let params = sample_user_params(spec, prior, &mut k.role(Role::Params).rng())?;
            let w = gen_trace(spec, &params, l, &mut k.role(Role::Training).rng())?;
            let x = gen_trace(spec, &params, m, &mut k.role(Role::Actual).rng())?;
            Ok((params, w, x))
        })
        .collect::<Result<_>>()?;
    let mut params = Vec::with_capacity(n);
    let mut training = Vec::with_capacity(n);
    let mut actual = Vec::with_capacity(n);
    for (p, w, x) in users {
        params.push(p);
        training.push(w);
        actual.push(x);
    }
    Ok(TraceCollection {
        spec: spec.clone(),
        params,
        training,
        actual,
        n,
        m,
        l,
    })
}
