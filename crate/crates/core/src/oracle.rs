//! Exact posterior over the hidden permutation for small populations.
//!
//! With a uniform prior over permutations and each user's parameter
//! integrated out under the conjugate uniform prior, the posterior of a
//! permutation π is proportional to `Π_u K[u][π(u)]` where
//! `K[u][v] = ∫ P(W_u | θ) P(Y_v | θ) f_P(θ) dθ`. The marginal of π(target)
//! is then a ratio of permanents of K.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::attack::{hungarian, AdversaryView};
use crate::error::{ensure, Error, Result};
use crate::population::{ModelSpec, PriorSpec, UserParams};
use crate::tracegen::Trace;

pub const ENUMERATION_CAP: usize = 8;
pub const PERMANENT_CAP: usize = 20;

/// Symbol counts (i.i.d.) or transition counts (Markov, row-major r×r).
fn sufficient_counts(trace: &Trace, spec: &ModelSpec) -> Vec<u64> {
    let r = spec.num_states();
    let s = trace.samples();
    if spec.is_markov() {
        let mut c = vec![0u64; r * r];
        for w in s.windows(2) {
            c[w[0] as usize * r + w[1] as usize] += 1;
        }
        c
    } else {
        let mut c = vec![0u64; r];
        for &x in s {
            c[x as usize] += 1;
        }
        c
    }
}

/// log of the Dirichlet(1,…,1)-multinomial sequence probability for
/// `counts` over `k` categories.
fn log_dirichlet_uniform(counts: impl Iterator<Item = u64>, k: usize) -> f64 {
    let (total, sum_lg) = counts.fold((0u64, 0.0), |(t, s), c| (t + c, s + ln_gamma(c as f64 + 1.0)));
    ln_gamma(k as f64) - ln_gamma((total + k as u64) as f64) + sum_lg
}

fn log_marginal_from_counts(counts: &[u64], spec: &ModelSpec) -> Result<f64> {
    match spec {
        ModelSpec::TwoState | ModelSpec::RState { .. } => Ok(log_dirichlet_uniform(counts.iter().copied(), counts.len())),
        ModelSpec::Markov(st) => {
            let r = st.num_states();
            let mut total = 0.0;
            for i in 0..r {
                let dest = st.successors(i);
                let row = &counts[i * r..(i + 1) * r];
                for (j, &c) in row.iter().enumerate() {
                    if c > 0 && !dest.contains(&j) {
                        return Err(Error::Argument(format!("trace uses transition ({i}, {j}) outside the edge set")));
                    }
                }
                total += log_dirichlet_uniform(dest.iter().map(|&j| row[j]), dest.len());
            }
            Ok(total)
        }
    }
}

/// `log ∫ P(w | θ) P(y | θ) f_P(θ) dθ` under the uniform prior.
///
/// Markov chains drop the initial-state factor, which is not conjugate.
pub fn pair_log_marginal(w: &Trace, y: &Trace, spec: &ModelSpec, prior: &PriorSpec) -> Result<f64> {
    ensure_uniform(prior)?;
    let mut c = sufficient_counts(w, spec);
    for (a, b) in c.iter_mut().zip(sufficient_counts(y, spec)) {
        *a += b;
    }
    log_marginal_from_counts(&c, spec)
}

fn ensure_uniform(prior: &PriorSpec) -> Result<()> {
    if prior.is_uniform() {
        Ok(())
    } else {
        Err(Error::UnsupportedPrior(
            "exact posteriors need the uniform (conjugate) prior".into(),
        ))
    }
}

/// `L[u][v]`: log weight of pairing training trace u with pseudonym v.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodMatrix {
    n: usize,
    log: Vec<f64>,
}

impl LikelihoodMatrix {
    pub fn from_log(n: usize, log: Vec<f64>) -> Result<Self> {
        ensure!(log.len() == n * n, Argument, "expected {} entries, got {}", n * n, log.len());
        ensure!(log.iter().all(|x| x.is_finite()), Numeric, "likelihood matrix has non-finite entries");
        Ok(LikelihoodMatrix { n, log })
    }

    /// Integrated-parameter weights from the adversary's view.
    pub fn from_view(view: &AdversaryView<'_>, prior: &PriorSpec) -> Result<Self> {
        ensure_uniform(prior)?;
        let spec = view.spec();
        let n = view.n();
        let wc: Vec<Vec<u64>> = view.training().iter().map(|t| sufficient_counts(t, spec)).collect();
        let yc: Vec<Vec<u64>> = view.observed().iter().map(|t| sufficient_counts(t, spec)).collect();
        let log = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let pooled: Vec<u64> = wc[idx / n].iter().zip(&yc[idx % n]).map(|(a, b)| a + b).collect();
                log_marginal_from_counts(&pooled, spec)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_log(n, log)
    }

    /// Weights when every user's parameters are revealed:
    /// `L[u][v] = log P(Y_v | params_u)`. Markov drops the initial state.
    pub fn with_known_params(params: &[UserParams], observed: &[Trace], spec: &ModelSpec) -> Result<Self> {
        let n = params.len();
        ensure!(observed.len() == n, Argument, "need one observed trace per user");
        let r = spec.num_states();
        let yc: Vec<Vec<u64>> = observed.iter().map(|t| sufficient_counts(t, spec)).collect();
        let mut log = Vec::with_capacity(n * n);
        for p in params {
            let logp: Vec<f64> = match p {
                UserParams::Markov { matrix, .. } => matrix.iter().flatten().map(|x| x.ln()).collect(),
                _ => p.symbol_probs().expect("i.i.d. params").iter().map(|x| x.ln()).collect(),
            };
            ensure!(logp.len() == yc[0].len(), Argument, "parameters do not match a {r}-state model");
            for c in &yc {
                let ll: f64 = c
                    .iter()
                    .zip(&logp)
                    .filter(|(&k, _)| k > 0)
                    .map(|(&k, &lp)| k as f64 * lp)
                    .sum();
                log.push(ll);
            }
        }
        Self::from_log(n, log)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.log[u * self.n + v]
    }

    /// `K[u][v] = exp(L[u][v] - a_u - b_v)` where `a`, `b` are optimal dual
    /// potentials of the maximum-weight assignment. Every entry is at most 1
    /// and the best permutation has weight exactly 1, so the permanent lies
    /// in [1, n!] however far apart the raw log-likelihoods are. The offsets
    /// cancel in the normalized marginal.
    pub fn scaled_weights(&self) -> Vec<f64> {
        let n = self.n;
        let cost: Vec<Vec<f64>> = (0..n).map(|u| self.log[u * n..(u + 1) * n].iter().map(|x| -x).collect()).collect();
        let h = hungarian(&cost).expect("likelihoods are finite and square");
        (0..n * n)
            .map(|i| {
                let (u, v) = (i / n, i % n);
                // reduced cost is >= 0 up to rounding
                let reduced = cost[u][v] - h.row_pot[u] - h.col_pot[v];
                (-reduced.max(0.0)).exp()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorMethod {
    Enumeration,
    Permanent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub target: usize,
    /// `marginal[v] = P(Π(target) = v | W, Y)`.
    pub marginal: Vec<f64>,
    pub entropy_nats: f64,
    pub method: PosteriorMethod,
}

impl PosteriorSummary {
    fn from_weights(target: usize, weights: Vec<f64>, method: PosteriorMethod) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        ensure!(total > 0.0 && total.is_finite(), Numeric, "posterior normalizer is {total}");
        let marginal: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let n = marginal.len() as f64;
        let entropy = -marginal.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
        Ok(PosteriorSummary {
            target,
            marginal,
            // also normalizes -0.0
            entropy_nats: if entropy > 0.0 { entropy.min(n.ln()) } else { 0.0 },
            method,
        })
    }

    /// Most probable pseudonym (lowest index on ties).
    pub fn map_estimate(&self) -> usize {
        crate::attack::nearest_index(&self.marginal.iter().map(|p| -p).collect::<Vec<_>>())
    }
}

/// Total variation distance between two distributions.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Marginal of π(target) by summing over all n! permutations.
pub fn enumerate_marginal(lik: &LikelihoodMatrix, target: usize) -> Result<PosteriorSummary> {
    let n = lik.n;
    ensure!(n <= ENUMERATION_CAP, Resource, "enumeration is limited to n <= {ENUMERATION_CAP}, got {n}");
    ensure!(target < n, Argument, "target {target} out of range");
    let mut terms: Vec<(f64, usize)> = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    let weight = |p: &[usize]| p.iter().enumerate().map(|(u, &v)| lik.get(u, v)).sum::<f64>();
    terms.push((weight(&p), p[target]));
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            terms.push((weight(&p), p[target]));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let mut weights = vec![0.0; n];
    for (lw, v) in terms {
        weights[v] += (lw - max).exp();
    }
    PosteriorSummary::from_weights(target, weights, PosteriorMethod::Enumeration)
}

/// Permanent of a row-major n×n matrix by Ryser's inclusion–exclusion
/// formula, visiting column subsets in Gray-code order.
pub fn permanent(a: &[f64], n: usize) -> f64 {
    assert_eq!(a.len(), n * n, "matrix must be n×n");
    if n == 0 {
        return 1.0;
    }
    let mut row_sums = vec![0.0; n];
    let mut total = 0.0;
    let mut in_set = vec![false; n];
    let mut size = 0usize;
    for k in 1u64..(1u64 << n) {
        let j = k.trailing_zeros() as usize;
        let sign = if in_set[j] { -1.0 } else { 1.0 };
        in_set[j] = !in_set[j];
        if in_set[j] {
            size += 1;
        } else {
            size -= 1;
        }
        for (i, s) in row_sums.iter_mut().enumerate() {
            *s += sign * a[i * n + j];
        }
        let prod: f64 = row_sums.iter().product();
        if (n - size).is_multiple_of(2) {
            total += prod;
        } else {
            total -= prod;
        }
    }
    total
}

fn minor(a: &[f64], n: usize, row: usize, col: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((n - 1) * (n - 1));
    for i in (0..n).filter(|&i| i != row) {
        for j in (0..n).filter(|&j| j != col) {
            out.push(a[i * n + j]);
        }
    }
    out
}

/// Marginal of π(target) via `K[target][v] · perm(K without row target, column v)`.
pub fn permanent_marginal(lik: &LikelihoodMatrix, target: usize) -> Result<PosteriorSummary> {
    let n = lik.n;
    ensure!(n <= PERMANENT_CAP, Resource, "permanent method is limited to n <= {PERMANENT_CAP}, got {n}");
    ensure!(target < n, Argument, "target {target} out of range");
    let k = lik.scaled_weights();
    let weights: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|v| {
            let kv = k[target * n + v];
            if kv == 0.0 {
                0.0
            } else {
                // cancellation in the alternating sum can leave tiny negatives
                (kv * permanent(&minor(&k, n, target, v), n - 1)).max(0.0)
            }
        })
        .collect();
    PosteriorSummary::from_weights(target, weights, PosteriorMethod::Permanent)
}

pub fn posterior_by_enumeration(view: &AdversaryView<'_>, prior: &PriorSpec, target: usize) -> Result<PosteriorSummary> {
    ensure!(view.n() <= ENUMERATION_CAP, Resource, "enumeration is limited to n <= {ENUMERATION_CAP}, got {}", view.n());
    enumerate_marginal(&LikelihoodMatrix::from_view(view, prior)?, target)
}

pub fn posterior_by_permanent(view: &AdversaryView<'_>, prior: &PriorSpec, target: usize) -> Result<PosteriorSummary> {
    ensure!(view.n() <= PERMANENT_CAP, Resource, "permanent method is limited to n <= {PERMANENT_CAP}, got {}", view.n());
    permanent_marginal(&LikelihoodMatrix::from_view(view, prior)?, target)
}

pub fn posterior(view: &AdversaryView<'_>, prior: &PriorSpec, target: usize, method: PosteriorMethod) -> Result<PosteriorSummary> {
    match method {
        PosteriorMethod::Enumeration => posterior_by_enumeration(view, prior, target),
        PosteriorMethod::Permanent => posterior_by_permanent(view, prior, target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::MarkovStructure;
    use crate::rng::StreamKey;
    use proptest::prelude::*;
    use rand::Rng;

    fn tr(s: &[u8], r: usize) -> Trace {
        Trace::new(s.to_vec(), r).unwrap()
    }

    /// Pólya-urn predictive probability of a sequence under Dirichlet(1,…,1):
    /// draw t has probability (count_so_far(x) + 1) / (t + r).
    fn polya_sequence(seq: &[u8], r: usize) -> f64 {
        let mut counts = vec![0usize; r];
        let mut p = 1.0;
        for (t, &x) in seq.iter().enumerate() {
            p *= (counts[x as usize] + 1) as f64 / (t + r) as f64;
            counts[x as usize] += 1;
        }
        p
    }

    #[test]
    fn two_state_pair_marginals() {
        let u = PriorSpec::uniform();
        let s = ModelSpec::TwoState;
        // ∫ p² dp = 1/3, ∫ p(1-p) dp = 1/6
        assert!((pair_log_marginal(&tr(&[1], 2), &tr(&[1], 2), &s, &u).unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((pair_log_marginal(&tr(&[1], 2), &tr(&[0], 2), &s, &u).unwrap() - (1.0f64 / 6.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn r_state_pair_marginal() {
        // 2·Γ(2)Γ(2)Γ(1)/Γ(5) = 1/12 = (1/3)(1/4) by the urn
        let got = pair_log_marginal(&tr(&[0], 3), &tr(&[1], 3), &ModelSpec::r_state(3).unwrap(), &PriorSpec::uniform()).unwrap();
        assert!((got - (1.0f64 / 12.0).ln()).abs() < 1e-12);
        assert!((got - polya_sequence(&[0, 1], 3).ln()).abs() < 1e-12);
    }

    #[test]
    fn markov_pair_marginal_is_per_row_urn() {
        let spec = ModelSpec::Markov(MarkovStructure::complete(2).unwrap());
        let w = tr(&[0, 0, 1, 0, 1], 2);
        let y = tr(&[1, 1, 0], 2);
        // rows: from 0 → [0, 1, 1] in w; from 1 → [0] in w, [1, 0] in y
        let expected = polya_sequence(&[0, 1, 1], 2) * polya_sequence(&[0, 1, 0], 2);
        let got = pair_log_marginal(&w, &y, &spec, &PriorSpec::uniform()).unwrap();
        assert!((got - expected.ln()).abs() < 1e-12);
    }

    #[test]
    fn truncated_prior_unsupported() {
        let err = pair_log_marginal(&tr(&[1], 2), &tr(&[1], 2), &ModelSpec::TwoState, &PriorSpec::truncated_uniform(0.1, 0.9));
        assert!(matches!(err, Err(Error::UnsupportedPrior(_))));
    }

    proptest! {
        #[test]
        fn pair_marginal_matches_urn(w in prop::collection::vec(0u8..4, 1..30), y in prop::collection::vec(0u8..4, 1..30)) {
            let spec = ModelSpec::r_state(4).unwrap();
            let got = pair_log_marginal(&tr(&w, 4), &tr(&y, 4), &spec, &PriorSpec::uniform()).unwrap();
            let seq: Vec<u8> = w.iter().chain(&y).copied().collect();
            prop_assert!((got - polya_sequence(&seq, 4).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn single_user_posterior() {
        let lik = LikelihoodMatrix::from_log(1, vec![-3.0]).unwrap();
        for s in [enumerate_marginal(&lik, 0).unwrap(), permanent_marginal(&lik, 0).unwrap()] {
            assert_eq!(s.marginal, vec![1.0]);
            assert_eq!(s.entropy_nats, 0.0);
        }
    }

    #[test]
    fn symmetric_two_user_posterior() {
        let lik = LikelihoodMatrix::from_log(2, vec![-1.0, -1.0, -4.0, -4.0]).unwrap();
        let s = enumerate_marginal(&lik, 0).unwrap();
        assert!((s.marginal[0] - 0.5).abs() < 1e-15);
        assert!((s.entropy_nats - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn separated_two_user_posterior() {
        let spec = ModelSpec::TwoState;
        let w = vec![tr(&[1; 4], 2), tr(&[0; 4], 2)];
        let y = w.clone();
        let view = AdversaryView::new(&spec, &w, &y, 4, 4).unwrap();
        let s = posterior_by_enumeration(&view, &PriorSpec::uniform(), 0).unwrap();
        // B(9,1)² / (B(9,1)² + B(5,5)²) = (1/81) / (1/81 + 1/396900)
        let expected = 396_900.0 / (396_900.0 + 81.0);
        assert!((s.marginal[0] - expected).abs() < 1e-12, "{}", s.marginal[0]);
        assert!((s.marginal[0] - 0.9997959600081616).abs() < 1e-12);
    }

    #[test]
    fn permanent_small_matrices() {
        assert_eq!(permanent(&[], 0), 1.0);
        assert_eq!(permanent(&[3.0], 1), 3.0);
        assert_eq!(permanent(&[1.0, 2.0, 3.0, 4.0], 2), 10.0);
        // perm(J_n) = n!
        assert!((permanent(&vec![1.0; 36], 6) - 720.0).abs() < 1e-9);
        // perm of 3x3 [[1,2,3],[4,5,6],[7,8,9]] = 450
        assert!((permanent(&[1., 2., 3., 4., 5., 6., 7., 8., 9.], 3) - 450.0).abs() < 1e-9);
    }

    #[test]
    fn near_diagonal_posterior() {
        let n = 3;
        let log: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 0.0 } else { 1e-9f64.ln() }).collect();
        let s = permanent_marginal(&LikelihoodMatrix::from_log(n, log).unwrap(), 0).unwrap();
        assert!((s.marginal[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn flat_posterior_is_uniform() {
        let s = permanent_marginal(&LikelihoodMatrix::from_log(4, vec![0.0; 16]).unwrap(), 0).unwrap();
        for p in &s.marginal {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert!((s.entropy_nats - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn permanent_agrees_with_enumeration_on_random_matrices() {
        let mut rng = StreamKey::root(21).rng();
        for case in 0..100 {
            let n = 2 + case % 7;
            let scale = [0.5, 3.0, 20.0][case % 3];
            let log: Vec<f64> = (0..n * n).map(|_| -scale * rng.random::<f64>()).collect();
            let lik = LikelihoodMatrix::from_log(n, log).unwrap();
            let target = case % n;
            let a = enumerate_marginal(&lik, target).unwrap();
            let b = permanent_marginal(&lik, target).unwrap();
            assert!(total_variation(&a.marginal, &b.marginal) < 1e-6, "case {case}");
            let sum: f64 = b.marginal.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(a.entropy_nats >= 0.0 && a.entropy_nats <= (n as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn scaling_invariance() {
        let mut rng = StreamKey::root(22).rng();
        let n = 6;
        let log: Vec<f64> = (0..n * n).map(|_| -5.0 * rng.random::<f64>()).collect();
        let base = permanent_marginal(&LikelihoodMatrix::from_log(n, log.clone()).unwrap(), 2).unwrap();
        for (which, shift) in [(0usize, 3.7f64), (4, -2.2)] {
            let mut row = log.clone();
            let mut col = log.clone();
            for k in 0..n {
                row[which * n + k] += shift;
                col[k * n + which] += shift;
            }
            for l in [row, col] {
                let s = permanent_marginal(&LikelihoodMatrix::from_log(n, l).unwrap(), 2).unwrap();
                assert!(total_variation(&s.marginal, &base.marginal) < 1e-9);
            }
        }
    }

    #[test]
    fn extreme_likelihoods_do_not_underflow() {
        // rows 1 and 2 both favour column 0 by thousands of nats, so a plain
        // max rescaling leaves every permutation with weight 0
        let log = vec![0.0, 0.0, 0.0, 0.0, -3000.0, -3100.0, 0.0, -3050.0, -2900.0];
        let lik = LikelihoodMatrix::from_log(3, log).unwrap();
        for t in 0..3 {
            let a = enumerate_marginal(&lik, t).unwrap();
            let b = permanent_marginal(&lik, t).unwrap();
            assert!(total_variation(&a.marginal, &b.marginal) < 1e-6, "target {t}: {a:?} {b:?}");
        }
        let mut rng = StreamKey::root(23).rng();
        for n in 2..=8 {
            let log: Vec<f64> = (0..n * n).map(|_| -4000.0 * rng.random::<f64>()).collect();
            let lik = LikelihoodMatrix::from_log(n, log).unwrap();
            let a = enumerate_marginal(&lik, 0).unwrap();
            let b = permanent_marginal(&lik, 0).unwrap();
            assert!(total_variation(&a.marginal, &b.marginal) < 1e-6, "n {n}");
        }
    }

    #[test]
    fn caps() {
        let lik = LikelihoodMatrix::from_log(9, vec![0.0; 81]).unwrap();
        assert!(matches!(enumerate_marginal(&lik, 0), Err(Error::Resource(_))));
        let lik = LikelihoodMatrix::from_log(21, vec![0.0; 441]).unwrap();
        assert!(matches!(permanent_marginal(&lik, 0), Err(Error::Resource(_))));
    }

    #[test]
    fn permanent_twenty_is_tractable() {
        let mut rng = StreamKey::root(23).rng();
        let n = 20;
        let log: Vec<f64> = (0..n * n).map(|_| -rng.random::<f64>()).collect();
        let start = std::time::Instant::now();
        let s = permanent_marginal(&LikelihoodMatrix::from_log(n, log).unwrap(), 0).unwrap();
        assert!((s.marginal.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(start.elapsed().as_secs() < 60);
    }
}
