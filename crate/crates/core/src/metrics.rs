//! Ground-truth scoring of attacks and aggregation over trials.

use serde::{Deserialize, Serialize};

use crate::anonymize::Permutation;
use crate::attack::{AttackKind, MatchOutcome, Verdict};
use crate::error::{ensure, Result};

/// Per-trial flags for the three ways the threshold matcher can fail.
/// A threshold mismatch implies at least one of them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BadEvents {
    /// `|X̄_u - W̄_u| >= Δ` for some user u.
    pub first_step: bool,
    /// Some other user's parameter within 4Δ of user 1's.
    pub prior_proximity: bool,
    /// Some other user's training features within 2Δ of user 1's.
    pub w_separation: bool,
}

impl BadEvents {
    pub fn as_array(&self) -> [bool; 3] {
        [self.first_step, self.prior_proximity, self.w_separation]
    }
}

/// One attack's result inside a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub attack: AttackKind,
    pub verdict: Verdict,
    /// Only meaningful for `Matched`; false otherwise.
    pub correct: bool,
    pub estimate: u8,
    pub fallback: bool,
    /// Estimate differs from the true data point.
    pub error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub alpha: f64,
    /// m / n^{2/d + alpha}
    pub c: f64,
    /// l / n^{2/d + alpha}
    pub c_prime: f64,
    pub model: String,
    pub target: usize,
    pub hidden_pseudonym: usize,
    /// Time index at which the data point is estimated.
    pub k: usize,
    pub truth: u8,
    pub attacks: Vec<AttackRecord>,
    pub events: BadEvents,
    /// Bounds on the three bad events at this trial's parameters; absent
    /// for Markov models.
    pub event_bounds: Option<[f64; 3]>,
    pub entropy_nats: Option<f64>,
    pub wall_ms: f64,
}

impl TrialRecord {
    pub fn attack(&self, kind: AttackKind) -> Option<&AttackRecord> {
        self.attacks.iter().find(|a| a.attack == kind)
    }
}

/// Flat CSV row: one per (trial, attack).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: u64,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub alpha: f64,
    pub c: f64,
    pub c_prime: f64,
    pub model: String,
    pub attack: String,
    pub verdict: String,
    pub matched: Option<usize>,
    pub candidates: usize,
    pub hidden: usize,
    pub correct: bool,
    pub k: usize,
    pub truth: u8,
    pub estimate: u8,
    pub fallback: bool,
    pub error: bool,
    pub ev1: bool,
    pub ev2: bool,
    pub ev3: bool,
    pub ev1_bound: Option<f64>,
    pub ev2_bound: Option<f64>,
    pub ev3_bound: Option<f64>,
    pub entropy: Option<f64>,
    pub wall_ms: f64,
}

impl TrialRecord {
    pub fn rows(&self) -> Vec<TrialRow> {
        self.attacks
            .iter()
            .map(|a| TrialRow {
                trial: self.trial,
                n: self.n,
                m: self.m,
                l: self.l,
                alpha: self.alpha,
                c: self.c,
                c_prime: self.c_prime,
                model: self.model.clone(),
                attack: a.attack.name().into(),
                verdict: a.verdict.kind().into(),
                matched: a.verdict.matched(),
                candidates: match &a.verdict {
                    Verdict::Matched(_) => 1,
                    Verdict::Ambiguous(c) => c.len(),
                    Verdict::NoMatch => 0,
                },
                hidden: self.hidden_pseudonym,
                correct: a.correct,
                k: self.k,
                truth: self.truth,
                estimate: a.estimate,
                fallback: a.fallback,
                error: a.error,
                ev1: self.events.first_step,
                ev2: self.events.prior_proximity,
                ev3: self.events.w_separation,
                ev1_bound: self.event_bounds.map(|b| b[0]),
                ev2_bound: self.event_bounds.map(|b| b[1]),
                ev3_bound: self.event_bounds.map(|b| b[2]),
                entropy: self.entropy_nats,
                wall_ms: self.wall_ms,
            })
            .collect()
    }
}

/// True iff the verdict names the target's real pseudonym.
pub fn evaluate(outcome: &MatchOutcome, hidden: &Permutation, target: usize) -> bool {
    matches!(outcome.verdict, Verdict::Matched(j) if j == hidden.apply(target))
}

/// An empirical proportion with its Wilson 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub value: f64,
    pub half_width: f64,
    pub trials: usize,
}

impl Proportion {
    pub fn wilson(successes: usize, trials: usize) -> Result<Self> {
        ensure!(trials > 0, Argument, "proportion of zero trials");
        let z = 1.959_963_984_540_054;
        let nf = trials as f64;
        let p = successes as f64 / nf;
        let denom = 1.0 + z * z / nf;
        let half = z / denom * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt();
        Ok(Proportion {
            value: p,
            half_width: half,
            trials,
        })
    }

    /// Binomial standard error of the point estimate.
    pub fn std_error(&self) -> f64 {
        (self.value * (1.0 - self.value) / self.trials as f64).sqrt()
    }
}

fn records_for(records: &[TrialRecord], attack: AttackKind) -> Result<Vec<&AttackRecord>> {
    ensure!(!records.is_empty(), Argument, "no trial records");
    let v: Vec<&AttackRecord> = records.iter().filter_map(|r| r.attack(attack)).collect();
    ensure!(!v.is_empty(), Argument, "no records for attack {}", attack.name());
    Ok(v)
}

/// Fraction of trials where the estimate missed the true data point.
pub fn empirical_pe(records: &[TrialRecord], attack: AttackKind) -> Result<Proportion> {
    let v = records_for(records, attack)?;
    Proportion::wilson(v.iter().filter(|a| a.error).count(), v.len())
}

/// Fraction of trials with a correct match (ambiguous counts as a miss).
pub fn accuracy(records: &[TrialRecord], attack: AttackKind) -> Result<Proportion> {
    let v = records_for(records, attack)?;
    Proportion::wilson(v.iter().filter(|a| a.correct).count(), v.len())
}

pub fn ambiguity_rate(records: &[TrialRecord], attack: AttackKind) -> Result<Proportion> {
    let v = records_for(records, attack)?;
    Proportion::wilson(v.iter().filter(|a| matches!(a.verdict, Verdict::Ambiguous(_))).count(), v.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadEventSummary {
    pub trials: usize,
    pub frequency: [f64; 3],
    /// Bounds averaged over trials.
    pub mean_bound: Option<[f64; 3]>,
}

impl BadEventSummary {
    /// Allowed excess over the bound: `sigmas` binomial standard deviations
    /// at the bound's value.
    pub fn slack(&self, sigmas: f64) -> Option<[f64; 3]> {
        self.mean_bound
            .map(|b| b.map(|x| sigmas * (x * (1.0 - x) / self.trials as f64).sqrt()))
    }

    /// Per event, whether the empirical frequency is within bound + slack.
    pub fn within_bounds(&self, sigmas: f64) -> Option<[bool; 3]> {
        let (b, s) = (self.mean_bound?, self.slack(sigmas)?);
        Some([0, 1, 2].map(|i| self.frequency[i] <= b[i] + s[i]))
    }
}

pub fn bad_event_frequencies(records: &[TrialRecord]) -> Result<BadEventSummary> {
    ensure!(!records.is_empty(), Argument, "no trial records");
    let t = records.len() as f64;
    let mut freq = [0.0; 3];
    for r in records {
        for (f, e) in freq.iter_mut().zip(r.events.as_array()) {
            *f += e as u8 as f64;
        }
    }
    let mean_bound = if records.iter().all(|r| r.event_bounds.is_some()) {
        let mut b = [0.0; 3];
        for r in records {
            for (acc, x) in b.iter_mut().zip(r.event_bounds.unwrap()) {
                *acc += x;
            }
        }
        Some(b.map(|x| x / t))
    } else {
        None
    };
    Ok(BadEventSummary {
        trials: records.len(),
        frequency: freq.map(|x| x / t),
        mean_bound,
    })
}
