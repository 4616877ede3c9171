//! Monte Carlo trials and (m, l)-plane sweeps.
//!
//! A cell fixes (n, m, l); trial `t` of a cell draws everything from the
//! stream `seed / cell / t`, so cells and trials can run in any order, in
//! parallel, or be recomputed in isolation with identical results.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anonymize::{apply, sample_permutation};
use crate::attack::{
    estimate_datapoint, full_assignment_match, nearest_neighbor_match, threshold_match, AssignmentOptions, AttackKind,
    MatchOutcome,
};
use crate::error::{ensure, Error, Result};
use crate::metrics::{
    accuracy, ambiguity_rate, bad_event_frequencies, empirical_pe, evaluate, AttackRecord, BadEvents, TrialRecord,
};
use crate::oracle::{posterior_by_permanent, PERMANENT_CAP};
use crate::population::{separation_bound, ModelSpec, PriorSpec, UserParams};
use crate::rng::{Role, StreamKey};
use crate::stats::{chernoff_bound, featurize, length_from_exponent, linf, threshold, training_deviation_bound, ThresholdSpec};
use crate::tracegen::gen_collection;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_META: &str = "sweep.meta.json";

/// Default attack radius exponent for a cell: `max(β - 2/d, 0.1)` with β
/// the smaller of the two length exponents.
pub fn default_alpha(beta_m: f64, beta_l: f64, dim: usize) -> f64 {
    (beta_m.min(beta_l) - 2.0 / dim as f64).max(0.1)
}

/// Everything one trial needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub model: ModelSpec,
    pub prior: PriorSpec,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub alpha: f64,
    pub attacks: Vec<AttackKind>,
    /// Compute the exact posterior entropy of the target (n <= 20).
    pub entropy: bool,
    pub seed: u64,
    pub assignment: AssignmentOptions,
}

impl CellConfig {
    pub fn new(model: ModelSpec, n: usize, m: usize, l: usize, alpha: f64, seed: u64) -> Self {
        CellConfig {
            model,
            prior: PriorSpec::uniform(),
            n,
            m,
            l,
            alpha,
            attacks: vec![AttackKind::Threshold],
            entropy: false,
            seed,
            assignment: AssignmentOptions::default(),
        }
    }

    pub fn with_attacks(mut self, attacks: &[AttackKind]) -> Self {
        self.attacks = attacks.to_vec();
        self
    }

    pub fn with_entropy(mut self, on: bool) -> Self {
        self.entropy = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n >= 2, Config, "n must be at least 2, got {}", self.n);
        ensure!(self.m >= 1 && self.l >= 1, Config, "trace lengths must be positive");
        if self.model.is_markov() {
            ensure!(self.m >= 2 && self.l >= 2, Config, "markov traces need m, l >= 2");
        }
        ensure!(self.alpha > 0.0 && self.alpha.is_finite(), Config, "alpha must be positive, got {}", self.alpha);
        ensure!(!self.attacks.is_empty(), Config, "no attack selected");
        ensure!(
            !self.entropy || self.n <= PERMANENT_CAP,
            Config,
            "entropy needs n <= {PERMANENT_CAP}, got {}",
            self.n
        );
        self.prior.validate(&self.model)
    }

    /// Stream of this cell; depends only on the seed, model and (n, m, l).
    pub fn key(&self) -> StreamKey {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.model.label().as_bytes());
        if let ModelSpec::Markov(st) = &self.model {
            for &(i, j) in st.edges() {
                eat(&[i as u8, j as u8]);
            }
        }
        for x in [self.n, self.m, self.l] {
            eat(&(x as u64).to_le_bytes());
        }
        StreamKey::root(self.seed).child(h)
    }

    fn length_constant(&self, len: usize) -> f64 {
        let d = self.model.feature_dim() as f64;
        len as f64 / (self.n as f64).powf(2.0 / d + self.alpha)
    }
}

fn coordinate_probs(p: &UserParams) -> Option<Vec<f64>> {
    match p {
        UserParams::Markov { .. } => None,
        _ => Some(p.free_vector()),
    }
}

fn event_bounds(cell: &CellConfig, params: &[UserParams], delta: f64) -> Result<Option<[f64; 3]>> {
    if coordinate_probs(&params[0]).is_none() {
        return Ok(None);
    }
    let sep = separation_bound(&cell.prior, &cell.model, delta, cell.n)?;
    let (mut first, mut wsep) = (0.0, sep);
    for u in params {
        for p in coordinate_probs(u).expect("i.i.d. model") {
            first += chernoff_bound(cell.m, delta, p)? + chernoff_bound(cell.l, delta, p)?;
            wsep += training_deviation_bound(cell.l, delta, p)?;
        }
    }
    Ok(Some([first.min(1.0), sep, wsep.min(1.0)]))
}

/// One generate → anonymize → attack → evaluate pass. User 0 is the target.
pub fn run_trial(cell: &CellConfig, trial: u64) -> Result<TrialRecord> {
    let start = Instant::now();
    let key = cell.key().child(trial);
    let collection = gen_collection(&cell.model, &cell.prior, cell.n, cell.m, cell.l, key)?;
    let pi = sample_permutation(cell.n, &mut key.role(Role::Permutation).rng())?;
    let anon = apply(&collection, &pi)?;
    let view = anon.adversary_view();
    let target = 0;
    let k = key.role(Role::TimeIndex).rng().random_range(0..cell.m);
    let truth = collection.actual[target].samples()[k];

    let mut attacks = Vec::with_capacity(cell.attacks.len());
    for &kind in &cell.attacks {
        let outcome: MatchOutcome = match kind {
            AttackKind::Threshold => threshold_match(&view, target, cell.alpha)?,
            AttackKind::Nearest => nearest_neighbor_match(&view, target)?,
            AttackKind::Assignment => full_assignment_match(&view, cell.assignment)?.swap_remove(target),
        };
        let correct = evaluate(&outcome, &pi, target);
        let est = estimate_datapoint(&view, &outcome, target, k)?;
        attacks.push(AttackRecord {
            attack: kind,
            verdict: outcome.verdict,
            correct,
            estimate: est.state,
            fallback: est.fallback,
            error: est.state != truth,
        });
    }

    let dim = cell.model.feature_dim();
    let delta = threshold(ThresholdSpec {
        n: cell.n,
        alpha: cell.alpha,
        dim,
    })?;
    let w = view.training_features();
    let x: Vec<_> = collection
        .actual
        .iter()
        .map(|t| featurize(t, &cell.model))
        .collect::<Result<_>>()?;
    let p0 = collection.params[target].free_vector();
    let others = (0..cell.n).filter(|&u| u != target);
    let events = BadEvents {
        first_step: (0..cell.n).any(|u| linf(&x[u].values, &w[u].values) >= delta),
        prior_proximity: others
            .clone()
            .any(|u| linf(&collection.params[u].free_vector(), &p0) <= 4.0 * delta),
        w_separation: others.clone().any(|u| linf(&w[u].values, &w[target].values) <= 2.0 * delta),
    };
    let entropy_nats = if cell.entropy {
        Some(posterior_by_permanent(&view, &cell.prior, target)?.entropy_nats)
    } else {
        None
    };

    Ok(TrialRecord {
        trial,
        n: cell.n,
        m: cell.m,
        l: cell.l,
        alpha: cell.alpha,
        c: cell.length_constant(cell.m),
        c_prime: cell.length_constant(cell.l),
        model: cell.model.label(),
        target,
        hidden_pseudonym: pi.apply(target),
        k,
        truth,
        attacks,
        events,
        event_bounds: event_bounds(cell, &collection.params, delta)?,
        entropy_nats,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Trials `0..trials` of a cell, in trial order.
pub fn run_cell(cell: &CellConfig, trials: u64) -> Result<Vec<TrialRecord>> {
    cell.validate()?;
    (0..trials).into_par_iter().map(|t| run_trial(cell, t)).collect()
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub beta_m: f64,
    pub beta_l: f64,
    pub m: usize,
    pub l: usize,
    pub model: String,
    pub attack: String,
    pub trials: usize,
    pub accuracy: f64,
    pub ambiguity: f64,
    pub pe: f64,
    pub ev1: f64,
    pub ev2: f64,
    pub ev3: f64,
    pub entropy_median: Option<f64>,
    /// Trials that contributed to `entropy_median`.
    pub entropy_n: usize,
}

pub const SWEEP_COLUMNS: [&str; 16] = [
    "n", "beta_m", "beta_l", "m", "l", "model", "attack", "trials", "accuracy", "ambiguity", "pe", "ev1", "ev2", "ev3",
    "entropy_median", "entropy_n",
];

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

/// Per-attack aggregate rows for one cell.
pub fn aggregate(cell: &CellConfig, beta_m: f64, beta_l: f64, records: &[TrialRecord]) -> Result<Vec<SweepRow>> {
    let events = bad_event_frequencies(records)?;
    let mut entropies: Vec<f64> = records.iter().filter_map(|r| r.entropy_nats).collect();
    let entropy_n = entropies.len();
    let entropy_median = median(&mut entropies);
    cell.attacks
        .iter()
        .map(|&a| {
            Ok(SweepRow {
                n: cell.n,
                beta_m,
                beta_l,
                m: cell.m,
                l: cell.l,
                model: cell.model.label(),
                attack: a.name().into(),
                trials: records.len(),
                accuracy: accuracy(records, a)?.value,
                ambiguity: ambiguity_rate(records, a)?.value,
                pe: empirical_pe(records, a)?.value,
                ev1: events.frequency[0],
                ev2: events.frequency[1],
                ev3: events.frequency[2],
                entropy_median,
                entropy_n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub model: ModelSpec,
    pub prior: PriorSpec,
    pub ns: Vec<usize>,
    pub beta_m: Vec<f64>,
    pub beta_l: Vec<f64>,
    /// Only cells with `beta_m[i] == beta_l[i]` pairs (zip) instead of the
    /// full grid.
    pub diagonal: bool,
    /// Fixed attack exponent; `None` applies [`default_alpha`] per cell.
    pub alpha: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    pub attacks: Vec<AttackKind>,
    pub entropy: bool,
    pub assignment: AssignmentOptions,
}

/// A grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub beta_m: f64,
    pub beta_l: f64,
    pub config: CellConfig,
}

impl SweepConfig {
    pub fn new(model: ModelSpec, ns: Vec<usize>, betas: Vec<f64>, trials: u64, seed: u64) -> Self {
        SweepConfig {
            model,
            prior: PriorSpec::uniform(),
            ns,
            beta_m: betas.clone(),
            beta_l: betas,
            diagonal: true,
            alpha: None,
            trials,
            seed,
            attacks: vec![AttackKind::Threshold],
            entropy: false,
            assignment: AssignmentOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.trials >= 1, Config, "sweep.trials must be at least 1");
        ensure!(!self.ns.is_empty(), Config, "sweep.n is empty");
        ensure!(!self.beta_m.is_empty() && !self.beta_l.is_empty(), Config, "sweep grid is empty");
        ensure!(
            !self.diagonal || self.beta_m.len() == self.beta_l.len(),
            Config,
            "diagonal sweep needs as many beta_m as beta_l values"
        );
        ensure!(
            self.beta_m.iter().chain(&self.beta_l).all(|b| b.is_finite() && *b >= 0.0),
            Config,
            "beta values must be finite and non-negative"
        );
        ensure!(!self.attacks.is_empty(), Config, "sweep.attacks is empty");
        if self.entropy {
            let max = self.ns.iter().max().copied().unwrap_or(0);
            ensure!(max <= PERMANENT_CAP, Config, "sweep.entropy needs every n <= {PERMANENT_CAP}, got {max}");
        }
        if let Some(a) = self.alpha {
            ensure!(a > 0.0 && a.is_finite(), Config, "sweep.alpha must be positive");
        }
        self.prior.validate(&self.model)
    }

    /// Cells in canonical order: n, then beta_m, then beta_l.
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        self.validate()?;
        let pairs: Vec<(f64, f64)> = if self.diagonal {
            self.beta_m.iter().copied().zip(self.beta_l.iter().copied()).collect()
        } else {
            self.beta_m
                .iter()
                .flat_map(|&bm| self.beta_l.iter().map(move |&bl| (bm, bl)))
                .collect()
        };
        let dim = self.model.feature_dim();
        let mut cells = Vec::new();
        for &n in &self.ns {
            for &(beta_m, beta_l) in &pairs {
                let m = length_from_exponent(n, beta_m, 1.0)?;
                let l = length_from_exponent(n, beta_l, 1.0)?;
                let alpha = self.alpha.unwrap_or_else(|| default_alpha(beta_m, beta_l, dim));
                let config = CellConfig {
                    model: self.model.clone(),
                    prior: self.prior,
                    n,
                    m,
                    l,
                    alpha,
                    attacks: self.attacks.clone(),
                    entropy: self.entropy,
                    seed: self.seed,
                    assignment: self.assignment,
                };
                config.validate()?;
                cells.push(SweepCell { beta_m, beta_l, config });
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub index: usize,
    pub total: usize,
    pub n: usize,
    pub beta_m: f64,
    pub beta_l: f64,
    /// False when rows were reused from an earlier run.
    pub computed: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<CellReport>,
}

impl SweepResult {
    pub fn recomputed(&self) -> usize {
        self.cells.iter().filter(|c| c.computed).count()
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    version: String,
    seed: u64,
    config: SweepConfig,
}

type CellId = (usize, u64, u64);

fn cell_id(n: usize, beta_m: f64, beta_l: f64) -> CellId {
    (n, beta_m.to_bits(), beta_l.to_bits())
}

fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs every cell × trial and aggregates.
///
/// With an output directory, rows are appended to `sweep.csv` as each cell
/// finishes. A later run with the same configuration skips cells whose rows
/// are already complete, then rewrites the file in canonical cell order.
pub fn run_sweep(config: &SweepConfig, out_dir: Option<&Path>, mut on_cell: impl FnMut(&CellReport)) -> Result<SweepResult> {
    let cells = config.cells()?;
    let attacks: Vec<String> = config.attacks.iter().map(|a| a.name().to_string()).collect();

    let mut done: BTreeMap<CellId, Vec<SweepRow>> = BTreeMap::new();
    let mut csv_path: Option<PathBuf> = None;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta_path = dir.join(SWEEP_META);
        let path = dir.join(SWEEP_CSV);
        let meta = Meta {
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
        };
        let meta_json = serde_json::to_string_pretty(&meta)?;
        let resumable = path.exists()
            && fs::read_to_string(&meta_path)
                .ok()
                .and_then(|s| serde_json::from_str::<Meta>(&s).ok())
                .is_some_and(|old| serde_json::to_value(&old.config).ok() == serde_json::to_value(config).ok());
        if resumable {
            for row in read_rows(&path)? {
                done.entry(cell_id(row.n, row.beta_m, row.beta_l)).or_default().push(row);
            }
            // a cell is reusable only if every selected attack has its row
            done.retain(|_, rows| {
                let have: HashSet<&str> = rows.iter().map(|r| r.attack.as_str()).collect();
                attacks.iter().all(|a| have.contains(a.as_str()))
            });
        } else if path.exists() {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
        fs::write(&meta_path, meta_json + "\n").map_err(|e| Error::io(&meta_path, e))?;
        // keep only the rows we are reusing
        let keep: Vec<SweepRow> = done.values().flatten().cloned().collect();
        write_rows(&path, &keep)?;
        csv_path = Some(path);
    }

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let total = cells.len();
    for (index, cell) in cells.iter().enumerate() {
        let id = cell_id(cell.config.n, cell.beta_m, cell.beta_l);
        let start = Instant::now();
        let (cell_rows, computed) = match done.remove(&id) {
            Some(existing) => {
                let ordered = attacks
                    .iter()
                    .map(|a| existing.iter().find(|r| &r.attack == a).cloned().expect("checked complete"))
                    .collect();
                (ordered, false)
            }
            None => {
                let records = run_cell(&cell.config, config.trials)?;
                let cell_rows = aggregate(&cell.config, cell.beta_m, cell.beta_l, &records)?;
                if let Some(path) = &csv_path {
                    append_rows(path, &cell_rows)?;
                }
                (cell_rows, true)
            }
        };
        let report = CellReport {
            index,
            total,
            n: cell.config.n,
            beta_m: cell.beta_m,
            beta_l: cell.beta_l,
            computed,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_cell(&report);
        reports.push(report);
        rows.extend(cell_rows);
    }
    if let Some(path) = &csv_path {
        write_rows(path, &rows)?;
    }
    Ok(SweepResult { rows, cells: reports })
}

fn append_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let has_header = fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(!has_header).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes trial records as CSV (one row per trial and attack).
pub fn write_trials_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        for row in r.rows() {
            w.serialize(row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes trial records as JSON lines.
pub fn write_trials_jsonl(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
