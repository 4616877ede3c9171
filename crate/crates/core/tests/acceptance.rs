//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one PASS/FAIL line each, and exits non-zero if any criterion fails.
//!
//! Measured values are compared against `docs/baselines.json`; set
//! `ANONMATCH_FREEZE_BASELINES=1` to rewrite that file from this run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anonmatch::anonymize::{apply, sample_permutation};
use anonmatch::attack::AttackKind;
use anonmatch::cli::report;
use anonmatch::cli::RunConfig;
use anonmatch::experiments::{aggregate, default_alpha, median, run_cell, run_sweep, CellConfig, SweepConfig, SWEEP_CSV};
use anonmatch::metrics::{accuracy, bad_event_frequencies, empirical_pe, TrialRecord};
use anonmatch::oracle::{enumerate_marginal, permanent_marginal, total_variation, LikelihoodMatrix};
use anonmatch::population::{MarkovStructure, ModelSpec, PriorSpec};
use anonmatch::rng::{Role, StreamKey};
use anonmatch::stats::length_from_exponent;
use anonmatch::tracegen::gen_users;
use rand::Rng;

type Values = BTreeMap<String, f64>;
type Criterion<'a> = (&'static str, &'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
    values: Values,
}

fn docs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs")
}

fn budget(secs: f64, limit: f64) -> (bool, String) {
    (secs < limit, format!("{secs:.1} s (budget {limit:.0} s)"))
}

fn values(pairs: &[(&str, f64)]) -> Values {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

fn acc(records: &[TrialRecord], kind: AttackKind) -> f64 {
    accuracy(records, kind).expect("records").value
}

/// Shared state: the criterion-1 cell is reused by criteria 7 and 9.
struct Ctx {
    accept: RunConfig,
    c1_records: Vec<TrialRecord>,
    c1_secs: f64,
}

fn two_state_no_privacy(ctx: &Ctx) -> Outcome {
    let r = &ctx.c1_records;
    let a = acc(r, AttackKind::Threshold);
    let pe = empirical_pe(r, AttackKind::Threshold).unwrap().value;
    let nn = acc(r, AttackKind::Nearest);
    let (t_ok, t) = budget(ctx.c1_secs, 60.0);
    Outcome {
        pass: a >= 0.95 && pe <= 0.05 && t_ok,
        detail: format!("m=l={}, threshold accuracy {a:.3} (need >= 0.95), P_e {pe:.3} (need <= 0.05); nearest accuracy {nn:.3}; {t}", r[0].m),
        values: values(&[("threshold_accuracy", a), ("threshold_pe", pe), ("nearest_accuracy", nn)]),
    }
}

fn two_state_perfect_anonymity() -> Outcome {
    let start = Instant::now();
    let (n, beta) = (50, 1.2);
    let len = length_from_exponent(n, beta, 1.0).unwrap();
    let cell = CellConfig::new(ModelSpec::TwoState, n, len, len, default_alpha(beta, beta, 1), 1002)
        .with_attacks(&[AttackKind::Nearest, AttackKind::Threshold]);
    let r = run_cell(&cell, 200).unwrap();
    let a = acc(&r, AttackKind::Nearest);
    let (t_ok, t) = budget(start.elapsed().as_secs_f64(), 10.0);
    Outcome {
        pass: len == 110 && a <= 0.20 && t_ok,
        detail: format!("m=l={len}, nearest accuracy {a:.3} (need <= 0.20, chance 0.02); {t}"),
        values: values(&[("nearest_accuracy", a), ("threshold_accuracy", acc(&r, AttackKind::Threshold))]),
    }
}

fn entropy_trend() -> Outcome {
    let start = Instant::now();
    let med = |len: usize| {
        let cell = CellConfig::new(ModelSpec::TwoState, 8, len, len, 0.5, 1003)
            .with_attacks(&[AttackKind::Nearest])
            .with_entropy(true);
        let mut h: Vec<f64> = run_cell(&cell, 100).unwrap().iter().map(|r| r.entropy_nats.unwrap()).collect();
        median(&mut h).unwrap()
    };
    let (small, large) = (med(4), med(4096));
    let (t_ok, t) = budget(start.elapsed().as_secs_f64(), 30.0);
    Outcome {
        pass: small - large >= 1.0 && large <= 0.1 && t_ok,
        detail: format!("median entropy {small:.3} nats at m=l=4, {large:.4} at m=l=4096, gap {:.3} (need >= 1, large <= 0.1); {t}", small - large),
        values: values(&[("median_entropy_m4", small), ("median_entropy_m4096", large)]),
    }
}

fn oracle_cross_validation() -> Outcome {
    let start = Instant::now();
    let mut rng = StreamKey::root(1004).rng();
    let models = [
        ModelSpec::TwoState,
        ModelSpec::r_state(3).unwrap(),
        ModelSpec::Markov(MarkovStructure::complete(2).unwrap()),
    ];
    let prior = PriorSpec::uniform();
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let n = rng.random_range(2..=8);
        let model = &models[case as usize % models.len()];
        let (m, l) = (rng.random_range(2..=60), rng.random_range(2..=60));
        let key = StreamKey::root(1004).child(case);
        let c = gen_users(model, &prior, n, m, l, key).unwrap();
        let pi = sample_permutation(n, &mut key.role(Role::Permutation).rng()).unwrap();
        let anon = apply(&c, &pi).unwrap();
        let lik = LikelihoodMatrix::from_view(&anon.adversary_view(), &prior).unwrap();
        let target = rng.random_range(0..n);
        let e = enumerate_marginal(&lik, target).unwrap();
        let p = permanent_marginal(&lik, target).unwrap();
        worst = worst.max(total_variation(&e.marginal, &p.marginal));
    }
    let (t_ok, t) = budget(start.elapsed().as_secs_f64(), 30.0);
    Outcome {
        pass: worst <= 1e-6 && t_ok,
        detail: format!("100 generated instances, max total variation {worst:.2e} (need <= 1e-6); {t}"),
        values: values(&[("max_tv", worst)]),
    }
}

/// Threshold accuracy at β = 0.5 and β = 1.8 on the diagonal.
fn threshold_shift(model: ModelSpec, seed: u64) -> Outcome {
    let start = Instant::now();
    let n = 50;
    let d = model.feature_dim();
    let mut out = Values::new();
    let mut accs = Vec::new();
    for beta in [0.5, 1.8] {
        let len = length_from_exponent(n, beta, 1.0).unwrap();
        let cell = CellConfig::new(model.clone(), n, len, len, default_alpha(beta, beta, d), seed).with_attacks(&AttackKind::ALL);
        let r = run_cell(&cell, 200).unwrap();
        for kind in AttackKind::ALL {
            out.insert(format!("{}_accuracy_beta{beta}", kind.name()), acc(&r, kind));
        }
        accs.push((len, acc(&r, AttackKind::Threshold), acc(&r, AttackKind::Nearest), acc(&r, AttackKind::Assignment)));
    }
    let (t_ok, t) = budget(start.elapsed().as_secs_f64(), 60.0);
    let (lo, hi) = (accs[0], accs[1]);
    Outcome {
        pass: lo.1 <= 0.2 && hi.1 >= 0.9 && t_ok,
        detail: format!(
            "{}, d={d}: threshold accuracy {:.3} at beta 0.5 (m=l={}, need <= 0.2), {:.3} at beta 1.8 (m=l={}, need >= 0.9); nearest {:.3}/{:.3}, assignment {:.3}/{:.3}; {t}",
            model.label(), lo.1, lo.0, hi.1, hi.0, lo.2, hi.2, lo.3, hi.3
        ),
        values: out,
    }
}

fn bound_audit(ctx: &Ctx) -> Outcome {
    let s = bad_event_frequencies(&ctx.c1_records).unwrap();
    let bounds = s.mean_bound.unwrap();
    let slack = s.slack(3.0).unwrap();
    let ok = s.within_bounds(3.0).unwrap();
    let names = ["first-step", "prior-proximity", "w-separation"];
    let parts: Vec<String> = (0..3)
        .map(|i| format!("{} {:.3} <= {:.3} + {:.3}", names[i], s.frequency[i], bounds[i], slack[i]))
        .collect();
    Outcome {
        pass: ok.iter().all(|&b| b),
        detail: parts.join(", "),
        values: values(&[
            ("ev1", s.frequency[0]),
            ("ev2", s.frequency[1]),
            ("ev3", s.frequency[2]),
            ("ev1_bound", bounds[0]),
            ("ev2_bound", bounds[1]),
            ("ev3_bound", bounds[2]),
        ]),
    }
}

fn asymmetric_failure() -> Outcome {
    let n = 50;
    let (m, l) = (length_from_exponent(n, 2.5, 1.0).unwrap(), length_from_exponent(n, 1.2, 1.0).unwrap());
    let cell = CellConfig::new(ModelSpec::TwoState, n, m, l, default_alpha(2.5, 1.2, 1), 1008).with_attacks(&[AttackKind::Nearest]);
    let a = acc(&run_cell(&cell, 200).unwrap(), AttackKind::Nearest);
    Outcome {
        pass: a <= 0.25,
        detail: format!("m={m}, l={l}, nearest accuracy {a:.3} (need <= 0.25)"),
        values: values(&[("nearest_accuracy", a)]),
    }
}

fn determinism(ctx: &Ctx) -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let bytes: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            run_sweep(&ctx.accept.sweep, Some(d.path()), |_| {}).unwrap();
            fs::read(d.path().join(SWEEP_CSV)).unwrap()
        })
        .collect();
    // the sweep must also agree with the records criterion 1 scored
    let cell = &ctx.accept.sweep.cells().unwrap()[0];
    let expected = aggregate(&cell.config, cell.beta_m, cell.beta_l, &ctx.c1_records).unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &expected {
        w.serialize(row).unwrap();
    }
    let expected = w.into_inner().unwrap();
    let same = bytes[0] == bytes[1];
    Outcome {
        pass: same && bytes[0] == expected,
        detail: format!(
            "two runs of docs/accept_two_state.cfg: {} bytes, identical {same}, consistent with criterion 1 records {}",
            bytes[0].len(),
            bytes[0] == expected
        ),
        values: Values::new(),
    }
}

fn permutation_uniformity() -> Outcome {
    let mut rng = StreamKey::root(1010).rng();
    let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    let draws = 100_000u64;
    for _ in 0..draws {
        *counts.entry(sample_permutation(5, &mut rng).unwrap().forward().to_vec()).or_default() += 1;
    }
    let expected = draws as f64 / 120.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum::<f64>()
        + (120 - counts.len()) as f64 * expected;
    // 99.9% quantile of chi-square with 119 degrees of freedom
    let q = 172.4177;
    Outcome {
        pass: counts.len() == 120 && chi2 < q,
        detail: format!("{} of 120 permutations seen, chi-square {chi2:.1} (need < {q})", counts.len()),
        values: values(&[("chi2", chi2)]),
    }
}

/// The two-state β ∈ {1.2, 2.8} grid with its accuracy map.
fn phase_grid() -> (Outcome, Outcome) {
    let mut cfg = SweepConfig::new(ModelSpec::TwoState, vec![50], vec![1.2, 2.8], 200, 1011);
    cfg.diagonal = false;
    cfg.attacks = vec![AttackKind::Threshold, AttackKind::Nearest];
    let dir = tempfile::tempdir().unwrap();
    let res = run_sweep(&cfg, Some(dir.path()), |_| {}).unwrap();
    let get = |bm: f64, bl: f64, attack: &str| {
        res.rows
            .iter()
            .find(|r| r.beta_m == bm && r.beta_l == bl && r.attack == attack)
            .map(|r| r.accuracy)
            .unwrap()
    };
    let (lo, hi) = (get(1.2, 1.2, "threshold"), get(2.8, 2.8, "threshold"));
    let (nlo, nhi) = (get(1.2, 1.2, "nearest"), get(2.8, 2.8, "nearest"));
    let sweep = Outcome {
        pass: lo < 0.2 && hi > 0.9,
        detail: format!("threshold accuracy {lo:.3} at beta 1.2 (need < 0.2), {hi:.3} at beta 2.8 (need > 0.9); nearest {nlo:.3}/{nhi:.3}"),
        values: values(&[("threshold_beta1.2", lo), ("threshold_beta2.8", hi), ("nearest_beta1.2", nlo), ("nearest_beta2.8", nhi)]),
    };

    let rep = report::build(&dir.path().join(SWEEP_CSV)).unwrap();
    let map = report::render(&rep);
    println!("{map}");
    let mut ok = true;
    for attack in ["threshold", "nearest"] {
        let high = get(2.8, 2.8, attack);
        let band = [get(1.2, 1.2, attack), get(1.2, 2.8, attack), get(2.8, 1.2, attack)];
        ok &= band.iter().all(|&b| b < high);
    }
    let heat = Outcome {
        pass: ok && map.matches(" | ").count() == 4,
        detail: "accuracy where both exponents exceed 2/d is above every cell of the min(beta_m, beta_l) < 2/d band, for both attacks".into(),
        values: Values::new(),
    };
    (sweep, heat)
}

fn trial_budget() -> Outcome {
    let n = 50;
    let len = length_from_exponent(n, 2.5, 1.0).unwrap();
    let cell = CellConfig::new(ModelSpec::TwoState, n, len, len, 0.5, 1012);
    let start = Instant::now();
    anonmatch::experiments::run_trial(&cell, 0).unwrap();
    let (ok, t) = budget(start.elapsed().as_secs_f64(), 1.0);
    Outcome {
        pass: ok,
        detail: format!("one n=50, m=l={len} trial in {t}"),
        values: Values::new(),
    }
}

fn compare_baselines(measured: &BTreeMap<String, Values>) -> Outcome {
    let path = docs().join("baselines.json");
    let freeze = std::env::var_os("ANONMATCH_FREEZE_BASELINES").is_some();
    if freeze || !path.exists() {
        let text = serde_json::to_string_pretty(measured).unwrap();
        fs::write(&path, text + "\n").unwrap();
        return Outcome {
            pass: true,
            detail: format!("wrote {}", path.display()),
            values: Values::new(),
        };
    }
    let frozen: BTreeMap<String, Values> = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let mut drift = Vec::new();
    for (crit, vals) in measured {
        for (k, v) in vals {
            match frozen.get(crit).and_then(|f| f.get(k)) {
                Some(b) if (b - v).abs() <= 1e-9 * b.abs().max(1.0) => {}
                Some(b) => drift.push(format!("{crit}.{k}: {v} vs frozen {b}")),
                None => drift.push(format!("{crit}.{k}: not in baseline")),
            }
        }
    }
    Outcome {
        pass: drift.is_empty(),
        detail: if drift.is_empty() {
            "all measured values match docs/baselines.json".into()
        } else {
            drift.join("; ")
        },
        values: Values::new(),
    }
}

fn main() {
    let accept = RunConfig::from_file(&docs().join("accept_two_state.cfg")).expect("acceptance config");
    let cell = accept.sweep.cells().unwrap().remove(0).config;
    let start = Instant::now();
    let c1_records = run_cell(&cell, accept.sweep.trials).unwrap();
    let ctx = Ctx {
        accept,
        c1_records,
        c1_secs: start.elapsed().as_secs_f64(),
    };

    let criteria: Vec<Criterion<'_>> = vec![
        ("1", "two-state no-privacy regime", Box::new(|| two_state_no_privacy(&ctx))),
        ("2", "two-state perfect-anonymity regime", Box::new(two_state_perfect_anonymity)),
        ("3", "posterior entropy trend", Box::new(entropy_trend)),
        ("4", "permanent vs enumeration", Box::new(oracle_cross_validation)),
        ("5", "r-state threshold shift", Box::new(|| threshold_shift(ModelSpec::r_state(3).unwrap(), 1005))),
        ("6", "markov threshold shift", Box::new(|| threshold_shift(ModelSpec::Markov(MarkovStructure::complete(2).unwrap()), 1006))),
        ("7", "bad-event bound audit", Box::new(|| bound_audit(&ctx))),
        ("8", "one short side protects", Box::new(asymmetric_failure)),
        ("9", "sweep determinism", Box::new(|| determinism(&ctx))),
        ("10", "permutation uniformity", Box::new(permutation_uniformity)),
    ];

    let mut lines = Vec::new();
    let mut measured = BTreeMap::new();
    for (id, name, run) in &criteria {
        let t = Instant::now();
        let o = run();
        println!("criterion {id:>2} {:<40} {}  {} [{:.1} s]", name, if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
        measured.insert(format!("criterion_{id}"), o.values);
        lines.push((format!("criterion {id}"), o.pass));
    }
    let t = Instant::now();
    let (sweep, heat) = phase_grid();
    let grid_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let single = trial_budget();
    let extra = [
        ("sweep beta {1.2, 2.8} endpoints", sweep, grid_secs),
        ("accuracy map phase band", heat, 0.0),
        ("single trial runtime", single, t.elapsed().as_secs_f64()),
    ];
    for (name, o, secs) in extra {
        println!("check        {:<40} {}  {} [{secs:.1} s]", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.values.is_empty() {
            measured.insert("sweep_grid".to_string(), o.values);
        }
        lines.push((name.to_string(), o.pass));
    }
    let b = compare_baselines(&measured);
    println!("check        {:<40} {}  {}", "frozen baselines", if b.pass { "PASS" } else { "FAIL" }, b.detail);
    lines.push(("baselines".into(), b.pass));

    let failed: Vec<&str> = lines.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect();
    println!("\nacceptance: {} of {} passed", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
