//! Command-line front end: `simulate`, `sweep`, `posterior`, `report`.
//!
//! Exit status is 0 on success, 1 on runtime failure and 2 on usage or
//! configuration errors.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::anonymize::{apply, sample_permutation};
use crate::attack::AttackKind;
use crate::error::{Error, Result};
use crate::experiments::{default_alpha, run_cell, run_sweep, write_trials_csv, write_trials_jsonl, CellConfig};
use crate::format::write_dump;
use crate::metrics::{accuracy, ambiguity_rate, bad_event_frequencies, empirical_pe, TrialRecord};
use crate::oracle::{posterior, PosteriorMethod, PERMANENT_CAP};
use crate::population::{ModelSpec, PriorSpec};
use crate::rng::{Role, StreamKey};
use crate::tracegen::gen_users;

pub use config::RunConfig;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "ANONMATCH_OUT";

#[derive(Debug, Parser)]
#[command(name = "anonmatch", version, about = "Statistical matching attacks on anonymized traces")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run trials for a single (n, m, l) cell.
    Simulate(SimulateArgs),
    /// Run an exponent-grid sweep described by a config file.
    Sweep(SweepArgs),
    /// Exact posterior of a user's pseudonym for one generated instance.
    Posterior(PosteriorArgs),
    /// Long-format CSV and ASCII heat map from a sweep.csv.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    TwoState,
    RState,
    Markov,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "two-state")]
    pub model: ModelKind,
    /// Number of states (r-state, optional for markov).
    #[arg(long)]
    pub r: Option<usize>,
    /// Edge list file of `i j` pairs (markov).
    #[arg(long)]
    pub edges: Option<PathBuf>,
}

impl ModelArgs {
    fn build(&self) -> Result<ModelSpec> {
        let kind = match self.model {
            ModelKind::TwoState => "two-state",
            ModelKind::RState => "r-state",
            ModelKind::Markov => "markov",
        };
        config::build_model(kind, self.r, self.edges.as_deref())
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub l: usize,
    /// Threshold exponent; by default derived from the cell's length exponents.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub trials: u64,
    /// Comma-separated: threshold, nearest, assignment.
    #[arg(long, default_value = "threshold", value_delimiter = ',')]
    pub attack: Vec<String>,
    /// Also compute the exact posterior entropy (n ≤ 20).
    #[arg(long)]
    pub entropy: bool,
    /// Output directory (default: $ANONMATCH_OUT or `.`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write trials.jsonl.
    #[arg(long)]
    pub json: bool,
    /// Also write the first trial's traces as a binary dump.
    #[arg(long)]
    pub dump_traces: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Enum,
    Permanent,
}

#[derive(Debug, Args)]
pub struct PosteriorArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub l: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "permanent")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0)]
    pub target: usize,
    /// Print a JSON object instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Long-format CSV path (default: report.csv next to the input).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// JSON emitted by `posterior --json`.
#[derive(Debug, Serialize)]
pub struct PosteriorOutput {
    pub model: String,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub seed: u64,
    pub target: usize,
    pub method: PosteriorMethod,
    pub marginal: Vec<f64>,
    pub entropy_nats: f64,
    pub map_estimate: usize,
    pub true_pseudonym: usize,
}

fn default_out(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Argument("--threads must be at least 1".into()));
        }
        // a second initialization (tests in one process) is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

fn parse_attacks(names: &[String]) -> Result<Vec<AttackKind>> {
    let mut out: Vec<AttackKind> = Vec::new();
    for name in names {
        let kind = AttackKind::parse(name.trim())?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    Ok(out)
}

/// Length exponent of `len` relative to `n`.
fn exponent(len: usize, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    (len.max(1) as f64).ln() / (n as f64).ln()
}

fn summary(cell: &CellConfig, records: &[TrialRecord]) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "model   {}", cell.model.label());
    let _ = writeln!(s, "n={} m={} l={} alpha={} seed={}", cell.n, cell.m, cell.l, cell.alpha, cell.seed);
    let _ = writeln!(s, "trials  {}", records.len());
    for &kind in &cell.attacks {
        let acc = accuracy(records, kind)?;
        let amb = ambiguity_rate(records, kind)?;
        let pe = empirical_pe(records, kind)?;
        let _ = writeln!(
            s,
            "{:<10} accuracy {:.3} ± {:.3}  ambiguity {:.3}  P_e {:.3}",
            kind.name(),
            acc.value,
            acc.half_width,
            amb.value,
            pe.value
        );
    }
    let ev = bad_event_frequencies(records)?;
    let _ = write!(
        s,
        "bad events: first-step {:.3}  prior-proximity {:.3}  w-separation {:.3}",
        ev.frequency[0], ev.frequency[1], ev.frequency[2]
    );
    match ev.mean_bound {
        Some(b) => {
            let _ = writeln!(s, "  (bounds {:.3} {:.3} {:.3})", b[0], b[1], b[2]);
        }
        None => s.push('\n'),
    }
    let mut entropies: Vec<f64> = records.iter().filter_map(|r| r.entropy_nats).collect();
    if let Some(med) = crate::experiments::median(&mut entropies) {
        let _ = writeln!(s, "median posterior entropy {med:.4} nats");
    }
    Ok(s)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let model = a.model.build()?;
    let attacks = parse_attacks(&a.attack)?;
    if a.trials == 0 {
        return Err(Error::Argument("--trials must be at least 1".into()));
    }
    let alpha = a
        .alpha
        .unwrap_or_else(|| default_alpha(exponent(a.m, a.n), exponent(a.l, a.n), model.feature_dim()));
    let cell = CellConfig::new(model, a.n, a.m, a.l, alpha, a.seed)
        .with_attacks(&attacks)
        .with_entropy(a.entropy);
    cell.validate()?;

    let out = default_out(a.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let records = run_cell(&cell, a.trials)?;
    write_trials_csv(&out.join("trials.csv"), &records)?;
    if a.json {
        write_trials_jsonl(&out.join("trials.jsonl"), &records)?;
    }
    if a.dump_traces {
        let collection = crate::tracegen::gen_collection(&cell.model, &cell.prior, cell.n, cell.m, cell.l, cell.key().child(0))?;
        let path = out.join("traces.bin");
        let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        write_dump(&mut f, &collection).map_err(|e| Error::io(&path, e))?;
    }
    let text = summary(&cell, &records)?;
    let path = out.join("summary.txt");
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    print!("{text}");
    Ok(())
}

fn cmd_sweep(a: SweepArgs, threads: Option<usize>) -> Result<()> {
    let cfg = RunConfig::from_file(&a.config)?;
    init_threads(threads.or(cfg.threads))?;
    let out = default_out(a.out.or(cfg.output_dir));
    let result = run_sweep(&cfg.sweep, Some(&out), |c| {
        eprintln!(
            "[{}/{}] n={} beta_m={} beta_l={} {} ({:.2}s)",
            c.index + 1,
            c.total,
            c.n,
            c.beta_m,
            c.beta_l,
            if c.computed { "computed" } else { "reused" },
            c.seconds
        );
    })?;
    println!(
        "{} rows, {} of {} cells computed → {}",
        result.rows.len(),
        result.recomputed(),
        result.cells.len(),
        out.join(crate::experiments::SWEEP_CSV).display()
    );
    Ok(())
}

/// Generates one instance and computes the exact posterior of `target`.
pub fn posterior_output(model: ModelSpec, n: usize, m: usize, l: usize, seed: u64, target: usize, method: PosteriorMethod) -> Result<PosteriorOutput> {
    if n == 0 || n > PERMANENT_CAP {
        return Err(Error::Resource(format!("posterior needs 1 ≤ n ≤ {PERMANENT_CAP}, got {n}")));
    }
    if target >= n {
        return Err(Error::Argument(format!("--target {target} out of range for n = {n}")));
    }
    let prior = PriorSpec::uniform();
    let key = StreamKey::root(seed);
    let collection = gen_users(&model, &prior, n, m, l, key)?;
    let pi = sample_permutation(n, &mut key.role(Role::Permutation).rng())?;
    let anon = apply(&collection, &pi)?;
    let summary = posterior(&anon.adversary_view(), &prior, target, method)?;
    Ok(PosteriorOutput {
        model: model.label(),
        n,
        m,
        l,
        seed,
        target,
        method,
        map_estimate: summary.map_estimate(),
        true_pseudonym: pi.apply(target),
        marginal: summary.marginal,
        entropy_nats: summary.entropy_nats,
    })
}

fn cmd_posterior(a: PosteriorArgs) -> Result<()> {
    let model = a.model.build()?;
    let method = match a.method {
        MethodArg::Enum => PosteriorMethod::Enumeration,
        MethodArg::Permanent => PosteriorMethod::Permanent,
    };
    let out = posterior_output(model, a.n, a.m, a.l, a.seed, a.target, method)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("model {}  n={} m={} l={}  target {}", out.model, out.n, out.m, out.l, out.target);
        for (v, p) in out.marginal.iter().enumerate() {
            println!("  P(pseudonym = {v:>2}) = {p:.6}");
        }
        println!("entropy {:.6} nats", out.entropy_nats);
        println!("MAP {}  (true {})", out.map_estimate, out.true_pseudonym);
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| a.input.with_file_name("report.csv"));
    let rep = report::build(&a.input)?;
    report::write_long(&out, &rep)?;
    print!("{}", report::render(&rep));
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let threads = cli.threads;
    let result = match cli.command {
        Command::Sweep(a) => cmd_sweep(a, threads),
        other => init_threads(threads).and_then(|()| match other {
            Command::Simulate(a) => cmd_simulate(a),
            Command::Posterior(a) => cmd_posterior(a),
            Command::Report(a) => cmd_report(a),
            Command::Sweep(_) => unreachable!(),
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> ! {
    std::process::exit(run(std::env::args_os()))
}

