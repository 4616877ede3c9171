//! Flat `section.key = value` run configuration.
//!
//! ```text
//! # comment
//! model.kind = r-state
//! model.r = 3
//! sweep.n = 50
//! sweep.betas = 0.5, 1.8
//! sweep.trials = 200
//! seed = 42
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attack::{AssignmentOptions, AttackKind};
use crate::error::{Error, Result};
use crate::experiments::SweepConfig;
use crate::population::{ModelSpec, PriorSpec};

pub const KNOWN_KEYS: &[&str] = &[
    "model.kind",
    "model.r",
    "model.edges",
    "prior.kind",
    "prior.low",
    "prior.high",
    "prior.delta1",
    "prior.delta2",
    "sweep.n",
    "sweep.betas",
    "sweep.beta_m",
    "sweep.beta_l",
    "sweep.grid",
    "sweep.alpha",
    "sweep.trials",
    "sweep.attacks",
    "sweep.entropy",
    "sweep.assignment_cap",
    "sweep.greedy_beyond_cap",
    "seed",
    "output.dir",
    "run.threads",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sweep: SweepConfig,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Parses `key = value` lines. Duplicate keys are errors.
pub fn parse_pairs(text: &str) -> std::result::Result<BTreeMap<String, String>, Vec<String>> {
    let mut map = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                let k = k.trim().to_string();
                if map.insert(k.clone(), v.trim().to_string()).is_some() {
                    errors.push(format!("line {}: duplicate key `{k}`", i + 1));
                }
            }
            None => errors.push(format!("line {}: expected `key = value`", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(map)
    } else {
        Err(errors)
    }
}

/// Reads an edge list: one `i j` pair per line, `#` comments allowed.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parsed = match parts.as_slice() {
            [a, b] => a.parse().ok().zip(b.parse().ok()),
            _ => None,
        };
        match parsed {
            Some(e) => edges.push(e),
            None => {
                return Err(Error::Config(format!(
                    "{}: line {}: expected two state indices `i j`",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(edges)
}

/// Builds a model from `kind`, optional `r`, and an optional edge file.
pub fn build_model(kind: &str, r: Option<usize>, edges: Option<&Path>) -> Result<ModelSpec> {
    match kind {
        "two-state" => Ok(ModelSpec::TwoState),
        "r-state" => ModelSpec::r_state(r.ok_or_else(|| Error::Config("missing required key `model.r` (--r) for r-state".into()))?),
        "markov" => {
            let path = edges.ok_or_else(|| Error::Config("missing required key `model.edges` (--edges) for markov".into()))?;
            let edges = read_edges(path)?;
            let r = r.unwrap_or_else(|| edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0));
            ModelSpec::markov(r, edges)
        }
        other => Err(Error::Config(format!(
            "unknown model kind `{other}` (expected two-state, r-state or markov)"
        ))),
    }
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Option<T> {
        let v = self.get(key)?;
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                self.errors.push(format!("`{key}`: cannot parse `{v}`"));
                None
            }
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Option<Vec<T>> {
        let v = self.get(key)?.to_string();
        let mut out = Vec::new();
        for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse() {
                Ok(x) => out.push(x),
                Err(_) => {
                    self.errors.push(format!("`{key}`: cannot parse list item `{item}`"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn flag(&mut self, key: &str) -> Option<bool> {
        match self.get(key)? {
            "true" | "yes" | "on" | "1" => Some(true),
            "false" | "no" | "off" | "0" => Some(false),
            v => {
                self.errors.push(format!("`{key}`: expected a boolean, got `{v}`"));
                None
            }
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses and validates; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let map = parse_pairs(text).map_err(|e| Error::Config(e.join("; ")))?;
        let unknown: Vec<&str> = map
            .keys()
            .map(String::as_str)
            .filter(|k| !KNOWN_KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let mut rd = Reader { map: &map, errors: Vec::new() };

        let kind = rd.get("model.kind").unwrap_or("two-state").to_string();
        let r = rd.parse::<usize>("model.r");
        let edges = rd.get("model.edges").map(|p| base.join(p));

        let mut prior = match rd.get("prior.kind").unwrap_or("uniform") {
            "uniform" => PriorSpec::uniform(),
            "truncated-uniform" => match (rd.parse::<f64>("prior.low"), rd.parse::<f64>("prior.high")) {
                (Some(lo), Some(hi)) => PriorSpec::truncated_uniform(lo, hi),
                _ => {
                    rd.errors.push("`prior.low` and `prior.high` are required for truncated-uniform".into());
                    PriorSpec::uniform()
                }
            },
            other => {
                rd.errors.push(format!("`prior.kind`: unknown prior `{other}`"));
                PriorSpec::uniform()
            }
        };
        match (rd.parse::<f64>("prior.delta1"), rd.parse::<f64>("prior.delta2")) {
            (Some(d1), Some(d2)) => prior = prior.with_bounds(d1, d2),
            (None, None) => {}
            _ => rd.errors.push("`prior.delta1` and `prior.delta2` must be given together".into()),
        }

        let ns = rd.list::<usize>("sweep.n").unwrap_or_default();
        if ns.is_empty() {
            rd.errors.push("`sweep.n`: at least one value required".into());
        }
        let (beta_m, beta_l, diagonal) = match rd.list::<f64>("sweep.betas") {
            Some(b) => {
                if rd.get("sweep.beta_m").is_some() || rd.get("sweep.beta_l").is_some() {
                    rd.errors.push("`sweep.betas` cannot be combined with `sweep.beta_m`/`sweep.beta_l`".into());
                }
                (b.clone(), b, true)
            }
            None => {
                let bm = rd.list::<f64>("sweep.beta_m").unwrap_or_default();
                let bl = rd.list::<f64>("sweep.beta_l").unwrap_or_default();
                let diagonal = match rd.get("sweep.grid").unwrap_or("full") {
                    "full" => false,
                    "diagonal" => true,
                    other => {
                        rd.errors.push(format!("`sweep.grid`: expected full or diagonal, got `{other}`"));
                        false
                    }
                };
                (bm, bl, diagonal)
            }
        };
        if beta_m.is_empty() || beta_l.is_empty() {
            rd.errors.push("sweep grid is empty (set `sweep.betas` or `sweep.beta_m` and `sweep.beta_l`)".into());
        }
        let alpha = match rd.get("sweep.alpha") {
            None | Some("auto") => None,
            Some(_) => rd.parse::<f64>("sweep.alpha"),
        };
        let trials = rd.parse::<u64>("sweep.trials").unwrap_or(100);
        let attacks = match rd.get("sweep.attacks").map(str::to_owned) {
            None => vec![AttackKind::Threshold, AttackKind::Nearest],
            Some(v) => {
                let mut out = Vec::new();
                for a in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match AttackKind::parse(a) {
                        Ok(k) => out.push(k),
                        Err(e) => rd.errors.push(format!("`sweep.attacks`: {e}")),
                    }
                }
                out
            }
        };
        let entropy = rd.flag("sweep.entropy").unwrap_or(false);
        let mut assignment = AssignmentOptions::default();
        if let Some(cap) = rd.parse::<usize>("sweep.assignment_cap") {
            assignment.cap = cap;
        }
        if let Some(g) = rd.flag("sweep.greedy_beyond_cap") {
            assignment.greedy_beyond_cap = g;
        }
        let seed = rd.parse::<u64>("seed").unwrap_or(0);
        let output_dir = rd.get("output.dir").map(|p| base.join(p));
        let threads = rd.parse::<usize>("run.threads");

        let model = match build_model(&kind, r, edges.as_deref()) {
            Ok(m) => Some(m),
            Err(e) => {
                rd.errors.push(e.to_string());
                None
            }
        };
        if !rd.errors.is_empty() {
            return Err(Error::Config(rd.errors.join("; ")));
        }
        let sweep = SweepConfig {
            model: model.expect("no errors"),
            prior,
            ns,
            beta_m,
            beta_l,
            diagonal,
            alpha,
            trials,
            seed,
            attacks,
            entropy,
            assignment,
        };
        sweep.validate()?;
        Ok(RunConfig {
            sweep,
            output_dir,
            threads,
        })
    }
}
