//! Simulation lab for de-anonymization by statistical matching.
//!
//! Users draw latent parameters from a prior, emit training and actual
//! traces, and the actual traces are published under a random permutation
//! of pseudonyms. An adversary holding the training traces tries to recover
//! a target's pseudonym. The crate measures how often it succeeds across the
//! (m, l) plane and computes the exact Bayesian posterior for small n.
//!
//! ```
//! use anonmatch::{experiments::CellConfig, population::ModelSpec, attack::AttackKind};
//!
//! let cell = CellConfig::new(ModelSpec::TwoState, 10, 500, 500, 0.5, 1)
//!     .with_attacks(&[AttackKind::Nearest]);
//! let records = anonmatch::experiments::run_cell(&cell, 4).unwrap();
//! assert_eq!(records.len(), 4);
//! ```

pub mod anonymize;
pub mod attack;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod format;
pub mod metrics;
pub mod oracle;
pub mod population;
pub mod rng;
pub mod stats;
pub mod tracegen;

pub use anonymize::{AnonymizedCollection, Permutation};
pub use attack::{AdversaryView, AttackKind, MatchOutcome, Verdict};
pub use error::{Error, Result};
pub use experiments::{CellConfig, SweepConfig, SweepResult};
pub use metrics::TrialRecord;
pub use oracle::{LikelihoodMatrix, PosteriorMethod, PosteriorSummary};
pub use population::{MarkovStructure, ModelSpec, PriorSpec, UserParams};
pub use rng::StreamKey;
pub use stats::FeatureVector;
pub use tracegen::{Trace, TraceCollection};
