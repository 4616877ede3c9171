//! Anonymization by a uniformly random relabeling of users.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::AdversaryView;
use crate::error::{ensure, Error, Result};
use crate::population::ModelSpec;
use crate::tracegen::{Trace, TraceCollection};

/// A bijection on `0..n`; `forward[u]` is the pseudonym of user `u`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    forward: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            forward: (0..n).collect(),
        }
    }

    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut seen = vec![false; n];
        for &v in &forward {
            ensure!(v < n && !seen[v], Argument, "{forward:?} is not a permutation of 0..{n}");
            seen[v] = true;
        }
        Ok(Permutation { forward })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    /// Pseudonym of user `u`.
    pub fn apply(&self, u: usize) -> usize {
        self.forward[u]
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.forward.len()];
        for (u, &v) in self.forward.iter().enumerate() {
            inv[v] = u;
        }
        Permutation { forward: inv }
    }
}

/// Uniform draw from the symmetric group on `0..n` (Fisher–Yates).
pub fn sample_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Permutation> {
    ensure!(n >= 1, Argument, "permutation size must be at least 1");
    let mut forward: Vec<usize> = (0..n).collect();
    forward.shuffle(rng);
    Ok(Permutation { forward })
}

/// Training traces W, anonymized traces Y, and the hidden permutation.
///
/// Attacks only ever see an [`AdversaryView`], which holds no permutation
/// and no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AnonymizedCollection {
    spec: ModelSpec,
    training: Vec<Trace>,
    observed: Vec<Trace>,
    hidden: Permutation,
    m: usize,
    l: usize,
}

impl AnonymizedCollection {
    pub fn n(&self) -> usize {
        self.training.len()
    }

    pub fn training(&self) -> &[Trace] {
        &self.training
    }

    /// Y, indexed by pseudonym.
    pub fn observed(&self) -> &[Trace] {
        &self.observed
    }

    /// Ground truth; for evaluation only.
    pub fn hidden(&self) -> &Permutation {
        &self.hidden
    }

    pub fn adversary_view(&self) -> AdversaryView<'_> {
        AdversaryView::new(&self.spec, &self.training, &self.observed, self.m, self.l)
            .expect("anonymized collection is well-formed")
    }

    /// Re-indexes Y by the hidden inverse, recovering X.
    pub fn deanonymize(&self) -> Vec<Trace> {
        (0..self.n()).map(|u| self.observed[self.hidden.apply(u)].clone()).collect()
    }
}

/// Publishes X under the pseudonyms of `pi`: `Y[pi(u)] = X[u]`.
pub fn apply(collection: &TraceCollection, pi: &Permutation) -> Result<AnonymizedCollection> {
    if pi.len() != collection.n {
        return Err(Error::Argument(format!(
            "permutation has size {}, collection has {} users",
            pi.len(),
            collection.n
        )));
    }
    let mut observed = vec![None; collection.n];
    for (u, x) in collection.actual.iter().enumerate() {
        observed[pi.apply(u)] = Some(x.clone());
    }
    Ok(AnonymizedCollection {
        spec: collection.spec.clone(),
        training: collection.training.clone(),
        observed: observed.into_iter().map(|t| t.expect("bijection")).collect(),
        hidden: pi.clone(),
        m: collection.m,
        l: collection.l,
    })
}
