//! Ulam-Harris labels, population snapshots and spine bookkeeping shared by
//! all three branching-diffusion models.
//!
//! A label is the finite word of child indices leading from the initial
//! ancestor to a particle; the empty word is the ancestor itself. Snapshots
//! hold only horizon-time states and spine records hold only the fission-time
//! skeleton: that is exactly the information the additive martingale and its
//! spine decomposition consume, and it keeps memory bounded under exponential
//! population growth.

use std::fmt;

/// Ulam-Harris particle identifier. Child indices are 1-based; the empty
/// path denotes the initial ancestor and prints as `-`.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Label {
    path: Vec<u64>,
}

impl Label {
    /// The initial ancestor.
    pub fn root() -> Self {
        Label { path: Vec::new() }
    }

    /// Build a label from an explicit path of 1-based child indices.
    pub fn from_path(path: impl Into<Vec<u64>>) -> Self {
        let path = path.into();
        assert!(path.iter().all(|&i| i >= 1), "child indices are 1-based");
        Label { path }
    }

    /// The `i`-th child of this particle (`i >= 1`).
    pub fn child(&self, i: u64) -> Self {
        assert!(i >= 1, "child indices are 1-based");
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(i);
        Label { path }
    }

    /// Generation number, i.e. the length of the word.
    pub fn generation(&self) -> usize {
        self.path.len()
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Concatenated word `uv`; the empty label is a two-sided identity.
    pub fn concat(&self, other: &Label) -> Label {
        let mut path = Vec::with_capacity(self.path.len() + other.path.len());
        path.extend_from_slice(&self.path);
        path.extend_from_slice(&other.path);
        Label { path }
    }

    /// Strict ancestry: true iff `self != other` and `self` is a prefix of
    /// `other`.
    pub fn is_ancestor_of(&self, other: &Label) -> bool {
        self.path.len() < other.path.len() && other.path[..self.path.len()] == self.path[..]
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            return write!(f, "-");
        }
        let mut first = true;
        for i in &self.path {
            if !first {
                write!(f, ".")?;
            }
            write!(f, "{i}")?;
            first = false;
        }
        Ok(())
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Label({self})")
    }
}

/// Probability that a fixed line of descent is the spine when each fission
/// chooses uniformly among its children: the product of `1/(1+A_v)` over the
/// strict ancestors' extra-offspring counts. Empty input gives 1.
pub fn spine_probability(offspring_counts_along_ancestry: &[u64]) -> f64 {
    offspring_counts_along_ancestry
        .iter()
        .map(|&a| 1.0 / (1.0 + a as f64))
        .product()
}

/// State of one alive particle at a snapshot horizon. The type component is
/// `()` for single-type BBM, a type index for the finite-type model and a
/// real type location for the OU model.
#[derive(Clone, Debug)]
pub struct ParticleState<T> {
    pub label: Label,
    pub position: f64,
    pub type_value: T,
    pub birth_time: f64,
}

/// The alive population at a horizon time.
#[derive(Clone, Debug)]
pub struct Snapshot<T> {
    pub horizon: f64,
    pub particles: Vec<ParticleState<T>>,
}

impl<T> Snapshot<T> {
    /// A population is extinct exactly when no particle is alive. Note that
    /// in the models simulated here every fission produces at least one
    /// child, so a snapshot produced by a simulator is never extinct.
    pub fn extinct(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Checks the label invariant: pairwise distinct and no label an ancestor
    /// of another. Quadratic; intended for tests and small snapshots.
    pub fn labels_form_antichain(&self) -> bool {
        for (i, a) in self.particles.iter().enumerate() {
            for b in self.particles.iter().skip(i + 1) {
                if a.label == b.label
                    || a.label.is_ancestor_of(&b.label)
                    || b.label.is_ancestor_of(&a.label)
                {
                    return false;
                }
            }
        }
        true
    }
}

/// One fission on the spine: its time, the spine's state just before the
/// split, and the number of extra (non-spine) offspring born there.
#[derive(Clone, Debug)]
pub struct SpineFission<T> {
    pub time: f64,
    pub position: f64,
    pub type_value: T,
    pub extra_offspring: u64,
}

/// The distinguished line of descent: fission skeleton plus terminal state.
/// The terminal label's path entries are the child indices the spine took,
/// so `terminal_label.generation()` equals the fission count.
#[derive(Clone, Debug)]
pub struct SpineRecord<T> {
    pub horizon: f64,
    pub fissions: Vec<SpineFission<T>>,
    pub terminal_position: f64,
    pub terminal_type: T,
    pub terminal_label: Label,
}

impl<T> SpineRecord<T> {
    /// Number of fissions on the spine by the horizon.
    pub fn n_t(&self) -> usize {
        self.fissions.len()
    }

    /// Structural invariants: strictly increasing fission times in
    /// `(0, horizon]` and a terminal label of matching generation.
    pub fn is_consistent(&self) -> bool {
        let mut prev = 0.0;
        for f in &self.fissions {
            if !(f.time > prev && f.time <= self.horizon) {
                return false;
            }
            prev = f.time;
        }
        self.terminal_label.generation() == self.fissions.len()
    }
}
