//! Crate-wide error type and exit-code mapping for the CLI.

use thiserror::Error;

/// Everything that can go wrong across the toolkit.
///
/// Simulation and spectral errors are deliberately coarse: each variant maps
/// onto one externally visible failure class (and CLI exit code), and the
/// message names the violated invariant.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration; the message names the invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The alive-particle count exceeded the population cap.
    #[error("population explosion: alive count exceeded cap {cap} near time {time}{}",
            replicate.map(|r| format!(" (replicate {r})")).unwrap_or_default())]
    PopulationExplosion {
        cap: u64,
        time: f64,
        replicate: Option<u64>,
    },

    /// A dense eigensolve failed its residual or positivity check.
    #[error("eigensolve did not converge: {0}")]
    NonConverged(String),

    /// A bracketed root/minimum search found no sign change or interior minimum.
    #[error("bracket failure: {0}")]
    BracketFailure(String),

    /// A spectral quantity was requested outside its domain of definition.
    #[error("out of domain: {0}")]
    OutOfDomain(String),
}

impl Error {
    /// Process exit code used by the CLI. Configuration-class problems
    /// (including out-of-domain parameters) share code 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::OutOfDomain(_) => 2,
            Error::PopulationExplosion { .. } => 3,
            Error::NonConverged(_) => 4,
            Error::BracketFailure(_) => 5,
        }
    }

    /// Attach a replicate index to a population-explosion error.
    pub(crate) fn with_replicate(self, rep: u64) -> Self {
        match self {
            Error::PopulationExplosion { cap, time, .. } => Error::PopulationExplosion {
                cap,
                time,
                replicate: Some(rep),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
