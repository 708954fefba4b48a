//! Shared simulation plumbing: the alive-count budget.
//!
//! Every fission replaces one particle by `1 + A` children, so the alive
//! count never decreases; a depth-first walk can therefore enforce the cap
//! by accumulating net growth as fissions are encountered, which detects
//! exactly the condition "the horizon population exceeds the cap".

use crate::error::{Error, Result};

/// Default cap on the alive-particle count.
pub const DEFAULT_POPULATION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub(crate) struct Budget {
    alive: u64,
    cap: u64,
}

impl Budget {
    pub(crate) fn new(cap: u64) -> Self {
        Budget { alive: 1, cap }
    }

    /// Record `extra` net new particles born at `time`.
    pub(crate) fn grow(&mut self, extra: u64, time: f64) -> Result<()> {
        self.alive = self.alive.saturating_add(extra);
        if self.alive > self.cap {
            Err(Error::PopulationExplosion {
                cap: self.cap,
                time,
                replicate: None,
            })
        } else {
            Ok(())
        }
    }
}
