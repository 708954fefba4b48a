//! Simulation and spectral analysis of additive martingales for three
//! branching-diffusion models: single-type branching Brownian motion, a
//! finite-type branching diffusion, and a continuous-type model whose type
//! moves as an Ornstein-Uhlenbeck process.
//!
//! The crate builds the additive martingales `Z_lambda`, the spine change of
//! measure, and classifies and empirically verifies the convergence regime
//! of each martingale (almost-surely zero limit, L¹ convergence, or L^p
//! convergence). See the `examples/` directory for one runnable program per
//! capability and the `spinelab` binary for file-driven experiments.

pub mod bbm;
pub mod cli;
pub mod config;
pub mod error;
pub mod mc;
pub mod multitype;
pub mod numeric;
pub mod offspring;
pub mod outype;
pub mod rng;
pub(crate) mod sim;
pub mod trees;

pub use error::{Error, Result};
pub use sim::DEFAULT_POPULATION_CAP;
