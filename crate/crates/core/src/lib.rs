//! # perfnet
//!
//! Simulation of decentralized performative prediction. A network of agents
//! each serves its own population, whose data distribution reacts to the
//! decision the agent deploys. The agents run decentralized SGD with greedy
//! deployment (DSGD-GD): every iteration each agent deploys its current
//! decision, draws samples from the reacting population, mixes its decision
//! with its neighbours' through a doubly stochastic matrix, and takes a
//! stochastic gradient step.
//!
//! The crate is organised by concern:
//!
//! * [`topology`]: graphs, mixing matrices, spectral gaps, B-connected
//!   time-varying schedules.
//! * [`environment`]: decision-dependent populations (Gaussian mean shift,
//!   strategic feature shift) and the quadratic/logistic losses.
//! * [`engine`]: the DSGD-GD iteration, step-size schedules, runs.
//! * [`oracle`]: the multi-agent performative stable point, by closed form
//!   and by repeated-deployment fixed-point iteration.
//! * [`theory`]: constants, step-size conditions and bound curves of the
//!   convergence theorem, for checking trajectories against.
//! * [`metrics`]: per-iteration measurements and log-log rate fitting.
//! * [`harness`]: configuration files, datasets, experiment presets and
//!   artifact output; the `perfnet` binary is a thin layer over it.
//!
//! Runnable walkthroughs of each capability live in the crate's `examples/`
//! directory.

pub mod engine;
pub mod environment;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod theory;
pub mod topology;

pub use error::{Error, Result};
