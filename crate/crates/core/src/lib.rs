//! Collective formation: an attention encoder-decoder policy proposes a pool of
//! promising agent collectives, and an exact weighted-set-packing search picks
//! the final non-overlapping selection.
//!
//! Module map:
//!
//! - [`domain`]: agents, instances, utilities and the synthetic generators.
//! - [`nn`]: dense matrices and the layers of the model with hand-written
//!   backward passes.
//! - [`policy`]: the encoder-decoder policy, rollouts and trajectory gradients.
//! - [`train`]: entropy-regularized REINFORCE with a greedy rollout baseline.
//! - [`generate`]: budgeted candidate-pool sampling.
//! - [`solve`]: branch-and-bound and exhaustive weighted set packing.
//! - [`mcts`]: UCT baselines with greedy, adapted and random rollouts.
//! - [`experiment`]: benchmark and diversity reports.

pub mod budget;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod generate;
pub mod mcts;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod solve;
pub mod train;

pub use budget::Budget;
pub use domain::{Collective, Domain, DomainRules, Instance, Valuation};
pub use error::{Error, Result};
