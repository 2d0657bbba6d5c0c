//! Bi-level mean-field (BMF) multi-agent reinforcement learning.
//!
//! Agents are periodically clustered into groups from learned VAE
//! representations. Each agent's critic sees two aggregated inputs: the
//! plain mean action of its own group-mates, and an attention-weighted
//! mean over the other groups' mean actions. Classic mean-field and
//! independent learners ship alongside as baselines.
//!
//! Layout:
//!
//! - [`nn`]: dense MLP engine (forward, reverse-mode gradients, SGD/Adam)
//! - [`envs`]: firefighter, adversarial pursuit and battle gridworlds
//! - [`grouping`]: VAE forward model, k-means, group attention
//! - [`meanfield`]: intra-group, inter-group and plain mean actions
//! - [`learners`]: BMF-Q / BMF-AC and baselines, replay, checkpoints
//! - [`theory`]: brute-force checks of the bi-level approximation
//! - [`harness`]: config, training loop, evaluation and experiment presets

pub mod envs;
pub mod error;
pub mod grouping;
pub mod harness;
pub mod learners;
pub mod meanfield;
pub mod nn;
pub mod par;
pub mod rng;
pub mod theory;

pub use error::{BmfError, Result};
