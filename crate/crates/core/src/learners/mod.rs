//! Critic/actor learners for the bi-level and plain mean-field families and
//! the independent baselines, plus replay and checkpoints.

mod checkpoint;
mod learner;
mod policy;
mod replay;
mod strawman;

pub use checkpoint::{load_replay, push_replay, Checkpoint, Section, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use learner::{polyak, q_loss, InterCtx, Learner, QLoss, Sample, UpdateStats};
pub use policy::{actor_surrogate, boltzmann_value, log_softmax, GaussianPolicy};
pub use replay::{GroupSnapshot, ReplayBuffer, TransitionRecord};
pub use strawman::PairwiseAttentionCritic;

use std::fmt;
use std::str::FromStr;

use crate::error::{BmfError, Result};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    BmfQ,
    BmfAc,
    Mfq,
    Mfac,
    Iql,
    Ac,
}

impl Algo {
    pub const ALL: [Algo; 6] = [Algo::BmfQ, Algo::BmfAc, Algo::Mfq, Algo::Mfac, Algo::Iql, Algo::Ac];

    pub fn name(self) -> &'static str {
        match self {
            Algo::BmfQ => "bmf_q",
            Algo::BmfAc => "bmf_ac",
            Algo::Mfq => "mfq",
            Algo::Mfac => "mfac",
            Algo::Iql => "iql",
            Algo::Ac => "ac",
        }
    }

    /// Q-learning family (acts epsilon-greedily on the critic).
    pub fn is_q(self) -> bool {
        matches!(self, Algo::BmfQ | Algo::Mfq | Algo::Iql)
    }

    pub fn has_actor(self) -> bool {
        !self.is_q()
    }

    /// Whether the critic sees mean actions at all.
    pub fn uses_mean_field(self) -> bool {
        !matches!(self, Algo::Iql | Algo::Ac)
    }

    pub fn is_bilevel(self) -> bool {
        matches!(self, Algo::BmfQ | Algo::BmfAc)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = BmfError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .or(match s.as_str() {
                "q" => Some(Algo::Iql),
                "bmf" => Some(Algo::BmfQ),
                _ => None,
            })
            .ok_or_else(|| BmfError::config(format!("unknown algo '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub algo: Algo,
    pub gamma: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_attention: f64,
    pub lr_forward_model: f64,
    pub hidden: Vec<usize>,
    /// Boltzmann temperature of the soft value backup.
    pub temperature: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Episodes over which epsilon decays linearly.
    pub eps_decay_episodes: usize,
    /// Environment steps between update ticks.
    pub update_interval: usize,
    /// Gradient steps per tick.
    pub updates_per_tick: usize,
    /// Agent-level samples per gradient step.
    pub batch_size: usize,
    /// Joint transitions held by the replay buffer.
    pub replay_capacity: usize,
    /// Hard target copy every this many updates (used when `polyak` is 0).
    pub sync_every: u64,
    /// Soft target mixing rate; 0 selects hard syncs.
    pub polyak: f64,
    pub entropy_coef: f64,
    pub grad_clip: f64,
    /// Multiplies rewards before they enter TD targets and the forward model.
    pub reward_scale: f64,
    pub parameter_sharing: bool,
    pub execution: Execution,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            algo: Algo::BmfQ,
            gamma: 0.95,
            lr_critic: 1e-3,
            lr_actor: 1e-3,
            lr_attention: 1e-3,
            lr_forward_model: 1e-3,
            hidden: vec![64, 64],
            temperature: 0.1,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_episodes: 100,
            update_interval: 16,
            updates_per_tick: 1,
            batch_size: 256,
            replay_capacity: 1 << 16,
            sync_every: 200,
            polyak: 0.0,
            entropy_coef: 0.0,
            grad_clip: 10.0,
            reward_scale: 1.0,
            parameter_sharing: true,
            execution: Execution::best(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(BmfError::config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.temperature <= 0.0 {
            return Err(BmfError::config("temperature must be positive"));
        }
        if self.update_interval == 0 || self.batch_size == 0 || self.replay_capacity == 0 {
            return Err(BmfError::config("update_interval, batch_size and replay_capacity must be positive"));
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return Err(BmfError::config("polyak must lie in [0, 1]"));
        }
        if self.polyak == 0.0 && self.sync_every == 0 {
            return Err(BmfError::config("sync_every must be positive for hard syncs"));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(BmfError::config("reward_scale must be positive"));
        }
        if !self.parameter_sharing {
            return Err(BmfError::config("only shared parameters are supported"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(BmfError::config("hidden layer widths must be positive"));
        }
        Ok(())
    }

    /// Linearly decayed exploration rate for `episode`.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.eps_decay_episodes == 0 {
            return self.eps_end;
        }
        let f = (episode as f64 / self.eps_decay_episodes as f64).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_names_roundtrip() {
        for a in Algo::ALL {
            assert_eq!(a.name().parse::<Algo>().unwrap(), a);
        }
        assert_eq!("BMF-Q".parse::<Algo>().unwrap(), Algo::BmfQ);
        assert!("dqn".parse::<Algo>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = LearnerConfig::default();
        c.validate().unwrap();
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        c.gamma = 1.0;
        c.validate().unwrap();
        c.polyak = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn epsilon_schedule() {
        let c = LearnerConfig {
            eps_start: 1.0,
            eps_end: 0.1,
            eps_decay_episodes: 10,
            ..Default::default()
        };
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(5) - 0.55).abs() < 1e-12);
        assert!((c.epsilon(50) - 0.1).abs() < 1e-12);
    }
}
