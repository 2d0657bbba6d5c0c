//! Run configuration as flat `key = value` text.
//!
//! Keys carry a section prefix: `env.`, `learner.`, `group.` or `run.`.
//! `run.preset` and `env.kind` select the base defaults and are applied
//! before any other key, wherever they appear.

use std::fmt::Write as _;
use std::path::Path;

use crate::envs::{EnvConfig, EnvKind};
use crate::error::{BmfError, Result};
use crate::grouping::GroupingMode;
use crate::learners::{Algo, LearnerConfig};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupConfig {
    /// Groups per team.
    pub k: usize,
    /// Reassignment interval `I_g` in episode steps.
    pub interval: u64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub lambda_p: f64,
    pub lambda_e: f64,
    pub beta: f64,
    pub mode: GroupingMode,
    pub max_iter: usize,
    /// `true`: policies see last step's mean actions. `false`: two-pass
    /// acting with freshly recomputed means.
    pub delay: bool,
}

impl GroupConfig {
    pub fn default_for(kind: EnvKind) -> Self {
        GroupConfig {
            k: match kind {
                EnvKind::Battle => 4,
                _ => 2,
            },
            interval: 10,
            latent_dim: 4,
            hidden: 32,
            lambda_p: 1.0,
            lambda_e: 0.5,
            beta: 0.01,
            mode: GroupingMode::Vae,
            max_iter: 50,
            delay: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.interval == 0 || self.latent_dim == 0 || self.hidden == 0 || self.max_iter == 0 {
            return Err(BmfError::config("group.k, group.interval, group.latent_dim, group.hidden and group.max_iter must be positive"));
        }
        if self.lambda_p < 0.0 || self.lambda_e < 0.0 || self.beta < 0.0 {
            return Err(BmfError::config("forward-model loss weights must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub group: GroupConfig,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    /// Episodes between periodic checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Episodes between trajectory dumps; 0 disables them.
    pub trajectory_every: usize,
    /// Include replay, optimizer and RNG state so runs can resume exactly.
    pub save_resume: bool,
}

impl RunConfig {
    pub fn default_for(kind: EnvKind) -> Self {
        RunConfig {
            name: kind.name().to_string(),
            env: EnvConfig::default_for(kind),
            learner: LearnerConfig::default(),
            group: GroupConfig::default_for(kind),
            episodes: 100,
            seeds: vec![0],
            checkpoint_every: 0,
            trajectory_every: 0,
            save_resume: true,
        }
    }

    /// Named desk-scale setups.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c;
        match name {
            "firefighter" => {
                c = Self::default_for(EnvKind::Firefighter);
                c.learner.algo = Algo::BmfQ;
                c.learner.update_interval = 1;
                c.learner.batch_size = 128;
                c.learner.replay_capacity = 2000;
                c.learner.eps_decay_episodes = 150;
                c.learner.sync_every = 100;
                c.learner.hidden = vec![64];
                c.learner.lr_critic = 2e-3;
                c.learner.reward_scale = 0.1;
                c.episodes = 300;
                c.seeds = vec![0, 1, 2, 3];
            }
            "pursuit" => {
                c = Self::default_for(EnvKind::Pursuit);
                c.learner.algo = Algo::BmfQ;
                c.learner.update_interval = 4;
                c.learner.batch_size = 128;
                c.learner.replay_capacity = 2000;
                c.learner.eps_decay_episodes = 150;
                c.learner.sync_every = 100;
                c.learner.hidden = vec![64];
                c.episodes = 300;
                c.seeds = vec![0, 1, 2, 3];
            }
            "battle" => {
                c = Self::default_for(EnvKind::Battle);
                c.env.n_agents = 32;
                c.env.grid_size = 20;
                c.env.max_steps = 100;
                c.learner.algo = Algo::BmfAc;
                c.learner.update_interval = 4;
                c.learner.batch_size = 128;
                c.learner.replay_capacity = 2000;
                c.learner.hidden = vec![64];
                c.learner.entropy_coef = 0.01;
                c.episodes = 800;
                c.seeds = vec![0, 1, 2];
            }
            "battle64" => {
                c = Self::preset("battle")?;
                c.env.n_agents = 128;
                c.env.grid_size = 40;
                c.env.max_steps = 200;
                c.learner.replay_capacity = 1000;
            }
            other => return Err(BmfError::UnknownPreset(other.to_string())),
        }
        c.name = name.to_string();
        Ok(c)
    }

    pub const PRESETS: [&'static str; 4] = ["firefighter", "pursuit", "battle", "battle64"];

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.learner.validate()?;
        self.group.validate()?;
        if self.seeds.is_empty() {
            return Err(BmfError::config("run.seeds must not be empty"));
        }
        let path = Path::new(&self.name);
        if self.name.is_empty() || path.is_absolute() || path.components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
            return Err(BmfError::config("run.name must be a relative path without '..'"));
        }
        Ok(())
    }

    /// Builds a config from ordered `(key, value)` pairs.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let lookup = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let mut c = match (lookup("run.preset"), lookup("env.kind")) {
            (Some(p), kind) => {
                let mut c = Self::preset(p)?;
                if let Some(kind) = kind {
                    let kind: EnvKind = kind.parse()?;
                    if kind != c.env.kind {
                        c = Self::default_for(kind);
                        c.name = p.to_string();
                    }
                }
                c
            }
            (None, Some(kind)) => Self::default_for(kind.parse()?),
            (None, None) => Self::default_for(EnvKind::Firefighter),
        };
        for (k, v) in pairs {
            if k == "run.preset" || k == "env.kind" {
                continue;
            }
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| BmfError::config(format!("line {}: expected key = value", lineno + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_pairs(&Self::parse_text(&std::fs::read_to_string(path)?)?)
    }

    /// Applies one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| BmfError::config(format!("bad value '{v}' for {key}")))
        }
        fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').filter(|s| !s.trim().is_empty()).map(|s| p(key, s.trim())).collect()
        }
        let (e, l, g) = (&mut self.env, &mut self.learner, &mut self.group);
        match key {
            "env.n_agents" => e.n_agents = p(key, value)?,
            "env.grid_size" => e.grid_size = p(key, value)?,
            "env.max_steps" => e.max_steps = p(key, value)?,
            "env.firefighter.n_houses" => e.firefighter.n_houses = p(key, value)?,
            "env.firefighter.initial_fire" => e.firefighter.initial_fire = p(key, value)?,
            "env.firefighter.burn_rate" => e.firefighter.burn_rate = p(key, value)?,
            "env.firefighter.nearest" => e.firefighter.nearest = p(key, value)?,
            "env.pursuit.n_targets" => e.pursuit.n_targets = p(key, value)?,
            "env.pursuit.tag_reward" => e.pursuit.tag_reward = p(key, value)?,
            "env.pursuit.tag_penalty" => e.pursuit.tag_penalty = p(key, value)?,
            "env.pursuit.view_radius" => e.pursuit.view_radius = p(key, value)?,
            "env.battle.max_hp" => e.battle.max_hp = p(key, value)?,
            "env.battle.damage" => e.battle.damage = p(key, value)?,
            "env.battle.kill_reward" => e.battle.kill_reward = p(key, value)?,
            "env.battle.hit_reward" => e.battle.hit_reward = p(key, value)?,
            "env.battle.hurt_penalty" => e.battle.hurt_penalty = p(key, value)?,
            "env.battle.step_penalty" => e.battle.step_penalty = p(key, value)?,
            "env.battle.view_radius" => e.battle.view_radius = p(key, value)?,
            "learner.algo" => l.algo = value.parse::<Algo>()?,
            "learner.gamma" => l.gamma = p(key, value)?,
            "learner.lr_critic" => l.lr_critic = p(key, value)?,
            "learner.lr_actor" => l.lr_actor = p(key, value)?,
            "learner.lr_attention" => l.lr_attention = p(key, value)?,
            "learner.lr_forward_model" => l.lr_forward_model = p(key, value)?,
            "learner.hidden" => l.hidden = list(key, value)?,
            "learner.temperature" => l.temperature = p(key, value)?,
            "learner.eps_start" => l.eps_start = p(key, value)?,
            "learner.eps_end" => l.eps_end = p(key, value)?,
            "learner.eps_decay_episodes" => l.eps_decay_episodes = p(key, value)?,
            "learner.update_interval" => l.update_interval = p(key, value)?,
            "learner.updates_per_tick" => l.updates_per_tick = p(key, value)?,
            "learner.batch_size" => l.batch_size = p(key, value)?,
            "learner.replay_capacity" => l.replay_capacity = p(key, value)?,
            "learner.sync_every" => l.sync_every = p(key, value)?,
            "learner.polyak" => l.polyak = p(key, value)?,
            "learner.entropy_coef" => l.entropy_coef = p(key, value)?,
            "learner.grad_clip" => l.grad_clip = p(key, value)?,
            "learner.reward_scale" => l.reward_scale = p(key, value)?,
            "learner.parameter_sharing" => l.parameter_sharing = p(key, value)?,
            "learner.execution" => {
                l.execution = match value {
                    "parallel" => Execution::best(),
                    "sequential" => Execution::Sequential,
                    _ => return Err(BmfError::config(format!("bad value '{value}' for {key}"))),
                }
            }
            "group.k" => g.k = p(key, value)?,
            "group.interval" => g.interval = p(key, value)?,
            "group.latent_dim" => g.latent_dim = p(key, value)?,
            "group.hidden" => g.hidden = p(key, value)?,
            "group.lambda_p" => g.lambda_p = p(key, value)?,
            "group.lambda_e" => g.lambda_e = p(key, value)?,
            "group.beta" => g.beta = p(key, value)?,
            "group.mode" => g.mode = value.parse()?,
            "group.max_iter" => g.max_iter = p(key, value)?,
            "group.delay" => g.delay = p(key, value)?,
            "run.name" => self.name = value.to_string(),
            "run.episodes" => self.episodes = p(key, value)?,
            "run.seeds" => self.seeds = list(key, value)?,
            "run.checkpoint_every" => self.checkpoint_every = p(key, value)?,
            "run.trajectory_every" => self.trajectory_every = p(key, value)?,
            "run.save_resume" => self.save_resume = p(key, value)?,
            _ => return Err(BmfError::config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its current value, in the documented order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let (e, l, g) = (&self.env, &self.learner, &self.group);
        let join = |v: &[String]| v.join(",");
        let f = |x: f64| format!("{x:?}");
        let pairs: Vec<(&str, String)> = vec![
            ("run.name", self.name.clone()),
            ("run.episodes", self.episodes.to_string()),
            ("run.seeds", join(&self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>())),
            ("run.checkpoint_every", self.checkpoint_every.to_string()),
            ("run.trajectory_every", self.trajectory_every.to_string()),
            ("run.save_resume", self.save_resume.to_string()),
            ("env.kind", e.kind.name().to_string()),
            ("env.n_agents", e.n_agents.to_string()),
            ("env.grid_size", e.grid_size.to_string()),
            ("env.max_steps", e.max_steps.to_string()),
            ("env.firefighter.n_houses", e.firefighter.n_houses.to_string()),
            ("env.firefighter.initial_fire", f(e.firefighter.initial_fire)),
            ("env.firefighter.burn_rate", f(e.firefighter.burn_rate)),
            ("env.firefighter.nearest", e.firefighter.nearest.to_string()),
            ("env.pursuit.n_targets", e.pursuit.n_targets.to_string()),
            ("env.pursuit.tag_reward", f(e.pursuit.tag_reward)),
            ("env.pursuit.tag_penalty", f(e.pursuit.tag_penalty)),
            ("env.pursuit.view_radius", e.pursuit.view_radius.to_string()),
            ("env.battle.max_hp", f(e.battle.max_hp)),
            ("env.battle.damage", f(e.battle.damage)),
            ("env.battle.kill_reward", f(e.battle.kill_reward)),
            ("env.battle.hit_reward", f(e.battle.hit_reward)),
            ("env.battle.hurt_penalty", f(e.battle.hurt_penalty)),
            ("env.battle.step_penalty", f(e.battle.step_penalty)),
            ("env.battle.view_radius", e.battle.view_radius.to_string()),
            ("learner.algo", l.algo.name().to_string()),
            ("learner.gamma", f(l.gamma)),
            ("learner.lr_critic", f(l.lr_critic)),
            ("learner.lr_actor", f(l.lr_actor)),
            ("learner.lr_attention", f(l.lr_attention)),
            ("learner.lr_forward_model", f(l.lr_forward_model)),
            ("learner.hidden", join(&l.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>())),
            ("learner.temperature", f(l.temperature)),
            ("learner.eps_start", f(l.eps_start)),
            ("learner.eps_end", f(l.eps_end)),
            ("learner.eps_decay_episodes", l.eps_decay_episodes.to_string()),
            ("learner.update_interval", l.update_interval.to_string()),
            ("learner.updates_per_tick", l.updates_per_tick.to_string()),
            ("learner.batch_size", l.batch_size.to_string()),
            ("learner.replay_capacity", l.replay_capacity.to_string()),
            ("learner.sync_every", l.sync_every.to_string()),
            ("learner.polyak", f(l.polyak)),
            ("learner.entropy_coef", f(l.entropy_coef)),
            ("learner.grad_clip", f(l.grad_clip)),
            ("learner.reward_scale", f(l.reward_scale)),
            ("learner.parameter_sharing", l.parameter_sharing.to_string()),
            (
                "learner.execution",
                match l.execution {
                    Execution::Parallel => "parallel",
                    Execution::Sequential => "sequential",
                }
                .to_string(),
            ),
            ("group.k", g.k.to_string()),
            ("group.interval", g.interval.to_string()),
            ("group.latent_dim", g.latent_dim.to_string()),
            ("group.hidden", g.hidden.to_string()),
            ("group.lambda_p", f(g.lambda_p)),
            ("group.lambda_e", f(g.lambda_e)),
            ("group.beta", f(g.beta)),
            ("group.mode", g.mode.name().to_string()),
            ("group.max_iter", g.max_iter.to_string()),
            ("group.delay", g.delay.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// The env config for one seed.
    pub fn env_for_seed(&self, seed: u64) -> EnvConfig {
        let mut e = self.env.clone();
        e.seed = seed;
        e
    }
}
