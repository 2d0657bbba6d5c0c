//! Multi-agent gridworlds behind one [`Environment`] interface.
//!
//! - [`Firefighter`]: fully cooperative; fixed agents extinguish burning houses.
//! - [`Pursuit`]: pursuers tag randomly walking targets.
//! - [`Battle`]: two equal teams fight on a grid.

mod battle;
mod firefighter;
mod pursuit;
pub mod trajectory;

use std::fmt;
use std::str::FromStr;

pub use battle::{outcome, scripted_action, Battle, Outcome, N_ACTIONS as BATTLE_ACTIONS};
pub use firefighter::Firefighter;
pub use pursuit::Pursuit;

use crate::error::{BmfError, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Firefighter,
    Pursuit,
    Battle,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Firefighter => "firefighter",
            EnvKind::Pursuit => "pursuit",
            EnvKind::Battle => "battle",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = BmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "firefighter" => Ok(EnvKind::Firefighter),
            "pursuit" => Ok(EnvKind::Pursuit),
            "battle" => Ok(EnvKind::Battle),
            other => Err(BmfError::config(format!("unknown env {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirefighterParams {
    pub n_houses: usize,
    pub initial_fire: f64,
    pub burn_rate: f64,
    /// Number of nearest houses each agent can attend.
    pub nearest: usize,
}

impl Default for FirefighterParams {
    fn default() -> Self {
        FirefighterParams {
            n_houses: 50,
            initial_fire: -3.0,
            burn_rate: 1.0,
            nearest: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PursuitParams {
    pub n_targets: usize,
    pub tag_reward: f64,
    pub tag_penalty: f64,
    pub view_radius: usize,
}

impl Default for PursuitParams {
    fn default() -> Self {
        PursuitParams {
            n_targets: 50,
            tag_reward: 1.0,
            tag_penalty: 0.2,
            view_radius: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BattleParams {
    pub max_hp: f64,
    pub damage: f64,
    pub kill_reward: f64,
    pub hit_reward: f64,
    pub hurt_penalty: f64,
    pub step_penalty: f64,
    pub view_radius: usize,
}

impl Default for BattleParams {
    fn default() -> Self {
        BattleParams {
            max_hp: 10.0,
            damage: 2.0,
            kill_reward: 5.0,
            hit_reward: 0.2,
            hurt_penalty: 0.1,
            step_penalty: 0.005,
            view_radius: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub n_agents: usize,
    pub grid_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub firefighter: FirefighterParams,
    pub pursuit: PursuitParams,
    pub battle: BattleParams,
}

impl EnvConfig {
    /// Full-size setups: 50 firefighters and 50 houses, 25 pursuers and 50
    /// targets, 128 battle agents in two teams of 64.
    pub fn default_for(kind: EnvKind) -> Self {
        let (n_agents, grid_size, max_steps) = match kind {
            EnvKind::Firefighter => (50, 10, 20),
            EnvKind::Pursuit => (25, 45, 100),
            EnvKind::Battle => (128, 40, 200),
        };
        EnvConfig {
            kind,
            n_agents,
            grid_size,
            max_steps,
            seed: 0,
            firefighter: FirefighterParams::default(),
            pursuit: PursuitParams::default(),
            battle: BattleParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(BmfError::config("n_agents must be at least 2"));
        }
        if self.grid_size == 0 || self.max_steps == 0 {
            return Err(BmfError::config("grid_size and max_steps must be positive"));
        }
        let cells = self.grid_size * self.grid_size;
        match self.kind {
            EnvKind::Firefighter => {
                let p = &self.firefighter;
                if p.n_houses == 0 || p.nearest == 0 {
                    return Err(BmfError::config("firefighter needs houses and nearest >= 1"));
                }
                if p.n_houses > cells || self.n_agents > cells {
                    return Err(BmfError::config("grid too small for houses/agents"));
                }
                if p.initial_fire > 0.0 {
                    return Err(BmfError::config("fire values must be <= 0"));
                }
            }
            EnvKind::Pursuit => {
                if self.n_agents + self.pursuit.n_targets >= cells {
                    return Err(BmfError::config("grid too small for pursuers and targets"));
                }
            }
            EnvKind::Battle => {
                if !self.n_agents.is_multiple_of(2) {
                    return Err(BmfError::config("battle needs an even number of agents"));
                }
                if self.n_agents / 2 > self.grid_size * (self.grid_size / 2).max(1) {
                    return Err(BmfError::config("grid too small for battle teams"));
                }
                if self.battle.max_hp <= 0.0 || self.battle.damage <= 0.0 {
                    return Err(BmfError::config("battle hp and damage must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: i32,
    pub y: i32,
    pub team: usize,
    pub hp: f64,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct House {
    pub x: i32,
    pub y: i32,
    pub fire: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalState {
    pub t: usize,
    pub agents: Vec<AgentState>,
    pub houses: Vec<House>,
    pub targets: Vec<(i32, i32)>,
}

impl GlobalState {
    pub fn alive_mask(&self) -> Vec<bool> {
        self.agents.iter().map(|a| a.alive).collect()
    }

    pub fn alive_in_team(&self, team: usize) -> usize {
        self.agents.iter().filter(|a| a.alive && a.team == team).count()
    }
}

/// Countable events of one step, used for accounting checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    /// `(killer, victim)` pairs.
    pub kills: Vec<(usize, usize)>,
    pub tag_attempts: usize,
    pub tags: usize,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: GlobalState,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub alive: Vec<bool>,
    pub events: StepEvents,
}

pub trait Environment: Send {
    fn config(&self) -> &EnvConfig;

    /// Starts a new episode. Successive resets draw from the env's own
    /// seeded stream, so the sequence of initial states is reproducible.
    fn reset(&mut self) -> &GlobalState;

    fn state(&self) -> &GlobalState;

    /// Replaces the current state, e.g. to build hand-crafted scenarios.
    fn set_state(&mut self, state: GlobalState) -> Result<()>;

    /// `actions[i]` must be `Some` exactly for alive agents.
    fn step(&mut self, actions: &[Option<usize>]) -> Result<StepResult>;

    fn observe(&self, agent: usize) -> Result<Vec<f64>>;

    fn obs_dim(&self) -> usize;

    fn n_actions(&self) -> usize;

    fn n_teams(&self) -> usize {
        1
    }

    fn rng_state(&self) -> RngState;

    fn set_rng_state(&mut self, state: RngState);

    fn n_agents(&self) -> usize {
        self.config().n_agents
    }

    fn team_of(&self, agent: usize) -> usize {
        self.state().agents[agent].team
    }

    /// Observations for every agent; dead agents get zero vectors.
    fn observe_all(&self) -> Vec<Vec<f64>> {
        (0..self.n_agents())
            .map(|i| {
                if self.state().agents[i].alive {
                    self.observe(i).expect("alive agent observation")
                } else {
                    vec![0.0; self.obs_dim()]
                }
            })
            .collect()
    }
}

pub fn make_env(config: &EnvConfig) -> Result<Box<dyn Environment>> {
    config.validate()?;
    Ok(match config.kind {
        EnvKind::Firefighter => Box::new(Firefighter::new(config.clone())?),
        EnvKind::Pursuit => Box::new(Pursuit::new(config.clone())?),
        EnvKind::Battle => Box::new(Battle::new(config.clone())?),
    })
}

/// Discounted and undiscounted totals of a reward sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeReturn {
    pub discounted: f64,
    pub undiscounted: f64,
}

pub fn episode_return(rewards: &[f64], gamma: f64) -> EpisodeReturn {
    let mut discounted = 0.0;
    let mut factor = 1.0;
    for r in rewards {
        discounted += factor * r;
        factor *= gamma;
    }
    EpisodeReturn {
        discounted,
        undiscounted: rewards.iter().sum(),
    }
}

/// Checks a joint action against the alive mask and action range.
pub(crate) fn check_actions(
    state: &GlobalState,
    actions: &[Option<usize>],
    n_actions: usize,
) -> Result<()> {
    if actions.len() != state.agents.len() {
        return Err(BmfError::dims("joint action", state.agents.len(), actions.len()));
    }
    for (i, (a, agent)) in actions.iter().zip(&state.agents).enumerate() {
        match (a, agent.alive) {
            (Some(_), false) => return Err(BmfError::DeadAgent(i)),
            (None, true) => return Err(BmfError::MissingAction(i)),
            (Some(act), true) if *act >= n_actions => {
                return Err(BmfError::ActionOutOfRange {
                    agent: i,
                    action: *act,
                    n_actions,
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// Unit moves: up, down, left, right.
pub(crate) const DIRS: [(i32, i32); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

pub(crate) fn in_grid(x: i32, y: i32, size: usize) -> bool {
    x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size
}

pub(crate) fn norm_coord(v: i32, size: usize) -> f64 {
    v as f64 / (size.max(2) - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns() {
        assert_eq!(episode_return(&[1.0, 1.0, 1.0], 1.0).discounted, 3.0);
        let r = episode_return(&[1.0, 1.0], 0.5);
        assert_eq!(r.discounted, 1.5);
        assert_eq!(r.undiscounted, 2.0);
        assert_eq!(episode_return(&[0.0; 5], 0.9).discounted, 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = EnvConfig::default_for(EnvKind::Battle);
        c.n_agents = 7;
        assert!(c.validate().is_err());
        c.n_agents = 1;
        assert!(c.validate().is_err());
        assert!(EnvConfig::default_for(EnvKind::Firefighter).validate().is_ok());
        assert!("nope".parse::<EnvKind>().is_err());
    }

    #[test]
    fn reference_scale_defaults() {
        let ff = make_env(&EnvConfig::default_for(EnvKind::Firefighter)).unwrap();
        assert_eq!(ff.n_agents(), 50);
        let mut ff = ff;
        let s = ff.reset();
        assert_eq!(s.houses.len(), 50);
        assert!(s.houses.iter().all(|h| h.fire == -3.0));

        let mut p = make_env(&EnvConfig::default_for(EnvKind::Pursuit)).unwrap();
        let s = p.reset();
        assert_eq!(s.agents.len(), 25);
        assert_eq!(s.targets.len(), 50);

        let mut b = make_env(&EnvConfig::default_for(EnvKind::Battle)).unwrap();
        let s = b.reset();
        assert_eq!(s.agents.len(), 128);
        assert_eq!(s.agents.iter().filter(|a| a.team == 0).count(), 64);
        assert_eq!(b.n_teams(), 2);
    }

    #[test]
    fn seed_determinism_all_envs() {
        use rand::{Rng, SeedableRng};
        for kind in [EnvKind::Firefighter, EnvKind::Pursuit, EnvKind::Battle] {
            let mut cfg = EnvConfig::default_for(kind);
            if kind == EnvKind::Battle {
                cfg.n_agents = 16;
                cfg.grid_size = 12;
            }
            cfg.seed = 99;
            let run = || {
                let mut env = make_env(&cfg).unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
                let mut states = vec![env.reset().clone()];
                for _ in 0..15 {
                    let acts: Vec<Option<usize>> = env
                        .state()
                        .agents
                        .iter()
                        .map(|a| a.alive.then(|| rng.random_range(0..env.n_actions())))
                        .collect();
                    let res = env.step(&acts).unwrap();
                    states.push(res.next_state.clone());
                    if res.done {
                        break;
                    }
                }
                states
            };
            assert_eq!(run(), run(), "{kind}");
        }
    }

    #[test]
    fn action_checks() {
        let mut env = make_env(&EnvConfig::default_for(EnvKind::Pursuit)).unwrap();
        env.reset();
        let n = env.n_agents();
        let mut acts = vec![Some(0); n];
        acts[3] = Some(99);
        assert!(matches!(
            env.step(&acts),
            Err(BmfError::ActionOutOfRange { agent: 3, .. })
        ));
        acts[3] = None;
        assert!(matches!(env.step(&acts), Err(BmfError::MissingAction(3))));
        assert!(env.step(&acts[..2]).is_err());
    }
}
