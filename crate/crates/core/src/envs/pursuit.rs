use std::collections::HashSet;

use rand::Rng as _;

use super::{check_actions, in_grid, norm_coord, AgentState, EnvConfig, Environment, GlobalState, StepEvents, StepResult, DIRS};
use crate::error::{BmfError, Result};
use crate::rng::{self, Rng, RngState, Stream};

/// Action index of the tag attempt; `0` stays, `1..=4` move.
pub const TAG: usize = 5;

/// Pursuers tag randomly walking targets.
///
/// Every tag attempt costs `tag_penalty`; a target within Chebyshev
/// distance 1 is caught for `tag_reward` and respawns on a random free
/// cell. Attempts resolve in agent order, then pursuers move, then each
/// target random-walks.
pub struct Pursuit {
    config: EnvConfig,
    state: GlobalState,
    rng: Rng,
}

impl Pursuit {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pursuit {
            state: GlobalState::default(),
            rng: rng::stream(config.seed, Stream::Env),
            config,
        })
    }

    fn random_free_cell(&mut self, occupied: &HashSet<(i32, i32)>) -> (i32, i32) {
        let g = self.config.grid_size as i32;
        loop {
            let c = (self.rng.random_range(0..g), self.rng.random_range(0..g));
            if !occupied.contains(&c) {
                return c;
            }
        }
    }

    fn occupied(&self) -> HashSet<(i32, i32)> {
        self.state
            .agents
            .iter()
            .map(|a| (a.x, a.y))
            .chain(self.state.targets.iter().copied())
            .collect()
    }

    fn radius(&self) -> i32 {
        self.config.pursuit.view_radius as i32
    }
}

impl Environment for Pursuit {
    fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn reset(&mut self) -> &GlobalState {
        self.state = GlobalState::default();
        let mut occupied = HashSet::new();
        for _ in 0..self.config.n_agents {
            let (x, y) = self.random_free_cell(&occupied);
            occupied.insert((x, y));
            self.state.agents.push(AgentState {
                x,
                y,
                team: 0,
                hp: 1.0,
                alive: true,
            });
        }
        for _ in 0..self.config.pursuit.n_targets {
            let c = self.random_free_cell(&occupied);
            occupied.insert(c);
            self.state.targets.push(c);
        }
        &self.state
    }

    fn state(&self) -> &GlobalState {
        &self.state
    }

    fn set_state(&mut self, state: GlobalState) -> Result<()> {
        let g = self.config.grid_size;
        if state.agents.len() != self.config.n_agents {
            return Err(BmfError::dims("pursuers", self.config.n_agents, state.agents.len()));
        }
        if state.agents.iter().any(|a| !in_grid(a.x, a.y, g)) || state.targets.iter().any(|&(x, y)| !in_grid(x, y, g)) {
            return Err(BmfError::config("positions must lie inside the grid"));
        }
        self.state = state;
        Ok(())
    }

    fn step(&mut self, actions: &[Option<usize>]) -> Result<StepResult> {
        check_actions(&self.state, actions, self.n_actions())?;
        let g = self.config.grid_size;
        let p = self.config.pursuit.clone();
        let mut rewards = vec![0.0; self.state.agents.len()];
        let mut events = StepEvents::default();

        for (i, a) in actions.iter().enumerate() {
            if a.expect("checked") != TAG {
                continue;
            }
            events.tag_attempts += 1;
            rewards[i] -= p.tag_penalty;
            let (ax, ay) = (self.state.agents[i].x, self.state.agents[i].y);
            let hit = self
                .state
                .targets
                .iter()
                .position(|&(tx, ty)| (tx - ax).abs().max((ty - ay).abs()) <= 1);
            if let Some(t) = hit {
                events.tags += 1;
                rewards[i] += p.tag_reward;
                let occupied = self.occupied();
                self.state.targets[t] = self.random_free_cell(&occupied);
            }
        }

        for (agent, a) in self.state.agents.iter_mut().zip(actions) {
            let a = a.expect("checked");
            if (1..=4).contains(&a) {
                let (dx, dy) = DIRS[a - 1];
                if in_grid(agent.x + dx, agent.y + dy, g) {
                    agent.x += dx;
                    agent.y += dy;
                }
            }
        }

        let mut target_cells: HashSet<(i32, i32)> = self.state.targets.iter().copied().collect();
        for t in 0..self.state.targets.len() {
            let choice = self.rng.random_range(0..5usize);
            if choice == 0 {
                continue;
            }
            let (dx, dy) = DIRS[choice - 1];
            let (x, y) = self.state.targets[t];
            let next = (x + dx, y + dy);
            if in_grid(next.0, next.1, g) && !target_cells.contains(&next) {
                target_cells.remove(&(x, y));
                target_cells.insert(next);
                self.state.targets[t] = next;
            }
        }

        self.state.t += 1;
        Ok(StepResult {
            next_state: self.state.clone(),
            rewards,
            done: self.state.t >= self.config.max_steps,
            alive: self.state.alive_mask(),
            events,
        })
    }

    /// `[x, y, dx, dy]` (position and offset to the nearest target, both
    /// normalized) followed by a target window and a pursuer window of
    /// side `2 * view_radius + 1`, row-major.
    fn observe(&self, agent: usize) -> Result<Vec<f64>> {
        let a = self.state.agents.get(agent).ok_or(BmfError::UnknownAgent(agent))?;
        let g = self.config.grid_size;
        let r = self.radius();
        let side = (2 * r + 1) as usize;
        let mut obs = vec![0.0; self.obs_dim()];
        obs[0] = norm_coord(a.x, g);
        obs[1] = norm_coord(a.y, g);
        if let Some(&(tx, ty)) = self
            .state
            .targets
            .iter()
            .min_by_key(|&&(tx, ty)| ((tx - a.x).abs().max((ty - a.y).abs()), tx, ty))
        {
            obs[2] = (tx - a.x) as f64 / g as f64;
            obs[3] = (ty - a.y) as f64 / g as f64;
        }
        let window = |x: i32, y: i32| -> Option<usize> {
            let (dx, dy) = (x - a.x, y - a.y);
            (dx.abs() <= r && dy.abs() <= r).then(|| ((dy + r) as usize) * side + (dx + r) as usize)
        };
        for &(tx, ty) in &self.state.targets {
            if let Some(k) = window(tx, ty) {
                obs[4 + k] = 1.0;
            }
        }
        for (j, other) in self.state.agents.iter().enumerate() {
            if j != agent {
                if let Some(k) = window(other.x, other.y) {
                    obs[4 + side * side + k] = 1.0;
                }
            }
        }
        Ok(obs)
    }

    fn obs_dim(&self) -> usize {
        let side = 2 * self.config.pursuit.view_radius + 1;
        4 + 2 * side * side
    }

    fn n_actions(&self) -> usize {
        6
    }

    fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    fn set_rng_state(&mut self, state: RngState) {
        self.rng = state.restore();
    }
}
