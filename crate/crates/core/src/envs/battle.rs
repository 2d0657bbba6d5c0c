use rand::seq::SliceRandom;

use super::{check_actions, in_grid, norm_coord, AgentState, EnvConfig, Environment, GlobalState, StepEvents, StepResult, DIRS};
use crate::error::{BmfError, Result};
use crate::rng::{self, Rng, RngState, Stream};

/// `0` no-op, `1..=4` move, `5..=8` attack the adjacent cell in that
/// direction (up, down, left, right).
pub const N_ACTIONS: usize = 9;
const ATTACK0: usize = 5;

/// Result of a finished (or truncated) battle, from team 0's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Team0,
    Team1,
    Draw,
}

/// Two equal teams on a grid. Agents at most one per cell.
///
/// Per step: every agent alive at the start of the step pays
/// `step_penalty`; attacks resolve in a random order against current HP
/// (`+hit_reward` to the attacker, `-hurt_penalty` to the victim,
/// `+kill_reward` to whoever lands the killing blow); the survivors then
/// move in the same order onto free cells. The episode ends when a team is
/// wiped out or at `max_steps`.
pub struct Battle {
    config: EnvConfig,
    state: GlobalState,
    rng: Rng,
}

impl Battle {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Battle {
            state: GlobalState::default(),
            rng: rng::stream(config.seed, Stream::Env),
            config,
        })
    }

    pub fn team_size(&self) -> usize {
        self.config.n_agents / 2
    }

    /// Winner by survivors, then by remaining HP.
    pub fn outcome(&self) -> Outcome {
        outcome(&self.state)
    }

    fn occupant_grid(&self) -> Vec<Option<usize>> {
        let g = self.config.grid_size;
        let mut grid = vec![None; g * g];
        for (i, a) in self.state.agents.iter().enumerate() {
            if a.alive {
                grid[a.y as usize * g + a.x as usize] = Some(i);
            }
        }
        grid
    }

    fn radius(&self) -> i32 {
        self.config.battle.view_radius as i32
    }
}

/// Winner by survivors, then by remaining HP.
pub fn outcome(state: &GlobalState) -> Outcome {
    let alive = |t| state.alive_in_team(t);
    let hp = |t| -> f64 { state.agents.iter().filter(|a| a.alive && a.team == t).map(|a| a.hp).sum() };
    match alive(0).cmp(&alive(1)) {
        std::cmp::Ordering::Greater => Outcome::Team0,
        std::cmp::Ordering::Less => Outcome::Team1,
        std::cmp::Ordering::Equal => {
            let (h0, h1) = (hp(0), hp(1));
            if h0 > h1 {
                Outcome::Team0
            } else if h1 > h0 {
                Outcome::Team1
            } else {
                Outcome::Draw
            }
        }
    }
}

/// Attack an adjacent enemy if there is one, otherwise step toward the
/// nearest enemy along the longer axis. Used as a fixed evaluation opponent.
pub fn scripted_action(state: &GlobalState, agent: usize) -> usize {
    let me = &state.agents[agent];
    let enemies = state.agents.iter().filter(|a| a.alive && a.team != me.team);
    for (d, &(dx, dy)) in DIRS.iter().enumerate() {
        if state
            .agents
            .iter()
            .any(|a| a.alive && a.team != me.team && a.x == me.x + dx && a.y == me.y + dy)
        {
            return ATTACK0 + d;
        }
    }
    let nearest = enemies.min_by_key(|a| ((a.x - me.x).abs() + (a.y - me.y).abs(), a.x, a.y));
    match nearest {
        None => 0,
        Some(e) => {
            let (dx, dy) = (e.x - me.x, e.y - me.y);
            if dx.abs() >= dy.abs() {
                if dx > 0 {
                    4
                } else {
                    3
                }
            } else if dy > 0 {
                2
            } else {
                1
            }
        }
    }
}

impl Environment for Battle {
    fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Team 0 spawns on random cells in a band left of centre; team 1 is
    /// its mirror image.
    fn reset(&mut self) -> &GlobalState {
        let g = self.config.grid_size as i32;
        let team = self.team_size();
        let half = (g / 2).max(1);
        let mut width = (team as i32 + g - 1) / g;
        width = width.max(g / 4).max(1).min(half);
        let x_hi = half - if half > width { 1 } else { 0 };
        let x_lo = (x_hi - width).max(0);
        let mut cells: Vec<(i32, i32)> = (x_lo..x_hi.max(x_lo + 1))
            .flat_map(|x| (0..g).map(move |y| (x, y)))
            .collect();
        if cells.len() < team {
            cells = (0..half).flat_map(|x| (0..g).map(move |y| (x, y))).collect();
        }
        cells.shuffle(&mut self.rng);
        let max_hp = self.config.battle.max_hp;
        let mut agents = Vec::with_capacity(2 * team);
        for &(x, y) in &cells[..team] {
            agents.push(AgentState {
                x,
                y,
                team: 0,
                hp: max_hp,
                alive: true,
            });
        }
        for i in 0..team {
            let a = &agents[i];
            agents.push(AgentState {
                x: g - 1 - a.x,
                y: a.y,
                team: 1,
                hp: max_hp,
                alive: true,
            });
        }
        self.state = GlobalState {
            t: 0,
            agents,
            houses: Vec::new(),
            targets: Vec::new(),
        };
        &self.state
    }

    fn state(&self) -> &GlobalState {
        &self.state
    }

    fn set_state(&mut self, state: GlobalState) -> Result<()> {
        let g = self.config.grid_size;
        if state.agents.len() != self.config.n_agents {
            return Err(BmfError::dims("battle agents", self.config.n_agents, state.agents.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for a in state.agents.iter().filter(|a| a.alive) {
            if !in_grid(a.x, a.y, g) || !seen.insert((a.x, a.y)) {
                return Err(BmfError::config("alive agents need distinct in-grid cells"));
            }
            if a.hp <= 0.0 || a.hp > self.config.battle.max_hp {
                return Err(BmfError::config("hp out of range"));
            }
        }
        self.state = state;
        Ok(())
    }

    fn step(&mut self, actions: &[Option<usize>]) -> Result<StepResult> {
        check_actions(&self.state, actions, N_ACTIONS)?;
        let g = self.config.grid_size;
        let p = self.config.battle.clone();
        let n = self.state.agents.len();
        let mut rewards = vec![0.0; n];
        let mut events = StepEvents::default();

        let mut order: Vec<usize> = (0..n).filter(|&i| self.state.agents[i].alive).collect();
        order.shuffle(&mut self.rng);
        for &i in &order {
            rewards[i] -= p.step_penalty;
        }

        let grid = self.occupant_grid();
        for &i in &order {
            let a = actions[i].expect("checked");
            if a < ATTACK0 {
                continue;
            }
            let (dx, dy) = DIRS[a - ATTACK0];
            let me = &self.state.agents[i];
            let (tx, ty) = (me.x + dx, me.y + dy);
            if !in_grid(tx, ty, g) {
                continue;
            }
            let Some(v) = grid[ty as usize * g + tx as usize] else {
                continue;
            };
            let team = me.team;
            let victim = &mut self.state.agents[v];
            if victim.team == team || !victim.alive {
                continue;
            }
            victim.hp -= p.damage;
            rewards[i] += p.hit_reward;
            rewards[v] -= p.hurt_penalty;
            if victim.hp <= 0.0 {
                victim.hp = 0.0;
                victim.alive = false;
                rewards[i] += p.kill_reward;
                events.kills.push((i, v));
            }
        }

        let mut grid = self.occupant_grid();
        for &i in &order {
            let a = actions[i].expect("checked");
            if !(1..=4).contains(&a) || !self.state.agents[i].alive {
                continue;
            }
            let (dx, dy) = DIRS[a - 1];
            let agent = &mut self.state.agents[i];
            let (nx, ny) = (agent.x + dx, agent.y + dy);
            if in_grid(nx, ny, g) && grid[ny as usize * g + nx as usize].is_none() {
                grid[agent.y as usize * g + agent.x as usize] = None;
                grid[ny as usize * g + nx as usize] = Some(i);
                agent.x = nx;
                agent.y = ny;
            }
        }

        self.state.t += 1;
        let wiped = self.state.alive_in_team(0) == 0 || self.state.alive_in_team(1) == 0;
        Ok(StepResult {
            next_state: self.state.clone(),
            rewards,
            done: wiped || self.state.t >= self.config.max_steps,
            alive: self.state.alive_mask(),
            events,
        })
    }

    /// `[x, y, hp, dx, dy]` (position, HP fraction, offset to the nearest
    /// enemy scaled by the grid size) followed by ally and enemy windows of
    /// side `2 * view_radius + 1` holding HP fractions, row-major.
    fn observe(&self, agent: usize) -> Result<Vec<f64>> {
        let me = self.state.agents.get(agent).ok_or(BmfError::UnknownAgent(agent))?;
        if !me.alive {
            return Err(BmfError::DeadAgent(agent));
        }
        let g = self.config.grid_size;
        let r = self.radius();
        let side = (2 * r + 1) as usize;
        let max_hp = self.config.battle.max_hp;
        let mut obs = vec![0.0; self.obs_dim()];
        obs[0] = norm_coord(me.x, g);
        obs[1] = norm_coord(me.y, g);
        obs[2] = me.hp / max_hp;
        let nearest = self
            .state
            .agents
            .iter()
            .filter(|a| a.alive && a.team != me.team)
            .min_by_key(|a| ((a.x - me.x).abs() + (a.y - me.y).abs(), (a.y - me.y).abs(), a.y));
        if let Some(e) = nearest {
            obs[3] = (e.x - me.x) as f64 / g as f64;
            obs[4] = (e.y - me.y) as f64 / g as f64;
        }
        for (j, other) in self.state.agents.iter().enumerate() {
            if j == agent || !other.alive {
                continue;
            }
            let (dx, dy) = (other.x - me.x, other.y - me.y);
            if dx.abs() > r || dy.abs() > r {
                continue;
            }
            let k = ((dy + r) as usize) * side + (dx + r) as usize;
            let base = if other.team == me.team { 5 } else { 5 + side * side };
            obs[base + k] = other.hp / max_hp;
        }
        Ok(obs)
    }

    fn obs_dim(&self) -> usize {
        let side = 2 * self.config.battle.view_radius + 1;
        5 + 2 * side * side
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn n_teams(&self) -> usize {
        2
    }

    fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    fn set_rng_state(&mut self, state: RngState) {
        self.rng = state.restore();
    }
}
