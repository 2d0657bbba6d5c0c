use rand::seq::SliceRandom;

use super::{check_actions, norm_coord, AgentState, EnvConfig, Environment, GlobalState, House, StepEvents, StepResult};
use crate::error::{BmfError, Result};
use crate::rng::{self, Rng, RngState, Stream};

/// Fire values are divided by this before entering observations.
const FIRE_SCALE: f64 = 10.0;

/// Cooperative firefighting on a fixed layout.
///
/// Each agent stands still and may attend one of its `nearest` closest
/// houses per step (action `k` = k-th nearest) or do nothing (last action).
/// Every burning house loses `burn_rate` per step; afterwards it gains `+1`
/// per attending agent, capped at `0` (extinguished, stays out).
///
/// Team reward per step is the sum of all fire values. Each house's value
/// is split equally among the agents that have it in their nearest set;
/// uncovered houses are split across everybody.
pub struct Firefighter {
    config: EnvConfig,
    state: GlobalState,
    initial: GlobalState,
    nearest: Vec<Vec<usize>>,
    /// `(agent, weight)` pairs for each house's reward split.
    shares: Vec<Vec<(usize, f64)>>,
    rng: Rng,
}

impl Firefighter {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let g = config.grid_size as i32;
        let p = &config.firefighter;
        // Layout is a pure function of the seed: the same town every episode.
        let mut layout_rng = rng::stream(config.seed, Stream::Env);
        let mut cells: Vec<(i32, i32)> = (0..g).flat_map(|x| (0..g).map(move |y| (x, y))).collect();
        cells.shuffle(&mut layout_rng);
        let houses: Vec<House> = cells[..p.n_houses]
            .iter()
            .map(|&(x, y)| House {
                x,
                y,
                fire: p.initial_fire,
            })
            .collect();
        cells.shuffle(&mut layout_rng);
        let agents: Vec<AgentState> = cells[..config.n_agents]
            .iter()
            .map(|&(x, y)| AgentState {
                x,
                y,
                team: 0,
                hp: 1.0,
                alive: true,
            })
            .collect();

        let w = p.nearest.min(p.n_houses);
        let nearest: Vec<Vec<usize>> = agents
            .iter()
            .map(|a| {
                let mut idx: Vec<usize> = (0..houses.len()).collect();
                idx.sort_by_key(|&h| {
                    let (dx, dy) = (houses[h].x - a.x, houses[h].y - a.y);
                    (dx * dx + dy * dy, h)
                });
                idx.truncate(w);
                idx
            })
            .collect();

        let n = agents.len();
        let mut shares = vec![Vec::new(); houses.len()];
        for (i, near) in nearest.iter().enumerate() {
            for &h in near {
                shares[h].push((i, 0.0));
            }
        }
        for s in &mut shares {
            if s.is_empty() {
                *s = (0..n).map(|i| (i, 1.0 / n as f64)).collect();
            } else {
                let wgt = 1.0 / s.len() as f64;
                s.iter_mut().for_each(|e| e.1 = wgt);
            }
        }

        let initial = GlobalState {
            t: 0,
            agents,
            houses,
            targets: Vec::new(),
        };
        Ok(Firefighter {
            state: initial.clone(),
            initial,
            nearest,
            shares,
            rng: rng::stream(config.seed, Stream::Env),
            config,
        })
    }

    /// Houses agent `i` can attend, nearest first.
    pub fn nearest_houses(&self, agent: usize) -> &[usize] {
        &self.nearest[agent]
    }

    pub fn noop_action(&self) -> usize {
        self.n_actions() - 1
    }

    pub fn total_fire(&self) -> f64 {
        self.state.houses.iter().map(|h| h.fire).sum()
    }
}

impl Environment for Firefighter {
    fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn reset(&mut self) -> &GlobalState {
        self.state = self.initial.clone();
        &self.state
    }

    fn state(&self) -> &GlobalState {
        &self.state
    }

    fn set_state(&mut self, state: GlobalState) -> Result<()> {
        if state.agents.len() != self.initial.agents.len() || state.houses.len() != self.initial.houses.len() {
            return Err(BmfError::config("state shape does not match the layout"));
        }
        if state.houses.iter().any(|h| h.fire > 0.0) {
            return Err(BmfError::config("house fire values must be <= 0"));
        }
        self.state = state;
        Ok(())
    }

    fn step(&mut self, actions: &[Option<usize>]) -> Result<StepResult> {
        check_actions(&self.state, actions, self.n_actions())?;
        let burn = self.config.firefighter.burn_rate;
        let noop = self.noop_action();

        for h in &mut self.state.houses {
            if h.fire < 0.0 {
                h.fire -= burn;
            }
        }
        let mut attending = vec![0usize; self.state.houses.len()];
        for (i, a) in actions.iter().enumerate() {
            let a = a.expect("checked");
            if a != noop {
                attending[self.nearest[i][a]] += 1;
            }
        }
        for (h, &count) in self.state.houses.iter_mut().zip(&attending) {
            if h.fire < 0.0 && count > 0 {
                h.fire = (h.fire + count as f64).min(0.0);
            }
        }
        self.state.t += 1;

        let mut rewards = vec![0.0; self.state.agents.len()];
        for (h, share) in self.state.houses.iter().zip(&self.shares) {
            for &(i, w) in share {
                rewards[i] += h.fire * w;
            }
        }
        let all_out = self.state.houses.iter().all(|h| h.fire >= 0.0);
        let done = all_out || self.state.t >= self.config.max_steps;
        Ok(StepResult {
            next_state: self.state.clone(),
            rewards,
            done,
            alive: self.state.alive_mask(),
            events: StepEvents::default(),
        })
    }

    /// Own normalized position followed by the scaled fire values of the
    /// agent's nearest houses.
    fn observe(&self, agent: usize) -> Result<Vec<f64>> {
        let a = self.state.agents.get(agent).ok_or(BmfError::UnknownAgent(agent))?;
        let g = self.config.grid_size;
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.push(norm_coord(a.x, g));
        obs.push(norm_coord(a.y, g));
        for &h in &self.nearest[agent] {
            obs.push(self.state.houses[h].fire / FIRE_SCALE);
        }
        Ok(obs)
    }

    fn obs_dim(&self) -> usize {
        2 + self.nearest[0].len()
    }

    fn n_actions(&self) -> usize {
        self.nearest[0].len() + 1
    }

    fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    fn set_rng_state(&mut self, state: RngState) {
        self.rng = state.restore();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;

    fn env() -> Firefighter {
        Firefighter::new(EnvConfig::default_for(EnvKind::Firefighter)).unwrap()
    }

    #[test]
    fn no_extinguishing_burns_by_one() {
        let mut e = env();
        e.reset();
        let before: Vec<f64> = e.state().houses.iter().map(|h| h.fire).collect();
        let acts = vec![Some(e.noop_action()); 50];
        let res = e.step(&acts).unwrap();
        for (b, h) in before.iter().zip(&res.next_state.houses) {
            assert_eq!(h.fire, b - 1.0);
        }
    }

    #[test]
    fn total_fire_drops_by_burning_count() {
        let mut e = env();
        e.reset();
        let mut state = e.state().clone();
        // Two houses already out: they must not burn.
        state.houses[0].fire = 0.0;
        state.houses[7].fire = 0.0;
        e.set_state(state).unwrap();
        let acts = vec![Some(e.noop_action()); 50];
        for _ in 0..5 {
            let burning = e.state().houses.iter().filter(|h| h.fire < 0.0).count() as f64;
            let before = e.total_fire();
            e.step(&acts).unwrap();
            assert_eq!(e.total_fire(), before - burning);
        }
    }

    #[test]
    fn attending_agents_extinguish_with_cap() {
        let mut e = env();
        e.reset();
        let target = e.nearest_houses(0)[0];
        let helpers: Vec<usize> = (0..50)
            .filter(|&i| e.nearest_houses(i).contains(&target))
            .collect();
        let mut acts = vec![Some(e.noop_action()); 50];
        for &i in &helpers {
            let k = e.nearest_houses(i).iter().position(|&h| h == target).unwrap();
            acts[i] = Some(k);
        }
        let res = e.step(&acts).unwrap();
        let expected = (-3.0 - 1.0 + helpers.len() as f64).min(0.0);
        assert_eq!(res.next_state.houses[target].fire, expected);
    }

    #[test]
    fn rewards_sum_to_total_fire() {
        let mut e = env();
        e.reset();
        let acts: Vec<Option<usize>> = (0..50).map(|i| Some(i % 5)).collect();
        let res = e.step(&acts).unwrap();
        let total: f64 = res.rewards.iter().sum();
        assert!((total - e.total_fire()).abs() < 1e-9);
    }

    #[test]
    fn observation_layout() {
        let mut e = env();
        e.reset();
        let o = e.observe(3).unwrap();
        assert_eq!(o.len(), e.obs_dim());
        assert_eq!(o.len(), 6);
        assert!(o[0] >= 0.0 && o[0] <= 1.0);
        assert!(o[2..].iter().all(|&f| f == -0.3));
        assert!(e.observe(50).is_err());
    }

    #[test]
    fn episode_ends_at_max_steps() {
        let mut e = env();
        e.reset();
        let acts = vec![Some(e.noop_action()); 50];
        let mut steps = 0;
        loop {
            steps += 1;
            if e.step(&acts).unwrap().done {
                break;
            }
        }
        assert_eq!(steps, e.config().max_steps);
    }
}
