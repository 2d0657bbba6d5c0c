//! Drives one learner through an episode: group reassignment, mean
//! actions, acting. In self-play a single controller owns every agent; in
//! evaluation each side gets its own.

use crate::error::{BmfError, Result};
use crate::grouping::{maybe_reassign, random_assignment, ForwardModel, GroupAttention, GroupState, GroupingMode};
use crate::learners::{Checkpoint, GroupSnapshot, Learner, LearnerConfig, Section};
use crate::meanfield::{ActionRepr, DelayedMeanCache, MeanFieldActions};
use crate::rng::{substream, Rng, RngState, Stream};

use super::config::{GroupConfig, RunConfig};

/// Builds the learner for `config`, with grouping components for the
/// bi-level algorithms. Every component draws from its own substream.
pub fn build_learner(config: &RunConfig, obs_dim: usize, n_actions: usize, seed: u64) -> Result<Learner> {
    let learner = Learner::new(config.learner.clone(), obs_dim, n_actions, seed)?;
    if !config.learner.algo.is_bilevel() {
        return Ok(learner);
    }
    let g = &config.group;
    match g.mode {
        GroupingMode::Random => Ok(learner),
        mode => {
            let mut fm = ForwardModel::new(obs_dim, n_actions, g.latent_dim, g.hidden, &mut substream(seed, Stream::Grouping, 0))?;
            fm.lambda_p = g.lambda_p;
            fm.lambda_e = g.lambda_e;
            fm.beta = g.beta;
            fm.variational = mode == GroupingMode::Vae;
            let att = GroupAttention::init(g.latent_dim, &mut substream(seed, Stream::Attention, 0));
            Ok(learner.with_grouping(Some(att), Some(fm)))
        }
    }
}

fn mode_code(m: GroupingMode) -> f64 {
    match m {
        GroupingMode::Vae => 0.0,
        GroupingMode::Ae => 1.0,
        GroupingMode::Random => 2.0,
    }
}

/// Stores the grouping settings a checkpoint needs to be replayed.
pub fn push_group_config(ck: &mut Checkpoint, g: &GroupConfig) {
    ck.push(
        "group.config",
        Section::F64(vec![
            g.k as f64,
            g.interval as f64,
            g.latent_dim as f64,
            g.hidden as f64,
            g.lambda_p,
            g.lambda_e,
            g.beta,
            mode_code(g.mode),
            g.max_iter as f64,
            if g.delay { 1.0 } else { 0.0 },
        ]),
    );
}

pub fn load_group_config(ck: &Checkpoint) -> Result<GroupConfig> {
    let v = ck.f64s("group.config")?;
    if v.len() != 10 {
        return Err(BmfError::dims("group.config", 10, v.len()));
    }
    Ok(GroupConfig {
        k: v[0] as usize,
        interval: v[1] as u64,
        latent_dim: v[2] as usize,
        hidden: v[3] as usize,
        lambda_p: v[4],
        lambda_e: v[5],
        beta: v[6],
        mode: match v[7] as u8 {
            0 => GroupingMode::Vae,
            1 => GroupingMode::Ae,
            _ => GroupingMode::Random,
        },
        max_iter: v[8] as usize,
        delay: v[9] != 0.0,
    })
}

pub fn rng_to_u64s(s: &RngState) -> Vec<u64> {
    let mut v: Vec<u64> = s.seed.chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    v.push(s.stream);
    v.push(s.word_pos as u64);
    v.push((s.word_pos >> 64) as u64);
    v
}

pub fn rng_from_u64s(v: &[u64]) -> Result<RngState> {
    if v.len() != 7 {
        return Err(BmfError::dims("rng state", 7, v.len()));
    }
    let mut seed = [0u8; 32];
    for (i, w) in v[..4].iter().enumerate() {
        seed[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
    }
    Ok(RngState {
        seed,
        stream: v[4],
        word_pos: v[5] as u128 | ((v[6] as u128) << 64),
    })
}

/// What happened to the grouping during `prepare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupEvent {
    None,
    Reassigned,
}

#[derive(Debug, Clone)]
pub struct Controller {
    pub learner: Learner,
    pub group: GroupConfig,
    seed: u64,
    repr: ActionRepr,
    teams: Vec<usize>,
    n_teams: usize,
    groups: GroupState,
    fixed: Option<GroupState>,
    cache: DelayedMeanCache,
    rng_group: Rng,
}

impl Controller {
    pub fn new(learner: Learner, group: GroupConfig, teams: Vec<usize>, seed: u64) -> Self {
        let n = teams.len();
        let n_teams = teams.iter().max().map_or(1, |t| t + 1);
        let repr = ActionRepr::OneHot(learner.n_actions);
        Controller {
            groups: GroupState::empty(n, n_teams, group.k, group.latent_dim),
            cache: DelayedMeanCache::new(repr, n),
            rng_group: substream(seed, Stream::Grouping, 1),
            fixed: None,
            learner,
            group,
            seed,
            repr,
            teams,
            n_teams,
        }
    }

    /// Frozen greedy controller from a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint, teams: Vec<usize>, seed: u64) -> Result<Self> {
        let config = LearnerConfig {
            algo: ck.algo.parse()?,
            ..LearnerConfig::default()
        };
        let learner = Learner::from_checkpoint(config, ck)?;
        let group = load_group_config(ck)?;
        Ok(Controller::new(learner, group, teams, seed))
    }

    pub fn repr(&self) -> ActionRepr {
        self.repr
    }

    pub fn groups(&self) -> &GroupState {
        &self.groups
    }

    pub fn teams(&self) -> &[usize] {
        &self.teams
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng_group)
    }

    pub fn set_rng_state(&mut self, s: &RngState) {
        self.rng_group = s.restore();
    }

    fn bilevel(&self) -> bool {
        self.learner.algo().is_bilevel()
    }

    pub fn begin_episode(&mut self, alive: &[bool]) {
        self.cache.reset();
        let n = self.teams.len();
        self.groups = GroupState::empty(n, self.n_teams, self.group.k, self.group.latent_dim);
        if self.bilevel() && self.group.mode == GroupingMode::Random {
            if self.fixed.is_none() {
                let mut rng = substream(self.seed, Stream::Grouping, 2);
                let all = vec![true; n];
                self.fixed = Some(random_assignment(&self.teams, &all, self.n_teams, self.group.k, self.group.latent_dim, &mut rng));
            }
            self.groups = self.fixed.clone().unwrap();
            self.groups.retain_alive(alive);
        }
    }

    fn representations(&self, obs: &[Vec<f64>], alive: &[bool]) -> Result<Vec<Option<Vec<f64>>>> {
        let fm = self
            .learner
            .forward_model
            .as_ref()
            .ok_or_else(|| BmfError::config("grouping needs a forward model"))?;
        let last = self.cache.last_actions();
        (0..obs.len())
            .map(|i| {
                if !alive[i] {
                    return Ok(None);
                }
                let a = match last.and_then(|l| l[i].clone()) {
                    Some(a) => a,
                    None => vec![0.0; self.repr.dim()],
                };
                fm.encode_mean(&obs[i], &a).map(Some)
            })
            .collect()
    }

    fn compute_means(&self, table: &[Option<Vec<f64>>]) -> MeanFieldActions {
        let algo = self.learner.algo();
        if algo.is_bilevel() {
            MeanFieldActions::bilevel(&self.groups, table, self.repr)
        } else if algo.uses_mean_field() {
            MeanFieldActions::plain(&self.teams, table, self.repr)
        } else {
            MeanFieldActions::zeros(self.repr, table.len(), 0)
        }
    }

    fn table(&self, actions: &[Option<usize>]) -> Vec<Option<Vec<f64>>> {
        actions.iter().map(|a| a.map(|a| self.repr.one_hot(a))).collect()
    }

    /// Regroups at multiples of the interval, then returns the delayed
    /// means the policy acts on at episode step `t`.
    pub fn prepare(&mut self, t: usize, obs: &[Vec<f64>], alive: &[bool]) -> Result<(MeanFieldActions, GroupEvent)> {
        let mut event = GroupEvent::None;
        if self.bilevel() {
            if self.group.mode != GroupingMode::Random && (t as u64).is_multiple_of(self.group.interval) {
                let reps = self.representations(obs, alive)?;
                self.groups = maybe_reassign(
                    t as u64,
                    self.group.interval,
                    &self.groups,
                    &reps,
                    &self.teams,
                    self.group.max_iter,
                    &mut self.rng_group,
                )?;
                event = GroupEvent::Reassigned;
            }
            self.groups.retain_alive(alive);
            self.groups.refresh_weights(self.learner.attention.as_ref());
        }
        let means = self.cache.means(alive, |table| self.compute_means(table));
        Ok((means, event))
    }

    /// Actions for the agents in `mask`. Without the one-step delay the
    /// policy acts twice: once on the delayed means to get a tentative joint
    /// action, then on means recomputed from it.
    pub fn act(
        &self,
        obs: &[Vec<f64>],
        means: MeanFieldActions,
        mask: &[bool],
        epsilon: Option<f64>,
        rng: &mut Rng,
    ) -> Result<(Vec<Option<usize>>, MeanFieldActions)> {
        let first = self.learner.act(obs, &means, mask, epsilon, rng)?;
        if self.group.delay || !self.learner.algo().uses_mean_field() {
            return Ok((first, means));
        }
        let fresh = self.compute_means(&self.table(&first));
        let second = self.learner.act(obs, &fresh, mask, epsilon, rng)?;
        Ok((second, fresh))
    }

    /// Records the joint action and returns the means of the next state,
    /// built from it with the agents that died removed.
    pub fn observe(&mut self, actions: &[Option<usize>], next_alive: &[bool]) -> MeanFieldActions {
        self.cache.record(self.table(actions));
        self.cache.means(next_alive, |table| self.compute_means(table))
    }

    pub fn snapshot(&self) -> Option<GroupSnapshot> {
        self.bilevel().then(|| GroupSnapshot {
            assignment: self.groups.assignment.clone(),
            centroids: self.groups.centroids.clone(),
            group_team: self.groups.group_team.clone(),
        })
    }

    /// Number of non-empty groups.
    pub fn realized_groups(&self) -> usize {
        if !self.bilevel() {
            return 0;
        }
        self.groups.group_sizes().iter().filter(|&&s| s > 0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;
    use crate::learners::Algo;

    #[test]
    fn rng_state_roundtrip() {
        use rand::Rng as _;
        let mut r = substream(9, Stream::Act, 3);
        for _ in 0..17 {
            r.random::<u32>();
        }
        let s = RngState::capture(&r);
        assert_eq!(rng_from_u64s(&rng_to_u64s(&s)).unwrap(), s);
    }

    #[test]
    fn group_config_roundtrip() {
        for mode in [GroupingMode::Vae, GroupingMode::Ae, GroupingMode::Random] {
            let mut g = GroupConfig::default_for(EnvKind::Battle);
            g.mode = mode;
            g.delay = false;
            let mut ck = Checkpoint::new("bmf_q", 3, 2);
            push_group_config(&mut ck, &g);
            assert_eq!(load_group_config(&ck).unwrap(), g);
        }
    }

    #[test]
    fn random_mode_partition_is_fixed_and_balanced() {
        let mut cfg = RunConfig::default_for(EnvKind::Battle);
        cfg.learner.algo = Algo::BmfQ;
        cfg.group.mode = GroupingMode::Random;
        cfg.group.k = 2;
        let l = build_learner(&cfg, 4, 3, 1).unwrap();
        assert!(l.forward_model.is_none() && l.attention.is_none());
        let teams = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let mut c = Controller::new(l, cfg.group.clone(), teams, 1);
        c.begin_episode(&[true; 8]);
        let first = c.groups().assignment.clone();
        assert_eq!(c.groups().group_sizes(), vec![2, 2, 2, 2]);
        let obs = vec![vec![0.0; 4]; 8];
        c.prepare(0, &obs, &[true; 8]).unwrap();
        assert_eq!(c.groups().assignment, first);
        c.begin_episode(&[true; 8]);
        assert_eq!(c.groups().assignment, first);
    }

    #[test]
    fn reassignment_happens_on_interval_only() {
        let mut cfg = RunConfig::default_for(EnvKind::Firefighter);
        cfg.learner.algo = Algo::BmfQ;
        cfg.group.interval = 3;
        let l = build_learner(&cfg, 4, 3, 2).unwrap();
        let mut c = Controller::new(l, cfg.group.clone(), vec![0; 6], 2);
        let alive = [true; 6];
        c.begin_episode(&alive);
        let obs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.1; 4]).collect();
        let events: Vec<GroupEvent> = (0..7).map(|t| c.prepare(t, &obs, &alive).unwrap().1).collect();
        let hits: Vec<usize> = (0..7).filter(|&t| events[t] == GroupEvent::Reassigned).collect();
        assert_eq!(hits, vec![0, 3, 6]);
        assert_eq!(c.realized_groups(), 2);
    }
}
