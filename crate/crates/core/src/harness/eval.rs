//! Greedy cross-play between frozen policies and zero-shot scaling.

use rand::Rng as _;

use crate::envs::trajectory::TrajectoryRow;
use crate::envs::{make_env, outcome, scripted_action, EnvConfig, EnvKind, Environment, Outcome};
use crate::error::{BmfError, Result};
use crate::learners::Checkpoint;
use crate::rng::{substream, Rng, Stream};

use super::controller::Controller;
use super::metrics::mean_std;

/// Who controls one battle team.
pub enum Side {
    Policy(Box<Controller>),
    /// Attack adjacent enemies, otherwise close in on the nearest.
    Scripted,
    Random,
}

impl Side {
    pub fn name(&self) -> String {
        match self {
            Side::Policy(c) => c.learner.algo().name().to_string(),
            Side::Scripted => "scripted".into(),
            Side::Random => "random".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub outcome: Outcome,
    pub steps: usize,
    pub kills: [usize; 2],
    pub returns: [f64; 2],
}

/// One greedy episode with `sides[t]` controlling team `t`.
pub fn play_match(
    env: &mut dyn Environment,
    sides: [&mut Side; 2],
    rng: &mut Rng,
    mut traj: Option<&mut Vec<TrajectoryRow>>,
) -> Result<MatchResult> {
    if env.n_teams() != 2 {
        return Err(BmfError::Incompatible("matches need a two-team environment".into()));
    }
    let n_actions = env.n_actions();
    env.reset();
    let alive0 = env.state().alive_mask();
    let [s0, s1] = sides;
    let mut sides = [s0, s1];
    for s in sides.iter_mut() {
        if let Side::Policy(c) = &mut **s {
            c.begin_episode(&alive0);
        }
    }
    let mut res = MatchResult {
        outcome: Outcome::Draw,
        steps: 0,
        kills: [0; 2],
        returns: [0.0; 2],
    };
    for t in 0.. {
        let state = env.state().clone();
        let alive = state.alive_mask();
        let obs = env.observe_all();
        let mut actions = vec![None; alive.len()];
        for (team, side) in sides.iter_mut().enumerate() {
            let mask: Vec<bool> = (0..alive.len()).map(|i| alive[i] && state.agents[i].team == team).collect();
            match &mut **side {
                Side::Policy(c) => {
                    let (means, _) = c.prepare(t, &obs, &alive)?;
                    let (acts, _) = c.act(&obs, means, &mask, None, rng)?;
                    for i in (0..alive.len()).filter(|&i| mask[i]) {
                        actions[i] = acts[i];
                    }
                }
                Side::Scripted => {
                    for i in (0..alive.len()).filter(|&i| mask[i]) {
                        actions[i] = Some(scripted_action(&state, i));
                    }
                }
                Side::Random => {
                    for i in (0..alive.len()).filter(|&i| mask[i]) {
                        actions[i] = Some(rng.random_range(0..n_actions));
                    }
                }
            }
        }
        let step = env.step(&actions)?;
        for s in sides.iter_mut() {
            if let Side::Policy(c) = &mut **s {
                c.observe(&actions, &step.alive);
            }
        }
        for (i, a) in actions.iter().enumerate() {
            if let Some(a) = a {
                res.returns[state.agents[i].team] += step.rewards[i];
                if let Some(out) = traj.as_deref_mut() {
                    out.push(TrajectoryRow {
                        step: t,
                        agent_id: i,
                        x: state.agents[i].x,
                        y: state.agents[i].y,
                        action: *a,
                        reward: step.rewards[i],
                        group_id: -1,
                    });
                }
            }
        }
        for &(killer, _) in &step.events.kills {
            res.kills[state.agents[killer].team] += 1;
        }
        if step.done {
            res.steps = t + 1;
            break;
        }
    }
    res.outcome = outcome(env.state());
    Ok(res)
}

/// Cross-play summary from side A's point of view.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossPlayReport {
    pub episodes: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub draws: usize,
    /// Per-episode team return of A and B.
    pub returns_a: Vec<f64>,
    pub returns_b: Vec<f64>,
    pub kills_a: Vec<usize>,
    pub kills_b: Vec<usize>,
}

impl CrossPlayReport {
    /// Wins plus half the draws, over all episodes.
    pub fn win_rate(&self) -> f64 {
        (self.wins_a as f64 + 0.5 * self.draws as f64) / self.episodes.max(1) as f64
    }

    pub fn draw_rate(&self) -> f64 {
        self.draws as f64 / self.episodes.max(1) as f64
    }

    pub fn mean_kills(&self) -> (f64, f64) {
        let m = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len().max(1) as f64;
        (m(&self.kills_a), m(&self.kills_b))
    }

    pub fn mean_returns(&self) -> (f64, f64) {
        (mean_std(&self.returns_a).0, mean_std(&self.returns_b).0)
    }

    pub const CSV_HEADER: &'static str = "episodes,wins_a,wins_b,draws,win_rate,draw_rate,mean_kills_a,mean_kills_b,mean_return_a,mean_return_b";

    pub fn to_csv(&self) -> String {
        let (ka, kb) = self.mean_kills();
        let (ra, rb) = self.mean_returns();
        format!(
            "{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.episodes,
            self.wins_a,
            self.wins_b,
            self.draws,
            self.win_rate(),
            self.draw_rate(),
            ka,
            kb,
            ra,
            rb
        )
    }
}

/// Plays `episodes` matches, swapping sides every episode so A is team 0
/// on even episodes and team 1 on odd ones.
pub fn cross_play(env_cfg: &EnvConfig, a: &mut Side, b: &mut Side, episodes: usize, seed: u64) -> Result<CrossPlayReport> {
    if env_cfg.kind != EnvKind::Battle {
        return Err(BmfError::Incompatible("cross-play needs the battle environment".into()));
    }
    let mut cfg = env_cfg.clone();
    cfg.seed = seed;
    let mut env = make_env(&cfg)?;
    for side in [&*a, &*b] {
        if let Side::Policy(c) = side {
            if c.learner.n_actions != env.n_actions() || c.learner.obs_dim != env.obs_dim() {
                return Err(BmfError::Incompatible(format!(
                    "policy expects obs {} / actions {}, environment has {} / {}",
                    c.learner.obs_dim,
                    c.learner.n_actions,
                    env.obs_dim(),
                    env.n_actions()
                )));
            }
        }
    }
    let mut rng = substream(seed, Stream::Eval, 0);
    let mut rep = CrossPlayReport {
        episodes,
        wins_a: 0,
        wins_b: 0,
        draws: 0,
        returns_a: Vec::with_capacity(episodes),
        returns_b: Vec::with_capacity(episodes),
        kills_a: Vec::with_capacity(episodes),
        kills_b: Vec::with_capacity(episodes),
    };
    for e in 0..episodes {
        let a_team = e % 2;
        let sides = if a_team == 0 { [&mut *a, &mut *b] } else { [&mut *b, &mut *a] };
        let m = play_match(env.as_mut(), sides, &mut rng, None).map_err(|err| err.at(e, 0))?;
        match (m.outcome, a_team) {
            (Outcome::Draw, _) => rep.draws += 1,
            (Outcome::Team0, 0) | (Outcome::Team1, 1) => rep.wins_a += 1,
            _ => rep.wins_b += 1,
        }
        rep.returns_a.push(m.returns[a_team]);
        rep.returns_b.push(m.returns[1 - a_team]);
        rep.kills_a.push(m.kills[a_team]);
        rep.kills_b.push(m.kills[1 - a_team]);
    }
    Ok(rep)
}

fn policy_side(ck: &Checkpoint, env_cfg: &EnvConfig, seed: u64) -> Result<Side> {
    let mut env = make_env(env_cfg)?;
    env.reset();
    let teams = (0..env.n_agents()).map(|i| env.team_of(i)).collect();
    Ok(Side::Policy(Box::new(Controller::from_checkpoint(ck, teams, seed)?)))
}

/// Greedy cross-play of two checkpoints.
pub fn evaluate(a: &Checkpoint, b: &Checkpoint, env_cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<CrossPlayReport> {
    if a.n_actions != b.n_actions || a.obs_dim != b.obs_dim {
        return Err(BmfError::Incompatible(format!(
            "checkpoints disagree: obs {} / actions {} vs obs {} / actions {}",
            a.obs_dim, a.n_actions, b.obs_dim, b.n_actions
        )));
    }
    let mut sa = policy_side(a, env_cfg, seed)?;
    let mut sb = policy_side(b, env_cfg, seed)?;
    cross_play(env_cfg, &mut sa, &mut sb, episodes, seed)
}

/// Opponent used by the zero-shot table.
pub enum Opponent<'a> {
    Scripted,
    Random,
    Checkpoint(&'a Checkpoint),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotRow {
    /// Total agents on the map.
    pub scale: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub win_rate: f64,
}

/// Battle config with `n_agents` total agents and the grid side grown so
/// the agent density matches `base`.
pub fn scaled_battle(base: &EnvConfig, n_agents: usize) -> Result<EnvConfig> {
    if !n_agents.is_multiple_of(2) || n_agents < 2 {
        return Err(BmfError::config(format!("battle scale {n_agents} cannot be split into two equal teams")));
    }
    let mut cfg = base.clone();
    let ratio = n_agents as f64 / base.n_agents as f64;
    cfg.grid_size = ((base.grid_size as f64 * ratio.sqrt()).round() as usize).max(2);
    cfg.n_agents = n_agents;
    cfg.validate()?;
    Ok(cfg)
}

/// Evaluates a frozen policy at several scales without retraining. The
/// observation layout does not depend on the agent count, so the same
/// parameters run everywhere.
pub fn zero_shot_eval(
    ck: &Checkpoint,
    base: &EnvConfig,
    scales: &[usize],
    opponent: Opponent<'_>,
    episodes: usize,
    seed: u64,
) -> Result<Vec<ZeroShotRow>> {
    let mut rows = Vec::with_capacity(scales.len());
    for &scale in scales {
        let cfg = scaled_battle(base, scale)?;
        let mut a = policy_side(ck, &cfg, seed)?;
        let mut b = match &opponent {
            Opponent::Scripted => Side::Scripted,
            Opponent::Random => Side::Random,
            Opponent::Checkpoint(o) => policy_side(o, &cfg, seed)?,
        };
        let rep = cross_play(&cfg, &mut a, &mut b, episodes, seed)?;
        let (m, s) = mean_std(&rep.returns_a);
        rows.push(ZeroShotRow {
            scale,
            mean_return: m,
            std_return: s,
            win_rate: rep.win_rate(),
        });
    }
    Ok(rows)
}

pub const ZERO_SHOT_HEADER: &str = "scale,mean_return,std_return,win_rate";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;
    use crate::harness::train::Session;

    fn small_battle() -> RunConfig {
        let mut c = RunConfig::preset("battle").unwrap();
        c.env.n_agents = 8;
        c.env.grid_size = 8;
        c.env.max_steps = 30;
        c.learner.hidden = vec![8];
        c.group.k = 2;
        c.group.hidden = 8;
        c
    }

    #[test]
    fn self_match_is_symmetric_on_average() {
        let cfg = small_battle();
        let ck = Session::new(&cfg, 3).unwrap().policy_checkpoint();
        let rep = evaluate(&ck, &ck, &cfg.env, 40, 5).unwrap();
        assert_eq!(rep.wins_a + rep.wins_b + rep.draws, 40);
        assert!((rep.win_rate() - 0.5).abs() < 0.25, "{}", rep.win_rate());
    }

    #[test]
    fn kills_match_trajectory_and_returns() {
        let cfg = small_battle();
        let mut env = make_env(&cfg.env).unwrap();
        let mut rng = substream(1, Stream::Eval, 0);
        let mut traj = Vec::new();
        let m = play_match(env.as_mut(), [&mut Side::Scripted, &mut Side::Random], &mut rng, Some(&mut traj)).unwrap();
        let total: f64 = traj.iter().map(|r| r.reward).sum();
        assert!((total - m.returns[0] - m.returns[1]).abs() < 1e-9);
        let dead = 8 - env.state().alive_in_team(0) - env.state().alive_in_team(1);
        assert_eq!(m.kills[0] + m.kills[1], dead);
    }

    #[test]
    fn zero_shot_same_scale_matches_evaluate() {
        let cfg = small_battle();
        let a = Session::new(&cfg, 1).unwrap().policy_checkpoint();
        let b = Session::new(&cfg, 2).unwrap().policy_checkpoint();
        let rep = evaluate(&a, &b, &cfg.env, 6, 9).unwrap();
        let rows = zero_shot_eval(&a, &cfg.env, &[8], Opponent::Checkpoint(&b), 6, 9).unwrap();
        assert_eq!(rows[0].mean_return, rep.mean_returns().0);
        assert_eq!(rows[0].win_rate, rep.win_rate());
    }

    #[test]
    fn odd_scale_and_mismatch_rejected() {
        let cfg = small_battle();
        assert!(scaled_battle(&cfg.env, 9).is_err());
        let a = Session::new(&cfg, 1).unwrap().policy_checkpoint();
        let mut other = a.clone();
        other.n_actions += 1;
        assert!(matches!(evaluate(&a, &other, &cfg.env, 2, 0), Err(BmfError::Incompatible(_))));
        let mut ff = cfg.env.clone();
        ff.kind = EnvKind::Firefighter;
        assert!(evaluate(&a, &a, &ff, 2, 0).is_err());
    }
}
