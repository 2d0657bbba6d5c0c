//! The training loop and its on-disk artifacts.
//!
//! Per step: reassign groups (every `I_g` steps) → group, intra and inter
//! means → act → environment step → store → update (when the global step
//! count is a multiple of `I_u`).
//!
//! Layout under the run directory:
//!
//! ```text
//! config.txt                 every key with its value
//! summary.csv                final return per seed, then mean and std
//! seed_<s>/metrics.csv       one row per episode
//! seed_<s>/timing.csv        wall clock and peak RSS per episode
//! seed_<s>/groups.csv        assignments at each reassignment
//! seed_<s>/trajectories/     ep_<e>.csv dumps
//! seed_<s>/checkpoints/      initial.bin, ep_<e>.bin, final.bin, resume.bin
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::envs::trajectory::{self, TrajectoryRow};
use crate::envs::{make_env, Environment};
use crate::error::{BmfError, Result};
use crate::learners::{load_replay, push_replay, Checkpoint, ReplayBuffer, Sample, Section, TransitionRecord};
use crate::rng::{substream, Rng, Stream};

use super::config::RunConfig;
use super::controller::{build_learner, push_group_config, rng_from_u64s, rng_to_u64s, Controller, GroupEvent};
use super::metrics::{
    mean_std, peak_rss_mib, read_metrics, tail_mean, truncate_csv, CsvAppender, MetricsRow, GROUPS_HEADER,
    METRICS_HEADER, TIMING_HEADER,
};

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "BMF_OUT";

pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Loop-order trace entries, recorded when tracing is switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopEvent {
    Reassign { t: usize },
    Means { t: usize },
    Act { t: usize },
    Store { t: usize, global: u64 },
    Update { global: u64 },
}

/// One agent's grouping at a reassignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupTraceRow {
    pub episode: usize,
    pub step: usize,
    pub agent: usize,
    pub group: i64,
}

/// All mutable state of one training run for one seed.
pub struct Session {
    pub config: RunConfig,
    pub seed: u64,
    pub env: Box<dyn Environment>,
    pub controller: Controller,
    pub replay: ReplayBuffer,
    rng_act: Rng,
    rng_replay: Rng,
    rng_fm: Rng,
    pub episode: usize,
    pub total_steps: u64,
    pub trace: Option<Vec<LoopEvent>>,
}

impl Session {
    pub fn new(config: &RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut env = make_env(&config.env_for_seed(seed))?;
        env.reset();
        let learner = build_learner(config, env.obs_dim(), env.n_actions(), seed)?;
        let teams: Vec<usize> = (0..env.n_agents()).map(|i| env.team_of(i)).collect();
        Ok(Session {
            controller: Controller::new(learner, config.group.clone(), teams, seed),
            replay: ReplayBuffer::new(config.learner.replay_capacity),
            rng_act: substream(seed, Stream::Act, 0),
            rng_replay: substream(seed, Stream::Replay, 0),
            rng_fm: substream(seed, Stream::Grouping, 3),
            episode: 0,
            total_steps: 0,
            trace: None,
            config: config.clone(),
            seed,
            env,
        })
    }

    fn log(&mut self, e: LoopEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(e);
        }
    }

    /// Runs one episode. With `train` the policy explores, transitions are
    /// stored and updates fire; without it the policy is greedy and nothing
    /// is learned.
    pub fn run_episode(
        &mut self,
        train: bool,
        mut traj: Option<&mut Vec<TrajectoryRow>>,
        mut groups_out: Option<&mut Vec<GroupTraceRow>>,
    ) -> Result<MetricsRow> {
        let episode = self.episode;
        let epsilon = self.config.learner.epsilon(episode);
        let mut row = MetricsRow {
            episode,
            epsilon: if train { epsilon } else { 0.0 },
            ..Default::default()
        };
        let mut losses = [0.0; 3];
        self.env.reset();
        let alive0 = self.env.state().alive_mask();
        self.controller.begin_episode(&alive0);
        let mut t = 0;
        loop {
            let stats = self.step(t, train, epsilon, &mut row, &mut losses, traj.as_deref_mut(), groups_out.as_deref_mut());
            match stats {
                Ok(true) => break,
                Ok(false) => t += 1,
                Err(e) => return Err(e.at(episode, t)),
            }
        }
        row.steps = t + 1;
        if row.updates > 0 {
            let n = row.updates as f64;
            row.critic_loss = losses[0] / n;
            row.actor_objective = losses[1] / n;
            row.fm_loss = losses[2] / n;
        }
        row.groups = self.controller.realized_groups();
        let st = self.env.state();
        for team in 0..2.min(self.env.n_teams()) {
            row.alive_team[team] = st.alive_in_team(team);
        }
        if train {
            self.episode += 1;
        }
        Ok(row)
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        t: usize,
        train: bool,
        epsilon: f64,
        row: &mut MetricsRow,
        losses: &mut [f64; 3],
        mut traj: Option<&mut Vec<TrajectoryRow>>,
        groups_out: Option<&mut Vec<GroupTraceRow>>,
    ) -> Result<bool> {
        let state = self.env.state().clone();
        let alive = state.alive_mask();
        let obs = self.env.observe_all();
        let (means, event) = self.controller.prepare(t, &obs, &alive)?;
        if event == GroupEvent::Reassigned {
            self.log(LoopEvent::Reassign { t });
            if let Some(out) = groups_out {
                for (agent, g) in self.controller.groups().assignment.iter().enumerate() {
                    out.push(GroupTraceRow {
                        episode: self.episode,
                        step: t,
                        agent,
                        group: g.map_or(-1, |g| g as i64),
                    });
                }
            }
        }
        self.log(LoopEvent::Means { t });
        let eps = train.then_some(epsilon);
        let (actions, means) = self.controller.act(&obs, means, &alive, eps, &mut self.rng_act)?;
        self.log(LoopEvent::Act { t });
        let res = self.env.step(&actions)?;
        let next_obs = self.env.observe_all();
        let next_means = self.controller.observe(&actions, &res.alive);

        for (i, a) in actions.iter().enumerate() {
            if let Some(a) = a {
                row.return_team[state.agents[i].team.min(1)] += res.rewards[i];
                if let Some(out) = traj.as_deref_mut() {
                    out.push(TrajectoryRow {
                        step: t,
                        agent_id: i,
                        x: state.agents[i].x,
                        y: state.agents[i].y,
                        action: *a,
                        reward: res.rewards[i],
                        group_id: self.controller.groups().assignment.get(i).copied().flatten().map_or(-1, |g| g as i64),
                    });
                }
            }
        }
        for &(killer, _) in &res.events.kills {
            row.kills_team[state.agents[killer].team.min(1)] += 1;
        }

        if train {
            let record = TransitionRecord {
                obs,
                actions,
                rewards: res.rewards,
                next_obs,
                done: res.done,
                next_alive: res.alive,
                means,
                next_means,
                groups: self.controller.snapshot(),
            };
            self.replay.push(record)?;
            self.total_steps += 1;
            self.log(LoopEvent::Store { t, global: self.total_steps });
            let cfg = &self.config.learner;
            if self.total_steps.is_multiple_of(cfg.update_interval as u64) && self.replay.can_sample(cfg.batch_size) {
                for _ in 0..cfg.updates_per_tick {
                    let s = self.update_once()?;
                    losses[0] += s.critic_loss;
                    losses[1] += s.actor_objective;
                    losses[2] += s.forward_model_loss;
                    row.updates += 1;
                }
                self.log(LoopEvent::Update { global: self.total_steps });
            }
        }
        Ok(res.done)
    }

    /// One gradient step on a batch drawn from the replay buffer.
    pub fn update_once(&mut self) -> Result<crate::learners::UpdateStats> {
        let picks = self.replay.sample(self.config.learner.batch_size, &mut self.rng_replay);
        let recs = self.replay.records();
        let bilevel = self.controller.learner.algo().is_bilevel();
        let mut samples = picks
            .iter()
            .map(|&(r, a)| Sample::from_record(&recs[r], a, bilevel))
            .collect::<Result<Vec<_>>>()?;
        self.controller.learner.update(&mut samples, &mut self.rng_fm)
    }

    /// Learner parameters plus the grouping settings; enough to evaluate.
    pub fn policy_checkpoint(&self) -> Checkpoint {
        let mut ck = self.controller.learner.to_checkpoint();
        push_group_config(&mut ck, &self.config.group);
        ck.push("run.progress", Section::U64(vec![self.seed, self.episode as u64, self.total_steps]));
        ck
    }

    /// Everything needed to continue the run bit-for-bit.
    pub fn resume_checkpoint(&self) -> Checkpoint {
        let mut ck = self.policy_checkpoint();
        push_replay(&mut ck, "replay", &self.replay);
        ck.push("rng.act", Section::U64(rng_to_u64s(&crate::rng::RngState::capture(&self.rng_act))));
        ck.push("rng.replay", Section::U64(rng_to_u64s(&crate::rng::RngState::capture(&self.rng_replay))));
        ck.push("rng.fm", Section::U64(rng_to_u64s(&crate::rng::RngState::capture(&self.rng_fm))));
        ck.push("rng.group", Section::U64(rng_to_u64s(&self.controller.rng_state())));
        ck.push("rng.env", Section::U64(rng_to_u64s(&self.env.rng_state())));
        ck
    }

    /// Rebuilds a session from a resume checkpoint written at an episode
    /// boundary.
    pub fn resume(config: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        let p = ck.u64s("run.progress")?;
        let mut s = Session::new(config, p[0])?;
        let learner = crate::learners::Learner::from_checkpoint(config.learner.clone(), ck)?;
        if (learner.obs_dim, learner.n_actions) != (s.env.obs_dim(), s.env.n_actions()) {
            return Err(BmfError::Incompatible("checkpoint dimensions do not match the environment".into()));
        }
        s.controller.learner = learner;
        s.episode = p[1] as usize;
        s.total_steps = p[2];
        s.replay = load_replay(ck, "replay")?;
        s.rng_act = rng_from_u64s(ck.u64s("rng.act")?)?.restore();
        s.rng_replay = rng_from_u64s(ck.u64s("rng.replay")?)?.restore();
        s.rng_fm = rng_from_u64s(ck.u64s("rng.fm")?)?.restore();
        s.controller.set_rng_state(&rng_from_u64s(ck.u64s("rng.group")?)?);
        s.env.set_rng_state(rng_from_u64s(ck.u64s("rng.env")?)?);
        Ok(s)
    }
}

/// What a finished training run produced.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub dir: PathBuf,
    pub seeds: Vec<u64>,
    pub metrics: Vec<Vec<MetricsRow>>,
    /// Final return per seed: mean `return_total` over the last tenth of
    /// the episodes.
    pub final_returns: Vec<f64>,
}

impl TrainReport {
    pub fn final_mean_std(&self) -> (f64, f64) {
        mean_std(&self.final_returns)
    }
}

pub fn final_return(rows: &[MetricsRow]) -> f64 {
    let curve: Vec<f64> = rows.iter().map(|r| r.return_total()).collect();
    tail_mean(&curve, (curve.len() / 10).max(1))
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

/// Trains every seed into `out_root/<run.name>`. With `resume`, seeds that
/// have a resume checkpoint continue from it.
pub fn train(config: &RunConfig, out_root: &Path, resume: bool) -> Result<TrainReport> {
    config.validate()?;
    let dir = out_root.join(&config.name);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.txt"), config.to_text())?;
    let mut metrics = Vec::new();
    for &seed in &config.seeds {
        metrics.push(train_seed(config, seed, &seed_dir(&dir, seed), resume)?);
    }
    let final_returns: Vec<f64> = metrics.iter().map(|m| final_return(m)).collect();
    let mut summary = String::from("seed,final_return\n");
    for (s, r) in config.seeds.iter().zip(&final_returns) {
        summary.push_str(&format!("{s},{r:?}\n"));
    }
    let (m, sd) = mean_std(&final_returns);
    summary.push_str(&format!("mean,{m:?}\nstd,{sd:?}\n"));
    std::fs::write(dir.join("summary.csv"), summary)?;
    Ok(TrainReport {
        dir,
        seeds: config.seeds.clone(),
        metrics,
        final_returns,
    })
}

/// Trains one seed; returns its full metrics history.
pub fn train_seed(config: &RunConfig, seed: u64, dir: &Path, resume: bool) -> Result<Vec<MetricsRow>> {
    let ck_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ck_dir)?;
    let resume_path = ck_dir.join("resume.bin");
    let (metrics_p, timing_p, groups_p) = (dir.join("metrics.csv"), dir.join("timing.csv"), dir.join("groups.csv"));
    let mut session = if resume && resume_path.exists() {
        Session::resume(config, &Checkpoint::load(&resume_path)?)?
    } else {
        for p in [&metrics_p, &timing_p, &groups_p] {
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
        let s = Session::new(config, seed)?;
        s.policy_checkpoint().save(&ck_dir.join("initial.bin"))?;
        s
    };
    for p in [&metrics_p, &timing_p, &groups_p] {
        truncate_csv(p, session.episode)?;
    }
    let mut metrics_w = CsvAppender::open(&metrics_p, METRICS_HEADER)?;
    let mut timing_w = CsvAppender::open(&timing_p, TIMING_HEADER)?;
    let mut groups_w = CsvAppender::open(&groups_p, GROUPS_HEADER)?;
    metrics_w.flush()?;
    timing_w.flush()?;
    groups_w.flush()?;
    let traj_dir = dir.join("trajectories");
    while session.episode < config.episodes {
        let e = session.episode;
        let want_traj = config.trajectory_every > 0 && e % config.trajectory_every == 0;
        let mut traj = Vec::new();
        let mut groups = Vec::new();
        let start = Instant::now();
        let row = session.run_episode(true, want_traj.then_some(&mut traj), Some(&mut groups))?;
        let wall = start.elapsed().as_secs_f64();
        metrics_w.line(&row.to_csv())?;
        timing_w.line(&format!("{e},{wall:?},{:?}", peak_rss_mib().unwrap_or(f64::NAN)))?;
        for g in &groups {
            groups_w.line(&format!("{},{},{},{}", g.episode, g.step, g.agent, g.group))?;
        }
        metrics_w.flush()?;
        timing_w.flush()?;
        groups_w.flush()?;
        if want_traj {
            std::fs::create_dir_all(&traj_dir)?;
            trajectory::write_csv(&traj_dir.join(format!("ep_{e}.csv")), &traj)?;
        }
        let done = session.episode;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.episodes {
            session.policy_checkpoint().save(&ck_dir.join(format!("ep_{done}.bin")))?;
            if config.save_resume {
                session.resume_checkpoint().save(&resume_path)?;
            }
        }
    }
    if config.episodes > 0 {
        session.policy_checkpoint().save(&ck_dir.join("final.bin"))?;
        if config.save_resume {
            session.resume_checkpoint().save(&resume_path)?;
        }
    }
    read_metrics(&metrics_p)
}
