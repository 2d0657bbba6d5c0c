//! Time and memory of critic updates: bi-level mean field against an
//! all-pairs attention critic on the same replay data.

use std::time::Instant;

use crate::envs::EnvKind;
use crate::error::Result;
use crate::learners::{Algo, Learner, PairwiseAttentionCritic};
use crate::nn::NetParams;
use crate::par::Execution;
use crate::rng::{substream, Stream};

use super::config::RunConfig;
use super::metrics::mean_std;
use super::train::Session;

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyConfig {
    pub n_agents: usize,
    /// Timed gradient steps per method and seed.
    pub updates: usize,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    /// Attention width of the all-pairs critic.
    pub att_dim: usize,
    /// Joint transitions collected before timing.
    pub warmup_records: usize,
    pub methods: Vec<Method>,
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        EfficiencyConfig {
            n_agents: 50,
            updates: 1000,
            seeds: vec![0, 1, 2],
            batch_size: 64,
            hidden: vec![64, 64],
            att_dim: 16,
            warmup_records: 200,
            methods: vec![Method::Learner(Algo::BmfQ), Method::Learner(Algo::Mfq), Method::Learner(Algo::Iql), Method::AllPairs],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Learner(Algo),
    AllPairs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Learner(a) => a.name(),
            Method::AllPairs => "all_pairs_attention",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub method: Method,
    /// Wall-clock seconds for the timed updates, one entry per seed.
    pub seconds: Vec<f64>,
    /// Memory estimate in MiB, one entry per seed.
    pub space_mib: Vec<f64>,
}

impl EfficiencyRow {
    pub fn time(&self) -> (f64, f64) {
        mean_std(&self.seconds)
    }

    pub fn space(&self) -> (f64, f64) {
        mean_std(&self.space_mib)
    }

    pub fn per_update_seconds(&self, updates: usize) -> f64 {
        self.time().0 / updates.max(1) as f64
    }
}

pub const EFFICIENCY_HEADER: &str = "method,time_s_mean,time_s_std,space_mib_mean,space_mib_std";

pub fn efficiency_csv(rows: &[EfficiencyRow]) -> String {
    let mut s = format!("{EFFICIENCY_HEADER}\n");
    for r in rows {
        let (t, ts) = r.time();
        let (m, ms) = r.space();
        s.push_str(&format!("{},{t:?},{ts:?},{m:?},{ms:?}\n", r.method.name()));
    }
    s
}

/// Table with `Method | Time(s) | Space(MiB)` columns, mean ± std.
pub fn efficiency_table(rows: &[EfficiencyRow]) -> String {
    let mut s = format!("{:<22} {:>20} {:>20}\n", "Method", "Time(s)", "Space(MiB)");
    for r in rows {
        let (t, ts) = r.time();
        let (m, ms) = r.space();
        s.push_str(&format!(
            "{:<22} {:>20} {:>20}\n",
            r.method.name(),
            format!("{t:.3} ± {ts:.3}"),
            format!("{m:.3} ± {ms:.3}")
        ));
    }
    s
}

const F64: f64 = 8.0;
const MIB: f64 = 1024.0 * 1024.0;

fn widths(p: &NetParams) -> usize {
    p.def.layer_sizes.iter().sum()
}

/// Parameters, target copy and Adam moments, plus the activations and
/// gradients held during one batch.
fn learner_bytes(l: &Learner, batch: usize) -> f64 {
    let mut params = 4 * l.critic.values.len();
    let mut act = 2 * widths(&l.critic);
    if let Some(a) = &l.actor {
        params += 3 * a.values.len();
        act += 2 * widths(a);
    }
    if let Some(att) = &l.attention {
        params += 3 * 2 * att.dim * att.dim;
    }
    if let Some(fm) = &l.forward_model {
        for n in fm.nets() {
            params += 3 * n.values.len();
            act += 2 * widths(n);
        }
    }
    (params as f64 + (batch * act) as f64) * F64
}

/// As above, plus per sample the `n` keys, scores and weights.
fn all_pairs_bytes(s: &PairwiseAttentionCritic, n_agents: usize, batch: usize) -> f64 {
    let params = 4 * s.critic.values.len() + 3 * s.proj.len();
    let per_sample = 2 * widths(&s.critic) + n_agents * (s.att_dim + 2) + s.att_dim;
    (params as f64 + (batch * per_sample) as f64) * F64
}

/// Collects random-policy transitions with each method's own mean-action
/// bookkeeping, then times `updates` gradient steps. Everything runs on one
/// thread so the comparison measures work, not core count.
pub fn efficiency_probe(cfg: &EfficiencyConfig) -> Result<Vec<EfficiencyRow>> {
    let mut rows: Vec<EfficiencyRow> = cfg
        .methods
        .iter()
        .map(|&m| EfficiencyRow {
            method: m,
            seconds: Vec::new(),
            space_mib: Vec::new(),
        })
        .collect();
    for &seed in &cfg.seeds {
        for row in rows.iter_mut() {
            let algo = match row.method {
                Method::Learner(a) => a,
                Method::AllPairs => Algo::Iql,
            };
            let mut rc = RunConfig::default_for(EnvKind::Firefighter);
            rc.env.n_agents = cfg.n_agents;
            rc.env.firefighter.n_houses = cfg.n_agents;
            rc.learner.algo = algo;
            rc.learner.hidden = cfg.hidden.clone();
            rc.learner.batch_size = cfg.batch_size;
            rc.learner.update_interval = usize::MAX;
            rc.learner.eps_start = 1.0;
            rc.learner.eps_end = 1.0;
            rc.learner.replay_capacity = cfg.warmup_records.max(1);
            rc.learner.execution = Execution::Sequential;
            let mut session = Session::new(&rc, seed)?;
            while session.replay.len() < cfg.warmup_records {
                session.run_episode(true, None, None)?;
            }
            match row.method {
                Method::Learner(_) => {
                    let start = Instant::now();
                    for _ in 0..cfg.updates {
                        session.update_once()?;
                    }
                    row.seconds.push(start.elapsed().as_secs_f64());
                    row.space_mib.push(learner_bytes(&session.controller.learner, cfg.batch_size) / MIB);
                }
                Method::AllPairs => {
                    let (obs_dim, n_actions) = (session.env.obs_dim(), session.env.n_actions());
                    let mut s = PairwiseAttentionCritic::new(obs_dim, n_actions, &cfg.hidden, cfg.att_dim, seed)?;
                    let mut rng = substream(seed, Stream::Replay, 1);
                    let start = Instant::now();
                    for u in 0..cfg.updates {
                        let picks = session.replay.sample(cfg.batch_size, &mut rng);
                        s.update(session.replay.records(), &picks)?;
                        if (u + 1) % rc.learner.sync_every as usize == 0 {
                            s.sync_target();
                        }
                    }
                    row.seconds.push(start.elapsed().as_secs_f64());
                    row.space_mib.push(all_pairs_bytes(&s, cfg.n_agents, cfg.batch_size) / MIB);
                }
            }
        }
    }
    Ok(rows)
}
