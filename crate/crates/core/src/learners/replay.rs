use crate::error::{BmfError, Result};
use crate::meanfield::MeanFieldActions;

/// Group embeddings and team labels at the time a transition was stored.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSnapshot {
    pub assignment: Vec<Option<usize>>,
    pub centroids: Vec<Vec<f64>>,
    pub group_team: Vec<usize>,
}

/// One joint environment step.
///
/// `means` are the (delayed) mean actions the policy saw when acting;
/// `next_means` are the ones it will see at the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Option<usize>>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
    pub next_alive: Vec<bool>,
    pub means: MeanFieldActions,
    pub next_means: MeanFieldActions,
    pub groups: Option<GroupSnapshot>,
}

impl TransitionRecord {
    pub fn n_agents(&self) -> usize {
        self.actions.len()
    }

    pub fn acting_agents(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.actions.len()).filter(|&i| self.actions[i].is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        for (what, len) in [
            ("observations", self.obs.len()),
            ("rewards", self.rewards.len()),
            ("next observations", self.next_obs.len()),
            ("next alive mask", self.next_alive.len()),
            ("intra means", self.means.intra.len()),
            ("next intra means", self.next_means.intra.len()),
        ] {
            if len != n {
                return Err(BmfError::dims(what, n, len));
            }
        }
        let finite = self.obs.iter().chain(&self.next_obs).flatten().chain(&self.rewards).all(|v| v.is_finite());
        if !finite {
            return Err(BmfError::NonFinite {
                what: "transition",
                index: 0,
            });
        }
        Ok(())
    }
}

/// Ring buffer of joint transitions with uniform agent-level sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<TransitionRecord>,
    next: usize,
    agent_samples: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            records: Vec::new(),
            next: 0,
            agent_samples: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of (transition, acting agent) pairs currently stored.
    pub fn agent_samples(&self) -> usize {
        self.agent_samples
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    /// Index the next push will overwrite once full.
    pub fn cursor(&self) -> usize {
        self.next
    }

    pub fn from_parts(capacity: usize, records: Vec<TransitionRecord>, cursor: usize) -> Result<Self> {
        if records.len() > capacity || cursor >= capacity.max(1) {
            return Err(BmfError::Checkpoint("replay buffer state out of range".into()));
        }
        let agent_samples = records.iter().map(|r| r.acting_agents().count()).sum();
        Ok(ReplayBuffer {
            capacity,
            records,
            next: cursor,
            agent_samples,
        })
    }

    pub fn push(&mut self, record: TransitionRecord) -> Result<()> {
        record.validate()?;
        let count = record.acting_agents().count();
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.agent_samples -= self.records[self.next].acting_agents().count();
            self.records[self.next] = record;
        }
        self.agent_samples += count;
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    pub fn can_sample(&self, batch: usize) -> bool {
        self.agent_samples >= batch && batch > 0
    }

    /// `batch` pairs `(record, agent)` drawn with replacement: a uniform
    /// record, then a uniform acting agent within it.
    pub fn sample<R: rand::Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<(usize, usize)> {
        assert!(self.agent_samples > 0, "cannot sample an empty replay buffer");
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            let r = rng.random_range(0..self.records.len());
            let rec = &self.records[r];
            let acting: Vec<usize> = rec.acting_agents().collect();
            if acting.is_empty() {
                continue;
            }
            out.push((r, acting[rng.random_range(0..acting.len())]));
        }
        out
    }
}
