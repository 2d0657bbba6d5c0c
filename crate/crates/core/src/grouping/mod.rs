//! Dynamic group assignment: learned agent representations, k-means over
//! them at a fixed interval, and attention weights between groups.

mod attention;
mod forward_model;
mod kmeans;

pub use attention::{AttentionGrads, GroupAttention};
pub use forward_model::{FmGrads, FmLoss, FmSample, ForwardModel};
pub use kmeans::{kmeans_assign, kmeans_plus_plus, sq_dist, wcss, KMeans};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{BmfError, Result};

/// How agents are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupingMode {
    /// Variational encoder + k-means.
    #[default]
    Vae,
    /// Deterministic autoencoder + k-means.
    Ae,
    /// A fixed random partition drawn once; no learned representations.
    Random,
}

impl GroupingMode {
    pub fn name(self) -> &'static str {
        match self {
            GroupingMode::Vae => "vae",
            GroupingMode::Ae => "ae",
            GroupingMode::Random => "random",
        }
    }
}

impl fmt::Display for GroupingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GroupingMode {
    type Err = BmfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(GroupingMode::Vae),
            "ae" => Ok(GroupingMode::Ae),
            "random" | "rc" => Ok(GroupingMode::Random),
            other => Err(BmfError::config(format!("unknown grouping mode '{other}'"))),
        }
    }
}

/// Group membership plus inter-group weights.
///
/// Groups are numbered team by team: team `t` owns ids
/// `t * k_per_team .. (t + 1) * k_per_team`. Attention only links groups of
/// the same team.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    pub k_per_team: usize,
    pub assignment: Vec<Option<usize>>,
    pub group_team: Vec<usize>,
    /// Group embeddings (centroids of member representations).
    pub centroids: Vec<Vec<f64>>,
    /// Normalized attention weights `w_mn / W_m`, zero on the diagonal.
    pub weights: Vec<Vec<f64>>,
    /// Row sums of `weights` (1 for rows with a usable peer, else 0).
    pub normalizers: Vec<f64>,
    pub last_assign_step: Option<u64>,
}

impl GroupState {
    /// Builds a state from an explicit assignment with zero embeddings and
    /// uniform weights over non-empty peers of the same team.
    pub fn from_assignment(assignment: Vec<Option<usize>>, group_team: Vec<usize>, latent_dim: usize) -> Self {
        let k_total = group_team.len();
        let n_teams = group_team.iter().max().map_or(1, |t| t + 1);
        let mut s = GroupState {
            k_per_team: k_total / n_teams.max(1),
            assignment,
            centroids: vec![vec![0.0; latent_dim]; k_total],
            weights: vec![vec![0.0; k_total]; k_total],
            normalizers: vec![0.0; k_total],
            group_team,
            last_assign_step: None,
        };
        s.refresh_weights(None);
        s
    }

    /// Every agent unassigned; `k` groups per team.
    pub fn empty(n_agents: usize, n_teams: usize, k_per_team: usize, latent_dim: usize) -> Self {
        let group_team = (0..n_teams).flat_map(|t| std::iter::repeat_n(t, k_per_team)).collect();
        let mut s = Self::from_assignment(vec![None; n_agents], group_team, latent_dim);
        s.k_per_team = k_per_team;
        s
    }

    pub fn n_groups(&self) -> usize {
        self.group_team.len()
    }

    pub fn weight_row(&self, m: usize) -> &[f64] {
        &self.weights[m]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups()];
        self.assignment.iter().flatten().for_each(|&g| sizes[g] += 1);
        sizes
    }

    pub fn members(&self, m: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == Some(m)).collect()
    }

    /// Whether `n` can contribute to group `m`'s inter-group mean.
    pub fn usable_for(&self, m: usize) -> Vec<bool> {
        let sizes = self.group_sizes();
        (0..self.n_groups())
            .map(|n| n != m && sizes[n] > 0 && self.group_team[n] == self.group_team[m])
            .collect()
    }

    /// Recomputes weights from the embeddings. Without attention parameters
    /// the weights are uniform.
    pub fn refresh_weights(&mut self, att: Option<&GroupAttention>) {
        for m in 0..self.n_groups() {
            let usable = self.usable_for(m);
            let row = match att {
                Some(a) => a.row(m, &self.centroids, &usable),
                None => {
                    let c = usable.iter().filter(|&&u| u).count();
                    usable.iter().map(|&u| if u { 1.0 / c as f64 } else { 0.0 }).collect()
                }
            };
            self.normalizers[m] = row.iter().sum();
            self.weights[m] = row;
        }
    }

    /// Drops dead agents from their groups.
    pub fn retain_alive(&mut self, alive: &[bool]) {
        for (a, &al) in self.assignment.iter_mut().zip(alive) {
            if !al {
                *a = None;
            }
        }
    }
}

/// Balanced random partition of each team's alive agents.
pub fn random_assignment<R: rand::Rng + ?Sized>(
    teams: &[usize],
    alive: &[bool],
    n_teams: usize,
    k_per_team: usize,
    latent_dim: usize,
    rng: &mut R,
) -> GroupState {
    let mut state = GroupState::empty(teams.len(), n_teams, k_per_team, latent_dim);
    for t in 0..n_teams {
        let mut members: Vec<usize> = (0..teams.len()).filter(|&i| teams[i] == t && alive[i]).collect();
        members.shuffle(rng);
        for (slot, &i) in members.iter().enumerate() {
            state.assignment[i] = Some(t * k_per_team + slot % k_per_team);
        }
    }
    state.refresh_weights(None);
    state.last_assign_step = Some(0);
    state
}

/// Reclusters when `t` is a multiple of `interval`; otherwise returns the
/// previous state unchanged.
///
/// `reps[i]` is agent `i`'s representation, `None` if dead. Each team is
/// clustered separately into `min(k, alive)` groups, seeded from the
/// previous centroids when they exist.
pub fn maybe_reassign<R: rand::Rng + ?Sized>(
    t: u64,
    interval: u64,
    prev: &GroupState,
    reps: &[Option<Vec<f64>>],
    teams: &[usize],
    max_iter: usize,
    rng: &mut R,
) -> Result<GroupState> {
    if interval == 0 {
        return Err(BmfError::config("group interval must be positive"));
    }
    if !t.is_multiple_of(interval) {
        return Ok(prev.clone());
    }
    let k = prev.k_per_team;
    let mut next = prev.clone();
    next.assignment.iter_mut().for_each(|a| *a = None);
    let n_teams = prev.group_team.iter().max().map_or(1, |t| t + 1);
    for team in 0..n_teams {
        let idx: Vec<usize> = (0..reps.len()).filter(|&i| teams[i] == team && reps[i].is_some()).collect();
        if idx.is_empty() {
            continue;
        }
        let pts: Vec<Vec<f64>> = idx.iter().map(|&i| reps[i].clone().unwrap()).collect();
        let k_eff = k.min(pts.len());
        let base = team * k;
        let seeded = prev.last_assign_step.is_some() && k_eff == k;
        let init: Vec<Vec<f64>> = prev.centroids[base..base + k].to_vec();
        let res = kmeans_assign(&pts, k_eff, max_iter, seeded.then_some(init.as_slice()), rng)?;
        for (p, &i) in idx.iter().enumerate() {
            next.assignment[i] = Some(base + res.assignment[p]);
        }
        for (c, cen) in res.centroids.into_iter().enumerate() {
            next.centroids[base + c] = cen;
        }
    }
    next.last_assign_step = Some(t);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn reps(n: usize, seed: u64) -> Vec<Option<Vec<f64>>> {
        let mut rng = stream(seed, Stream::Theory);
        (0..n).map(|_| Some(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])).collect()
    }

    #[test]
    fn interval_gating() {
        let prev = GroupState::empty(6, 1, 2, 2);
        let teams = vec![0; 6];
        let r = reps(6, 1);
        let mut rng = stream(1, Stream::Grouping);
        let same = maybe_reassign(1, 10, &prev, &r, &teams, 50, &mut rng).unwrap();
        assert_eq!(same, prev);
        let next = maybe_reassign(10, 10, &prev, &r, &teams, 50, &mut rng).unwrap();
        assert_eq!(next.last_assign_step, Some(10));
        assert!(next.assignment.iter().all(|a| a.is_some()));
    }

    #[test]
    fn frozen_reps_idempotent() {
        let teams = vec![0, 0, 0, 0, 1, 1, 1, 1, 1];
        let prev = GroupState::empty(9, 2, 2, 2);
        let r = reps(9, 2);
        let mut rng = stream(2, Stream::Grouping);
        let a = maybe_reassign(0, 5, &prev, &r, &teams, 50, &mut rng).unwrap();
        let b = maybe_reassign(5, 5, &a, &r, &teams, 50, &mut rng).unwrap();
        assert_eq!(a.assignment, b.assignment);
        for (i, g) in b.assignment.iter().enumerate() {
            assert_eq!(b.group_team[g.unwrap()], teams[i]);
        }
    }

    #[test]
    fn fewer_alive_than_k() {
        let teams = vec![0; 5];
        let mut r = reps(5, 3);
        r[1] = None;
        r[2] = None;
        r[3] = None;
        let prev = GroupState::empty(5, 1, 4, 2);
        let s = maybe_reassign(0, 1, &prev, &r, &teams, 50, &mut stream(3, Stream::Grouping)).unwrap();
        assert_eq!(s.group_sizes().iter().sum::<usize>(), 2);
        assert!(s.assignment[1].is_none());
    }

    #[test]
    fn random_partition_balanced() {
        let teams = vec![0; 10];
        let s = random_assignment(&teams, &[true; 10], 1, 3, 2, &mut stream(4, Stream::Grouping));
        let mut sizes = s.group_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![3, 3, 4]);
        for m in 0..3 {
            assert!((s.weights[m].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mode_parse() {
        for m in [GroupingMode::Vae, GroupingMode::Ae, GroupingMode::Random] {
            assert_eq!(m.name().parse::<GroupingMode>().unwrap(), m);
        }
        assert!("x".parse::<GroupingMode>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn partition_and_normalization(n in 2usize..30, k in 1usize..5, seed in 0u64..500, dead in 0usize..5) {
            let teams: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let mut r = reps(n, seed);
            for i in 0..dead.min(n) { r[(i * 7 + seed as usize) % n] = None; }
            let prev = GroupState::empty(n, 2, k, 2);
            let mut s = maybe_reassign(0, 3, &prev, &r, &teams, 50, &mut stream(seed, Stream::Grouping)).unwrap();
            let att = GroupAttention::init(2, &mut stream(seed, Stream::Attention));
            s.refresh_weights(Some(&att));
            let alive = r.iter().filter(|x| x.is_some()).count();
            prop_assert_eq!(s.group_sizes().iter().sum::<usize>(), alive);
            for (i, g) in s.assignment.iter().enumerate() {
                prop_assert_eq!(g.is_some(), r[i].is_some());
            }
            for m in 0..s.n_groups() {
                if s.usable_for(m).iter().any(|&u| u) {
                    prop_assert!((s.weights[m].iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    prop_assert!(s.normalizers[m] > 0.0);
                }
            }
        }
    }
}
