//! Mean actions for the critic: intra-group, inter-group and plain MF.
//!
//! Action representations are flat vectors: one-hot for discrete actions,
//! raw values for continuous ones. Dead agents carry no representation and
//! never contribute to any mean.

use crate::error::{BmfError, Result};
use crate::grouping::GroupState;

/// How a single agent's action enters the averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionRepr {
    /// Discrete actions averaged as one-hot vectors of this width.
    OneHot(usize),
    /// Continuous actions of this dimension averaged directly.
    Raw(usize),
}

impl ActionRepr {
    pub fn dim(self) -> usize {
        match self {
            ActionRepr::OneHot(n) | ActionRepr::Raw(n) => n,
        }
    }

    pub fn one_hot(self, action: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        v[action] = 1.0;
        v
    }
}

/// A mean action together with its degenerate flag (no contributors).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanAction {
    pub value: Vec<f64>,
    pub degenerate: bool,
}

impl MeanAction {
    pub fn zero(dim: usize) -> Self {
        MeanAction {
            value: vec![0.0; dim],
            degenerate: true,
        }
    }

    pub fn flag(&self) -> f64 {
        if self.degenerate {
            1.0
        } else {
            0.0
        }
    }
}

/// Arithmetic mean of the given representations; empty input yields the
/// flagged zero vector of width `dim`.
pub fn group_mean_action<'a, I>(reprs: I, dim: usize) -> MeanAction
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    for r in reprs {
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
        count += 1;
    }
    if count == 0 {
        return MeanAction::zero(dim);
    }
    let inv = count as f64;
    sum.iter_mut().for_each(|s| *s /= inv);
    MeanAction {
        value: sum,
        degenerate: false,
    }
}

/// Per-agent action representations; `None` marks a dead agent.
pub type ActionTable = [Option<Vec<f64>>];

/// Mean over the other alive members of `agent`'s group.
pub fn intra_mean_action(agent: usize, groups: &GroupState, actions: &ActionTable, dim: usize) -> Result<MeanAction> {
    let m = groups
        .assignment
        .get(agent)
        .ok_or(BmfError::UnknownAgent(agent))?
        .ok_or(BmfError::DeadAgent(agent))?;
    let members = actions
        .iter()
        .enumerate()
        .filter(|&(k, a)| k != agent && a.is_some() && groups.assignment[k] == Some(m))
        .map(|(_, a)| a.as_deref().unwrap());
    Ok(group_mean_action(members, dim))
}

/// Attention-weighted mean of the other groups' means.
///
/// `weights[n]` is `w_mn`; only groups flagged `usable` (same team,
/// non-empty, not `m`) contribute. No usable group gives the flagged zero.
pub fn inter_mean_action(
    group: usize,
    weights: &[f64],
    group_means: &[MeanAction],
    usable: impl Fn(usize) -> bool,
    dim: usize,
) -> MeanAction {
    let mut sum = vec![0.0; dim];
    let mut total = 0.0;
    for (n, mean) in group_means.iter().enumerate() {
        if n == group || !usable(n) || mean.degenerate {
            continue;
        }
        let w = weights[n];
        total += w;
        for (s, v) in sum.iter_mut().zip(&mean.value) {
            *s += w * v;
        }
    }
    if total == 0.0 {
        return MeanAction::zero(dim);
    }
    assert!(total > 0.0 && total.is_finite(), "inter-group normalizer must be positive");
    sum.iter_mut().for_each(|s| *s /= total);
    MeanAction {
        value: sum,
        degenerate: false,
    }
}

/// Classic mean-field action: every other alive agent on the same team.
pub fn plain_mf_action(agent: usize, teams: &[usize], actions: &ActionTable, dim: usize) -> Result<MeanAction> {
    let team = *teams.get(agent).ok_or(BmfError::UnknownAgent(agent))?;
    if actions[agent].is_none() {
        return Err(BmfError::DeadAgent(agent));
    }
    let others = actions
        .iter()
        .enumerate()
        .filter(|&(k, a)| k != agent && a.is_some() && teams[k] == team)
        .map(|(_, a)| a.as_deref().unwrap());
    Ok(group_mean_action(others, dim))
}

/// Every mean action needed for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldActions {
    pub repr: ActionRepr,
    /// `ã_j` per agent (flagged zero for dead agents).
    pub intra: Vec<MeanAction>,
    /// `ã_m` of each agent's group, repeated per agent.
    pub inter: Vec<MeanAction>,
    /// Mean action of each group (`ã_n`), indexed by group id.
    pub group_means: Vec<MeanAction>,
}

impl MeanFieldActions {
    pub fn zeros(repr: ActionRepr, n_agents: usize, n_groups: usize) -> Self {
        let z = MeanAction::zero(repr.dim());
        MeanFieldActions {
            repr,
            intra: vec![z.clone(); n_agents],
            inter: vec![z.clone(); n_agents],
            group_means: vec![z; n_groups],
        }
    }

    /// Bi-level means from a grouping whose attention weights are current.
    pub fn bilevel(groups: &GroupState, actions: &ActionTable, repr: ActionRepr) -> Self {
        let dim = repr.dim();
        let k = groups.n_groups();
        let group_means: Vec<MeanAction> = (0..k)
            .map(|m| {
                group_mean_action(
                    actions
                        .iter()
                        .enumerate()
                        .filter(|&(i, a)| a.is_some() && groups.assignment[i] == Some(m))
                        .map(|(_, a)| a.as_deref().unwrap()),
                    dim,
                )
            })
            .collect();
        let per_group_inter: Vec<MeanAction> = (0..k)
            .map(|m| {
                inter_mean_action(m, groups.weight_row(m), &group_means, |n| groups.group_team[n] == groups.group_team[m], dim)
            })
            .collect();
        let mut intra = Vec::with_capacity(actions.len());
        let mut inter = Vec::with_capacity(actions.len());
        for (j, a) in actions.iter().enumerate() {
            match (a, groups.assignment[j]) {
                (Some(_), Some(m)) => {
                    intra.push(intra_mean_action(j, groups, actions, dim).expect("assigned alive agent"));
                    inter.push(per_group_inter[m].clone());
                }
                _ => {
                    intra.push(MeanAction::zero(dim));
                    inter.push(MeanAction::zero(dim));
                }
            }
        }
        MeanFieldActions {
            repr,
            intra,
            inter,
            group_means,
        }
    }

    /// Plain mean-field baseline; the inter slot is the flagged zero.
    pub fn plain(teams: &[usize], actions: &ActionTable, repr: ActionRepr) -> Self {
        let dim = repr.dim();
        let intra = (0..actions.len())
            .map(|j| plain_mf_action(j, teams, actions, dim).unwrap_or_else(|_| MeanAction::zero(dim)))
            .collect();
        MeanFieldActions {
            repr,
            intra,
            inter: vec![MeanAction::zero(dim); actions.len()],
            group_means: Vec::new(),
        }
    }
}

/// Holds the means computed from the previous joint action.
///
/// Policies at step `t` read means built from step `t - 1`; at `t = 0`
/// there is no previous action and every mean is the flagged zero.
#[derive(Debug, Clone)]
pub struct DelayedMeanCache {
    repr: ActionRepr,
    n_agents: usize,
    last_actions: Option<Vec<Option<Vec<f64>>>>,
}

impl DelayedMeanCache {
    pub fn new(repr: ActionRepr, n_agents: usize) -> Self {
        DelayedMeanCache {
            repr,
            n_agents,
            last_actions: None,
        }
    }

    pub fn reset(&mut self) {
        self.last_actions = None;
    }

    pub fn record(&mut self, actions: Vec<Option<Vec<f64>>>) {
        self.last_actions = Some(actions);
    }

    pub fn last_actions(&self) -> Option<&ActionTable> {
        self.last_actions.as_deref()
    }

    /// Means to feed the policy now. Agents that died since the previous
    /// step are dropped from the averages via `alive`.
    pub fn means(&self, alive: &[bool], f: impl FnOnce(&ActionTable) -> MeanFieldActions) -> MeanFieldActions {
        match &self.last_actions {
            None => MeanFieldActions::zeros(self.repr, self.n_agents, 0),
            Some(prev) => {
                let masked: Vec<Option<Vec<f64>>> = prev
                    .iter()
                    .zip(alive)
                    .map(|(a, &al)| if al { a.clone() } else { None })
                    .collect();
                f(&masked)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::GroupState;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn table(v: &[&[f64]]) -> Vec<Option<Vec<f64>>> {
        v.iter().map(|a| Some(a.to_vec())).collect()
    }

    #[test]
    fn group_mean_cases() {
        let one = group_mean_action([[0.3, 0.7].as_slice()], 2);
        assert_eq!(one.value, vec![0.3, 0.7]);
        let two = group_mean_action([[1.0, 0.0].as_slice(), [0.0, 1.0].as_slice()], 2);
        assert_eq!(two.value, vec![0.5, 0.5]);
        let cont = group_mean_action([[0.2].as_slice(), [0.4].as_slice(), [0.6].as_slice()], 1);
        assert!((cont.value[0] - 0.4).abs() < 1e-15);
        let empty = group_mean_action(std::iter::empty::<&[f64]>(), 3);
        assert!(empty.degenerate);
        assert_eq!(empty.value, vec![0.0; 3]);
    }

    #[test]
    fn intra_singleton_and_pair() {
        let g = GroupState::from_assignment(vec![Some(0), Some(1), Some(1)], vec![0, 0], 2);
        let acts = table(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let solo = intra_mean_action(0, &g, &acts, 3).unwrap();
        assert!(solo.degenerate);
        assert_eq!(solo.value, vec![0.0; 3]);
        let pair = intra_mean_action(1, &g, &acts, 3).unwrap();
        assert_eq!(pair.value, vec![0.0, 0.0, 1.0]);
        assert!(intra_mean_action(9, &g, &acts, 3).is_err());
    }

    #[test]
    fn intra_matches_brute_force() {
        let mut rng = stream(4, Stream::Theory);
        let n = 20;
        let assignment: Vec<Option<usize>> = (0..n).map(|i| Some(if i < 7 { 0 } else { 1 + i % 2 })).collect();
        let g = GroupState::from_assignment(assignment, vec![0, 0, 0], 2);
        let acts: Vec<Option<Vec<f64>>> = (0..n).map(|_| Some(vec![rng.random::<f64>(), rng.random::<f64>()])).collect();
        for j in 0..7 {
            let got = intra_mean_action(j, &g, &acts, 2).unwrap();
            let mut s = [0.0, 0.0];
            for k in (0..7).filter(|&k| k != j) {
                s[0] += acts[k].as_ref().unwrap()[0];
                s[1] += acts[k].as_ref().unwrap()[1];
            }
            assert!((got.value[0] - s[0] / 6.0).abs() < 1e-14);
            assert!((got.value[1] - s[1] / 6.0).abs() < 1e-14);
        }
    }

    #[test]
    fn inter_cases() {
        let means = vec![
            MeanAction { value: vec![0.0], degenerate: false },
            MeanAction { value: vec![1.0], degenerate: false },
        ];
        // k = 2: the single other group, whatever the weight.
        let m = inter_mean_action(0, &[0.0, 7.3], &means, |_| true, 1);
        assert_eq!(m.value, vec![1.0]);
        // weights (1, 3) over scalar means 0 and 1 -> 0.75
        let three = vec![
            MeanAction { value: vec![5.0], degenerate: false },
            MeanAction { value: vec![0.0], degenerate: false },
            MeanAction { value: vec![1.0], degenerate: false },
        ];
        let m = inter_mean_action(0, &[0.0, 1.0, 3.0], &three, |_| true, 1);
        assert!((m.value[0] - 0.75).abs() < 1e-15);
        // equal weights over one-hots
        let oh = vec![
            MeanAction::zero(2),
            MeanAction { value: vec![1.0, 0.0], degenerate: false },
            MeanAction { value: vec![0.0, 1.0], degenerate: false },
        ];
        let m = inter_mean_action(0, &[0.0, 0.5, 0.5], &oh, |_| true, 2);
        assert_eq!(m.value, vec![0.5, 0.5]);
        // k = 1: flagged zero
        let m = inter_mean_action(0, &[0.0], &means[..1], |_| true, 1);
        assert!(m.degenerate);
    }

    #[test]
    fn plain_mf_cases() {
        let teams = vec![0; 3];
        let same = table(&[&[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(plain_mf_action(0, &teams, &same, 2).unwrap().value, vec![0.0, 1.0]);
        let two = table(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(plain_mf_action(0, &teams[..2], &two, 2).unwrap().value, vec![0.0, 1.0]);
        assert_eq!(plain_mf_action(1, &teams[..2], &two, 2).unwrap().value, vec![1.0, 0.0]);
        let mut lonely = two.clone();
        lonely[1] = None;
        assert!(plain_mf_action(0, &teams[..2], &lonely, 2).unwrap().degenerate);
    }

    #[test]
    fn single_group_reduces_to_plain_mf() {
        let mut rng = stream(8, Stream::Theory);
        let repr = ActionRepr::OneHot(4);
        for trial in 0..50 {
            let n = 2 + trial % 9;
            let acts: Vec<Option<Vec<f64>>> = (0..n)
                .map(|_| (rng.random::<f64>() > 0.2).then(|| repr.one_hot(rng.random_range(0..4))))
                .collect();
            let teams = vec![0; n];
            let assignment = acts.iter().map(|a| a.as_ref().map(|_| 0)).collect();
            let g = GroupState::from_assignment(assignment, vec![0], 2);
            let bi = MeanFieldActions::bilevel(&g, &acts, repr);
            let plain = MeanFieldActions::plain(&teams, &acts, repr);
            assert_eq!(bi.intra, plain.intra);
            assert!(bi.inter.iter().all(|m| m.degenerate && m.value.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn delayed_cache() {
        let repr = ActionRepr::OneHot(2);
        let mut cache = DelayedMeanCache::new(repr, 2);
        let teams = vec![0, 0];
        let z = cache.means(&[true, true], |a| MeanFieldActions::plain(&teams, a, repr));
        assert!(z.intra.iter().all(|m| m.degenerate));
        let joint = vec![Some(repr.one_hot(1)), Some(repr.one_hot(0))];
        cache.record(joint.clone());
        let delayed = cache.means(&[true, true], |a| MeanFieldActions::plain(&teams, a, repr));
        assert_eq!(delayed, MeanFieldActions::plain(&teams, &joint, repr));
    }
}
