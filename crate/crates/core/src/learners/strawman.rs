//! All-pairs attention critic used as the cost baseline in efficiency
//! comparisons. Every agent attends over every other alive agent's
//! observation, so one sample costs O(n) and one joint step O(n^2).

use rand::Rng as _;

use super::policy::boltzmann_value;
use super::replay::TransitionRecord;
use crate::error::Result;
use crate::nn::{Activation, Adam, AdamConfig, GradTape, NetDef, NetParams};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone)]
pub struct PairwiseAttentionCritic {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub att_dim: usize,
    /// `att_dim x obs_dim` projections followed by the key projection.
    pub proj: Vec<f64>,
    pub critic: NetParams,
    pub target: NetParams,
    pub gamma: f64,
    pub temperature: f64,
    opt_critic: Adam,
    opt_proj: Adam,
}

impl PairwiseAttentionCritic {
    pub fn new(obs_dim: usize, n_actions: usize, hidden: &[usize], att_dim: usize, seed: u64) -> Result<Self> {
        let def = NetDef::mlp(obs_dim + n_actions, hidden, n_actions, Activation::Relu, Activation::Identity)?;
        let critic = NetParams::init(&def, &mut substream(seed, Stream::Init, 10));
        let mut rng = substream(seed, Stream::Init, 11);
        let limit = (3.0 / obs_dim as f64).sqrt();
        let proj = (0..2 * att_dim * obs_dim).map(|_| rng.random_range(-limit..limit)).collect::<Vec<_>>();
        Ok(PairwiseAttentionCritic {
            obs_dim,
            n_actions,
            att_dim,
            opt_critic: Adam::new(AdamConfig::default(), critic.values.len()),
            opt_proj: Adam::new(AdamConfig::default(), proj.len()),
            target: critic.clone(),
            critic,
            proj,
            gamma: 0.95,
            temperature: 0.1,
        })
    }

    fn project(&self, which: usize, o: &[f64]) -> Vec<f64> {
        let base = which * self.att_dim * self.obs_dim;
        (0..self.att_dim)
            .map(|r| {
                let row = &self.proj[base + r * self.obs_dim..base + (r + 1) * self.obs_dim];
                row.iter().zip(o).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Attention weights of `j` over the other acting agents, and the
    /// aggregated one-hot action.
    fn aggregate(&self, obs: &[Vec<f64>], actions: &[Option<usize>], j: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let q = self.project(0, &obs[j]);
        let others: Vec<usize> = (0..obs.len()).filter(|&i| i != j && actions[i].is_some()).collect();
        let keys: Vec<Vec<f64>> = others.iter().map(|&i| self.project(1, &obs[i])).collect();
        let scale = (self.att_dim as f64).sqrt();
        let s: Vec<f64> = keys.iter().map(|k| k.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / scale).collect();
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let alpha: Vec<f64> = e.iter().map(|v| v / z).collect();
        let mut agg = vec![0.0; self.n_actions];
        for (&i, a) in others.iter().zip(&alpha) {
            agg[actions[i].unwrap()] += a;
        }
        (others, alpha, agg, keys, q)
    }

    /// One TD step on the sampled `(record, agent)` pairs. Returns the loss.
    pub fn update(&mut self, records: &[TransitionRecord], picks: &[(usize, usize)]) -> Result<f64> {
        let inv = 1.0 / picks.len() as f64;
        let mut tape = GradTape::zeros(self.critic.values.len());
        let mut gproj = vec![0.0; self.proj.len()];
        let mut loss = 0.0;
        let scale = (self.att_dim as f64).sqrt();
        let kb = self.att_dim * self.obs_dim;
        for &(r, j) in picks {
            let rec = &records[r];
            let a_j = rec.actions[j].expect("picked agent acts");
            let y = if rec.done || !rec.next_alive[j] {
                rec.rewards[j]
            } else {
                let (_, _, agg, _, _) = self.aggregate(&rec.next_obs, &rec.actions, j);
                let mut x = rec.next_obs[j].clone();
                x.extend_from_slice(&agg);
                rec.rewards[j] + self.gamma * boltzmann_value(&self.target.forward(&x)?, self.temperature)
            };
            let (others, alpha, agg, keys, q) = self.aggregate(&rec.obs, &rec.actions, j);
            let mut x = rec.obs[j].clone();
            x.extend_from_slice(&agg);
            let trace = self.critic.forward_trace(&x)?;
            let err = trace.output()[a_j] - y;
            loss += err * err * inv;
            let mut og = vec![0.0; self.n_actions];
            og[a_j] = 2.0 * err * inv;
            let gin = self.critic.backward_trace(&trace, &og, &mut tape)?;
            let dagg = &gin[self.obs_dim..];
            let dalpha: Vec<f64> = others.iter().map(|&i| dagg[rec.actions[i].unwrap()]).collect();
            let mean: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
            for (p, &i) in others.iter().enumerate() {
                let ds = alpha[p] * (dalpha[p] - mean) / scale;
                for row in 0..self.att_dim {
                    for c in 0..self.obs_dim {
                        gproj[row * self.obs_dim + c] += ds * keys[p][row] * rec.obs[j][c];
                        gproj[kb + row * self.obs_dim + c] += ds * q[row] * rec.obs[i][c];
                    }
                }
            }
        }
        self.opt_critic.step(&mut self.critic, &tape)?;
        self.opt_proj.step_slice(&mut self.proj, &gproj)?;
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target.values.copy_from_slice(&self.critic.values);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{ActionRepr, MeanFieldActions};

    #[test]
    fn update_reduces_loss_on_fixed_batch() {
        let n = 6;
        let rec = TransitionRecord {
            obs: (0..n).map(|i| vec![i as f64 * 0.1, 1.0]).collect(),
            actions: (0..n).map(|i| Some(i % 3)).collect(),
            rewards: (0..n).map(|i| i as f64).collect(),
            next_obs: (0..n).map(|i| vec![i as f64 * 0.1, 0.0]).collect(),
            done: true,
            next_alive: vec![true; n],
            means: MeanFieldActions::zeros(ActionRepr::OneHot(3), n, 0),
            next_means: MeanFieldActions::zeros(ActionRepr::OneHot(3), n, 0),
            groups: None,
        };
        let mut c = PairwiseAttentionCritic::new(2, 3, &[16], 4, 1).unwrap();
        let picks: Vec<(usize, usize)> = (0..n).map(|j| (0, j)).collect();
        let first = c.update(std::slice::from_ref(&rec), &picks).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = c.update(std::slice::from_ref(&rec), &picks).unwrap();
        }
        assert!(last < first * 0.5, "{first} -> {last}");
    }
}
