use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::nn::{softmax, GradTape, NetParams};

/// Floor applied to log-probabilities in the score-function gradient.
pub const LOG_PROB_FLOOR: f64 = -30.0;

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - lse).collect()
}

/// Expected Q under the Boltzmann policy at `temperature`.
pub fn boltzmann_value(q: &[f64], temperature: f64) -> f64 {
    softmax(q, temperature).iter().zip(q).map(|(p, v)| p * v).sum()
}

/// Policy objective `sum_a pi(a) Q(a) + c * H(pi)` for one state and its
/// gradient with respect to the logits.
///
/// The gradient is the score-function form `sum_a pi(a) Q(a) grad log pi(a)`;
/// actions whose log-probability is below the floor contribute nothing.
pub fn actor_surrogate(logits: &[f64], q: &[f64], entropy_coef: f64) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let n = logits.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for a in 0..n {
        value += p[a] * q[a];
        if logp[a] < LOG_PROB_FLOOR {
            continue;
        }
        // d log pi(a) / d logit_b = [a == b] - pi(b)
        let w = p[a] * q[a];
        for b in 0..n {
            grad[b] -= w * p[b];
        }
        grad[a] += w;
    }
    if entropy_coef != 0.0 {
        let h: f64 = -p.iter().zip(&logp).map(|(pi, l)| pi * l.max(LOG_PROB_FLOOR)).sum::<f64>();
        value += entropy_coef * h;
        for b in 0..n {
            grad[b] -= entropy_coef * p[b] * (logp[b].max(LOG_PROB_FLOOR) + h);
        }
    }
    (value, grad)
}

/// Gaussian policy with a learned mean and fixed standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: NetParams,
    pub sigma: f64,
}

impl GaussianPolicy {
    pub fn sample<R: rand::Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mu = self.mean.forward(obs)?;
        Ok(mu
            .into_iter()
            .map(|m| {
                let e: f64 = StandardNormal.sample(rng);
                m + self.sigma * e
            })
            .collect())
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mu = self.mean.forward(obs)?;
        let s2 = self.sigma * self.sigma;
        let d = mu.len() as f64;
        let sq: f64 = mu.iter().zip(action).map(|(m, a)| (a - m) * (a - m)).sum();
        let lp = -0.5 * sq / s2 - d * (self.sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln());
        Ok(lp.max(LOG_PROB_FLOOR))
    }

    /// Mean of `log pi(a_i | s_i) * q_i` over the batch and its gradient.
    pub fn surrogate(&self, batch: &[(Vec<f64>, Vec<f64>, f64)]) -> Result<(f64, GradTape)> {
        let mut tape = GradTape::zeros(self.mean.values.len());
        let mut total = 0.0;
        let s2 = self.sigma * self.sigma;
        let inv = 1.0 / batch.len() as f64;
        for (obs, action, q) in batch {
            let lp = self.log_prob(obs, action)?;
            total += lp * q;
            if lp <= LOG_PROB_FLOOR {
                continue;
            }
            let trace = self.mean.forward_trace(obs)?;
            let g: Vec<f64> = trace.output().iter().zip(action).map(|(m, a)| inv * q * (a - m) / s2).collect();
            self.mean.backward_trace(&trace, &g, &mut tape)?;
        }
        Ok((total * inv, tape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetDef};
    use crate::rng::{stream, Stream};
    use rand::Rng as _;

    #[test]
    fn zero_q_zero_gradient() {
        let (_, g) = actor_surrogate(&[0.3, -1.0, 2.0], &[0.0; 3], 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_symmetric_zero_gradient() {
        let (v, g) = actor_surrogate(&[0.0, 0.0], &[1.0, 1.0], 0.0);
        assert!((v - 1.0).abs() < 1e-15);
        assert!(g.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn surrogate_matches_finite_differences() {
        let mut rng = stream(1, Stream::Theory);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            for c in [0.0, 0.05] {
                let (_, g) = actor_surrogate(&logits, &q, c);
                for b in 0..4 {
                    let h = 1e-6;
                    let mut up = logits.clone();
                    up[b] += h;
                    let mut dn = logits.clone();
                    dn[b] -= h;
                    let fd = (actor_surrogate(&up, &q, c).0 - actor_surrogate(&dn, &q, c).0) / (2.0 * h);
                    assert!((fd - g[b]).abs() <= 1e-4 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn floor_clamps_degenerate_actions() {
        let (_, g) = actor_surrogate(&[0.0, -100.0], &[1.0, 5.0], 0.0);
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(log_softmax(&[0.0, -100.0])[1] < LOG_PROB_FLOOR);
    }

    #[test]
    fn boltzmann_limits() {
        assert!((boltzmann_value(&[1.0, 2.0], 1e-3) - 2.0).abs() < 1e-9);
        assert!((boltzmann_value(&[1.0, 2.0], 1e6) - 1.5).abs() < 1e-5);
    }

    #[test]
    fn gaussian_score_function_gradient() {
        let def = NetDef::mlp(3, &[5], 2, Activation::Tanh, Activation::Identity).unwrap();
        let mut rng = stream(2, Stream::Init);
        let pol = GaussianPolicy {
            mean: NetParams::init(&def, &mut rng),
            sigma: 0.7,
        };
        let batch: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..6)
            .map(|_| {
                let obs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let a = pol.sample(&obs, &mut rng).unwrap();
                (obs, a, rng.random_range(-2.0..2.0))
            })
            .collect();
        let (_, tape) = pol.surrogate(&batch).unwrap();
        for i in 0..tape.len() {
            let h = 1e-6;
            let mut up = pol.clone();
            up.mean.values[i] += h;
            let mut dn = pol.clone();
            dn.mean.values[i] -= h;
            let fd = (up.surrogate(&batch).unwrap().0 - dn.surrogate(&batch).unwrap().0) / (2.0 * h);
            assert!((fd - tape.values[i]).abs() <= 1e-4 * fd.abs().max(1.0), "{i}");
        }
    }
}
