//! Encoder / decoder / predictor trio that learns agent representations.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{BmfError, Result};
use crate::nn::{Activation, GradTape, NetDef, NetParams};

/// Log-variance is clamped to this range; the gradient is zero outside it.
const LOGVAR_BOUND: f64 = 10.0;

/// One agent-step used to train the forward model.
#[derive(Debug, Clone, PartialEq)]
pub struct FmSample {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    /// Critic-derived value of the next state.
    pub next_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmGrads {
    pub encoder: GradTape,
    pub decoder: GradTape,
    pub predictor: GradTape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmLoss {
    pub loss: f64,
    pub reconstruction: f64,
    pub prediction: f64,
    pub kl: f64,
    pub grads: FmGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub encoder: NetParams,
    pub decoder: NetParams,
    pub predictor: NetParams,
    pub lambda_p: f64,
    pub lambda_e: f64,
    pub beta: f64,
    pub latent_dim: usize,
    /// `false` turns the encoder into a plain autoencoder: `z = mu`, no KL.
    pub variational: bool,
}

impl ForwardModel {
    pub fn new<R: rand::Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        latent_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(BmfError::config("latent_dim must be positive"));
        }
        let x = obs_dim + act_dim;
        let enc = NetDef::mlp(x, &[hidden], 2 * latent_dim, Activation::Relu, Activation::Identity)?;
        let dec = NetDef::mlp(latent_dim, &[hidden], x, Activation::Relu, Activation::Identity)?;
        let pred = NetDef::mlp(latent_dim + obs_dim, &[hidden], 1, Activation::Relu, Activation::Identity)?;
        Ok(ForwardModel {
            encoder: NetParams::init(&enc, rng),
            decoder: NetParams::init(&dec, rng),
            predictor: NetParams::init(&pred, rng),
            lambda_p: 1.0,
            lambda_e: 0.5,
            beta: 0.01,
            latent_dim,
            variational: true,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.predictor.input_size() - self.latent_dim
    }

    pub fn act_dim(&self) -> usize {
        self.encoder.input_size() - self.obs_dim()
    }

    fn input(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim() {
            return Err(BmfError::dims("forward-model observation", self.obs_dim(), obs.len()));
        }
        if action.len() != self.act_dim() {
            return Err(BmfError::dims("forward-model action", self.act_dim(), action.len()));
        }
        let mut x = obs.to_vec();
        x.extend_from_slice(action);
        Ok(x)
    }

    /// Mean and (clamped) log-variance of `q(z | s, a)`.
    pub fn encode_stats(&self, obs: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.encoder.forward(&self.input(obs, action)?)?;
        let (mu, lv) = out.split_at(self.latent_dim);
        Ok((mu.to_vec(), lv.iter().map(|v| v.clamp(-LOGVAR_BOUND, LOGVAR_BOUND)).collect()))
    }

    /// Deterministic representation used for clustering.
    pub fn encode_mean(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_stats(obs, action)?.0)
    }

    /// Reparameterized sample `mu + exp(logvar / 2) * eps`.
    pub fn encode_sample<R: rand::Rng + ?Sized>(&self, obs: &[f64], action: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let (mu, lv) = self.encode_stats(obs, action)?;
        if !self.variational {
            return Ok(mu);
        }
        Ok(mu
            .iter()
            .zip(&lv)
            .map(|(m, l)| {
                let eps: f64 = StandardNormal.sample(rng);
                m + (0.5 * l).exp() * eps
            })
            .collect())
    }

    pub fn draw_noise<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..self.latent_dim).map(|_| StandardNormal.sample(rng)).collect())
            .collect()
    }

    /// Summed loss over the batch and its gradient for all three nets.
    ///
    /// `noise[i]` is the reparameterization draw for sample `i`; it is
    /// ignored for the non-variational model.
    pub fn loss(&self, batch: &[FmSample], gamma: f64, noise: &[Vec<f64>]) -> Result<FmLoss> {
        if batch.is_empty() {
            return Err(BmfError::config("forward-model batch is empty"));
        }
        if noise.len() != batch.len() {
            return Err(BmfError::dims("noise rows", batch.len(), noise.len()));
        }
        let d = self.latent_dim;
        let mut grads = FmGrads {
            encoder: GradTape::zeros(self.encoder.values.len()),
            decoder: GradTape::zeros(self.decoder.values.len()),
            predictor: GradTape::zeros(self.predictor.values.len()),
        };
        let (mut rec_total, mut pred_total, mut kl_total) = (0.0, 0.0, 0.0);
        for (i, (sample, eps)) in batch.iter().zip(noise).enumerate() {
            let x = self.input(&sample.obs, &sample.action)?;
            let enc = self.encoder.forward_trace(&x)?;
            let out = enc.output();
            let mu = &out[..d];
            let raw_lv = &out[d..];
            let lv: Vec<f64> = raw_lv.iter().map(|v| v.clamp(-LOGVAR_BOUND, LOGVAR_BOUND)).collect();
            let z: Vec<f64> = if self.variational {
                (0..d).map(|k| mu[k] + (0.5 * lv[k]).exp() * eps[k]).collect()
            } else {
                mu.to_vec()
            };

            let dec = self.decoder.forward_trace(&z)?;
            let diff: Vec<f64> = dec.output().iter().zip(&x).map(|(r, t)| r - t).collect();
            let rec: f64 = diff.iter().map(|v| v * v).sum();

            let mut pin = z.clone();
            pin.extend_from_slice(&sample.obs);
            let pred = self.predictor.forward_trace(&pin)?;
            let e = pred.output()[0] + sample.reward - gamma * sample.next_value;

            let kl = if self.variational {
                0.5 * (0..d).map(|k| mu[k] * mu[k] + lv[k].exp() - 1.0 - lv[k]).sum::<f64>()
            } else {
                0.0
            };
            let total = self.lambda_p * rec + self.lambda_e * e * e + self.beta * kl;
            if !total.is_finite() {
                return Err(BmfError::NonFinite {
                    what: "forward-model loss",
                    index: i,
                });
            }
            rec_total += rec;
            pred_total += e * e;
            kl_total += kl;

            let g_rec: Vec<f64> = diff.iter().map(|v| 2.0 * self.lambda_p * v).collect();
            let mut dz = self.decoder.backward_trace(&dec, &g_rec, &mut grads.decoder)?;
            let dpin = self.predictor.backward_trace(&pred, &[2.0 * self.lambda_e * e], &mut grads.predictor)?;
            for k in 0..d {
                dz[k] += dpin[k];
            }
            let mut dout = vec![0.0; 2 * d];
            for k in 0..d {
                if self.variational {
                    dout[k] = dz[k] + self.beta * mu[k];
                    if raw_lv[k].abs() < LOGVAR_BOUND {
                        let s = (0.5 * lv[k]).exp();
                        dout[d + k] = dz[k] * eps[k] * 0.5 * s + self.beta * 0.5 * (lv[k].exp() - 1.0);
                    }
                } else {
                    dout[k] = dz[k];
                }
            }
            self.encoder.backward_trace(&enc, &dout, &mut grads.encoder)?;
        }
        Ok(FmLoss {
            loss: self.lambda_p * rec_total + self.lambda_e * pred_total + self.beta * kl_total,
            reconstruction: rec_total,
            prediction: pred_total,
            kl: kl_total,
            grads,
        })
    }

    /// Draws fresh noise and evaluates the loss.
    pub fn loss_sampled<R: rand::Rng + ?Sized>(&self, batch: &[FmSample], gamma: f64, rng: &mut R) -> Result<FmLoss> {
        let noise = self.draw_noise(batch.len(), rng);
        self.loss(batch, gamma, &noise)
    }

    pub(crate) fn nets(&self) -> [&NetParams; 3] {
        [&self.encoder, &self.decoder, &self.predictor]
    }

    pub(crate) fn nets_mut(&mut self) -> [&mut NetParams; 3] {
        [&mut self.encoder, &mut self.decoder, &mut self.predictor]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn random_sample<R: rand::Rng + ?Sized>(obs_dim: usize, act_dim: usize, rng: &mut R) -> FmSample {
        FmSample {
            obs: (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..act_dim).map(|_| rng.random_range(0.0..1.0)).collect(),
            reward: rng.random_range(-1.0..1.0),
            next_value: rng.random_range(-1.0..1.0),
        }
    }

    fn model(seed: u64) -> ForwardModel {
        let mut rng = stream(seed, Stream::Init);
        ForwardModel::new(3, 2, 2, 6, &mut rng).unwrap()
    }

    #[test]
    fn mean_mode_is_deterministic() {
        let fm = model(1);
        let a = fm.encode_mean(&[0.1, 0.2, 0.3], &[1.0, 0.0]).unwrap();
        let b = fm.encode_mean(&[0.1, 0.2, 0.3], &[1.0, 0.0]).unwrap();
        assert_eq!(a, b);
        assert!(fm.encode_mean(&[0.1], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn zero_encoder_gives_bias_mean() {
        let mut fm = model(2);
        fm.encoder.values.iter_mut().for_each(|v| *v = 0.0);
        let n = fm.encoder.values.len();
        fm.encoder.values[n - 4] = 0.7;
        let a = fm.encode_mean(&[1.0, 2.0, 3.0], &[0.0, 1.0]).unwrap();
        let b = fm.encode_mean(&[-1.0, 0.0, 5.0], &[1.0, 0.0]).unwrap();
        assert_eq!(a, vec![0.7, 0.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn sample_spread_matches_logvar() {
        let mut fm = model(3);
        fm.encoder.values.iter_mut().for_each(|v| *v = 0.0);
        let n = fm.encoder.values.len();
        // biases: mu = (0.5, -0.5), logvar = (0.4, -1.0)
        fm.encoder.values[n - 4..].copy_from_slice(&[0.5, -0.5, 0.4, -1.0]);
        let mut rng = stream(3, Stream::Grouping);
        let draws: Vec<Vec<f64>> = (0..10_000)
            .map(|_| fm.encode_sample(&[0.0; 3], &[0.0; 2], &mut rng).unwrap())
            .collect();
        for (k, lv) in [0.4f64, -1.0].into_iter().enumerate() {
            let mean = draws.iter().map(|z| z[k]).sum::<f64>() / 1e4;
            let var = draws.iter().map(|z| (z[k] - mean).powi(2)).sum::<f64>() / (1e4 - 1.0);
            let want = (lv / 2.0).exp();
            assert!((var.sqrt() - want).abs() / want < 0.05, "k={k} std={}", var.sqrt());
        }
    }

    #[test]
    fn zero_weights_zero_loss() {
        let mut fm = model(4);
        fm.lambda_p = 0.0;
        fm.lambda_e = 0.0;
        fm.beta = 0.0;
        let mut rng = stream(4, Stream::Grouping);
        let batch: Vec<FmSample> = (0..5).map(|_| random_sample(3, 2, &mut rng)).collect();
        let out = fm.loss_sampled(&batch, 0.95, &mut rng).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.encoder.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn perfect_model_zero_loss() {
        // Identity-like decoder via zero weights and a target of zeros.
        let mut fm = model(5);
        fm.beta = 0.0;
        fm.variational = false;
        for net in fm.nets_mut() {
            net.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let batch = vec![FmSample {
            obs: vec![0.0; 3],
            action: vec![0.0; 2],
            reward: 0.9,
            next_value: 1.0,
        }];
        let out = fm.loss(&batch, 0.9, &[vec![0.0; 2]]).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(fm.loss(&[], 0.9, &[]).is_err());
    }

    fn check_fd(fm: &ForwardModel) {
        let mut rng = stream(6, Stream::Grouping);
        let batch: Vec<FmSample> = (0..4).map(|_| random_sample(3, 2, &mut rng)).collect();
        let noise = fm.draw_noise(4, &mut rng);
        let base = fm.loss(&batch, 0.9, &noise).unwrap();
        let h = 1e-6;
        for net in 0..3 {
            let tape = [&base.grads.encoder, &base.grads.decoder, &base.grads.predictor][net];
            for i in 0..tape.len() {
                let mut plus = fm.clone();
                plus.nets_mut()[net].values[i] += h;
                let mut minus = fm.clone();
                minus.nets_mut()[net].values[i] -= h;
                let fd = (plus.loss(&batch, 0.9, &noise).unwrap().loss - minus.loss(&batch, 0.9, &noise).unwrap().loss) / (2.0 * h);
                let g = tape.values[i];
                assert!((g - fd).abs() <= 1e-4 * fd.abs().max(1.0), "net {net} param {i}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut fm = model(6);
        fm.beta = 0.3;
        check_fd(&fm);
        fm.variational = false;
        check_fd(&fm);
    }
}
