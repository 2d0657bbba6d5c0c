use crate::error::{BmfError, Result};

use super::{GradTape, NetParams};

fn check(params: &[f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() {
        return Err(BmfError::dims("gradient tape", params.len(), grad.len()));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(BmfError::NonFinite {
            what: "gradient",
            index,
        });
    }
    Ok(())
}

/// Plain gradient descent: `p <- p - lr * g`.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, params: &mut NetParams, tape: &GradTape) -> Result<()> {
        self.step_slice(&mut params.values, &tape.values)
    }

    pub fn step_slice(&self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check(params, grad)?;
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= self.lr * g;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables it.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 0.0,
        }
    }
}

/// Adam with bias correction. Moments persist across calls.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Adam {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut NetParams, tape: &GradTape) -> Result<()> {
        self.step_slice(&mut params.values, &tape.values)
    }

    /// A rejected gradient leaves both the parameters and the moments alone.
    pub fn step_slice(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check(params, grad)?;
        if self.m.len() != params.len() {
            return Err(BmfError::dims("adam moments", self.m.len(), params.len()));
        }
        let c = self.config;
        let scale = if c.clip_norm > 0.0 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c.clip_norm {
                c.clip_norm / norm
            } else {
                1.0
            }
        } else {
            1.0
        };
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i] * scale;
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetDef};

    fn scalar_params(p: f64) -> NetParams {
        // 1 -> 1 identity net: [w, b]
        let def = NetDef::new(vec![1, 1], Activation::Identity, Activation::Identity).unwrap();
        NetParams::from_values(&def, vec![p, 0.0]).unwrap()
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = scalar_params(1.0);
        Sgd { lr: 0.1 }
            .step(&mut p, &GradTape { values: vec![2.0, 0.0] })
            .unwrap();
        assert!((p.values[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_grad_is_noop() {
        let mut p = scalar_params(1.0);
        Sgd { lr: 0.1 }.step(&mut p, &GradTape::zeros(2)).unwrap();
        assert_eq!(p.values, vec![1.0, 0.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let mut p = scalar_params(1.0);
        let mut adam = Adam::new(AdamConfig::default(), 2);
        adam.step(&mut p, &GradTape { values: vec![1.0, 0.0] }).unwrap();
        let expected = 1.0 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.values[0] - expected).abs() < 1e-15);
        assert_eq!(p.values[1], 0.0);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_moments_persist() {
        let mut p = scalar_params(0.0);
        let mut adam = Adam::new(AdamConfig::default(), 2);
        let g = GradTape { values: vec![1.0, 0.0] };
        adam.step(&mut p, &g).unwrap();
        adam.step(&mut p, &g).unwrap();
        assert_eq!(adam.t, 2);
        assert!((adam.m[0] - 0.19).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_rejected_with_index() {
        let mut p = scalar_params(1.0);
        let mut adam = Adam::new(AdamConfig::default(), 2);
        let err = adam
            .step(&mut p, &GradTape { values: vec![0.0, f64::NAN] })
            .unwrap_err();
        assert!(matches!(err, BmfError::NonFinite { index: 1, .. }));
        assert_eq!(p.values, vec![1.0, 0.0]);
        assert_eq!(adam.t, 0);
        let err = Sgd { lr: 1.0 }
            .step(&mut p, &GradTape { values: vec![f64::INFINITY, 0.0] })
            .unwrap_err();
        assert!(matches!(err, BmfError::NonFinite { index: 0, .. }));
    }
}
