//! Minimal dense-network engine.
//!
//! Parameters live in one flat `f64` vector per network so that gradients,
//! optimizer moments and checkpoints are all plain aligned slices.

mod net;
mod optim;

pub use net::{Activation, GradTape, NetDef, NetParams, Trace};
pub use optim::{Adam, AdamConfig, Sgd};

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of `xs / temperature`.
pub fn softmax(xs: &[f64], temperature: f64) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&x| ((x - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_picks_first_max() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 1000.0, 0.0], 0.1);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }
}
