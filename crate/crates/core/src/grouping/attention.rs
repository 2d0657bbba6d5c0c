//! Scaled dot-product attention between group embeddings.


/// Learned query/key projections, both `dim x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAttention {
    pub dim: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
}

/// Gradients for the two projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
}

impl AttentionGrads {
    pub fn zeros(dim: usize) -> Self {
        AttentionGrads {
            wq: vec![0.0; dim * dim],
            wk: vec![0.0; dim * dim],
        }
    }

    pub fn add_assign(&mut self, other: &AttentionGrads) {
        self.wq.iter_mut().zip(&other.wq).for_each(|(a, b)| *a += b);
        self.wk.iter_mut().zip(&other.wk).for_each(|(a, b)| *a += b);
    }
}

fn matvec(w: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d).map(|r| w[r * d..(r + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GroupAttention {
    /// Identity projections: scores reduce to `<g_m, g_n> / sqrt(d)`.
    pub fn identity(dim: usize) -> Self {
        let mut eye = vec![0.0; dim * dim];
        (0..dim).for_each(|i| eye[i * dim + i] = 1.0);
        GroupAttention {
            dim,
            wq: eye.clone(),
            wk: eye,
        }
    }

    pub fn init<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let limit = (3.0 / dim as f64).sqrt();
        let mut draw = || (0..dim * dim).map(|_| rng.random_range(-limit..limit)).collect::<Vec<f64>>();
        let wq = draw();
        let wk = draw();
        GroupAttention { dim, wq, wk }
    }

    fn scores(&self, m: usize, emb: &[Vec<f64>], usable: &[bool]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let q = matvec(&self.wq, &emb[m]);
        let keys: Vec<Vec<f64>> = emb.iter().map(|g| matvec(&self.wk, g)).collect();
        let scale = (self.dim as f64).sqrt();
        let s = (0..emb.len())
            .map(|n| {
                if n == m || !usable[n] {
                    f64::NEG_INFINITY
                } else {
                    dot(&q, &keys[n]) / scale
                }
            })
            .collect();
        (s, keys, q)
    }

    /// Normalized weights for row `m`; entries for `m` itself and unusable
    /// groups are zero. A row with no usable peer is all zeros.
    pub fn row(&self, m: usize, emb: &[Vec<f64>], usable: &[bool]) -> Vec<f64> {
        let (s, _, _) = self.scores(m, emb, usable);
        softmax_masked(&s)
    }

    /// Full `k x k` matrix of normalized weights.
    pub fn weights(&self, emb: &[Vec<f64>], usable: &[bool]) -> Vec<Vec<f64>> {
        (0..emb.len()).map(|m| self.row(m, emb, usable)).collect()
    }

    /// Backpropagates `dw[n] = dL/dw_mn` through row `m` into `grads`.
    pub fn backward_row(&self, m: usize, emb: &[Vec<f64>], usable: &[bool], dw: &[f64], grads: &mut AttentionGrads) {
        let (s, keys, q) = self.scores(m, emb, usable);
        let p = softmax_masked(&s);
        let mean: f64 = p.iter().zip(dw).map(|(a, b)| a * b).sum();
        let d = self.dim;
        let scale = (d as f64).sqrt();
        for n in 0..emb.len() {
            if p[n] == 0.0 {
                continue;
            }
            let ds = p[n] * (dw[n] - mean) / scale;
            if ds == 0.0 {
                continue;
            }
            // s = q . k_n, q = Wq g_m, k_n = Wk g_n
            for r in 0..d {
                for c in 0..d {
                    grads.wq[r * d + c] += ds * keys[n][r] * emb[m][c];
                    grads.wk[r * d + c] += ds * q[r] * emb[n][c];
                }
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.wq.clone();
        v.extend_from_slice(&self.wk);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let n = self.dim * self.dim;
        self.wq.copy_from_slice(&v[..n]);
        self.wk.copy_from_slice(&v[n..2 * n]);
    }
}

fn softmax_masked(s: &[f64]) -> Vec<f64> {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; s.len()];
    }
    let e: Vec<f64> = s.iter().map(|&v| if v == f64::NEG_INFINITY { 0.0 } else { (v - max).exp() }).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
