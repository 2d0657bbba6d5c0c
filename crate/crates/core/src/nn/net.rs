use rand::Rng;

use crate::error::{BmfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    /// Only valid on the output layer.
    Softmax,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::Softmax => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Identity,
            3 => Activation::Softmax,
            _ => return None,
        })
    }

    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Identity => {}
            Activation::Softmax => {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                z.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }

    /// Turns d/d(output) into d/d(pre-activation), given the layer output.
    fn backprop(self, out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => {
                for (g, &y) in grad.iter_mut().zip(out) {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, &y) in grad.iter_mut().zip(out) {
                    *g *= 1.0 - y * y;
                }
            }
            Activation::Identity => {}
            Activation::Softmax => {
                let dot: f64 = grad.iter().zip(out).map(|(g, y)| g * y).sum();
                for (g, &y) in grad.iter_mut().zip(out) {
                    *g = y * (*g - dot);
                }
            }
        }
    }
}

/// Shape of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetDef {
    pub layer_sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl NetDef {
    pub fn new(layer_sizes: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(BmfError::config("a network needs at least 2 layers"));
        }
        if layer_sizes.contains(&0) {
            return Err(BmfError::config("layer sizes must be positive"));
        }
        if hidden == Activation::Softmax {
            return Err(BmfError::config("softmax is only allowed on the output layer"));
        }
        Ok(NetDef {
            layer_sizes,
            hidden,
            output,
        })
    }

    /// `input -> hidden... -> output` with the given hidden widths.
    pub fn mlp(
        input: usize,
        hidden_sizes: &[usize],
        output: usize,
        hidden: Activation,
        out_act: Activation,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden_sizes.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden_sizes);
        sizes.push(output);
        NetDef::new(sizes, hidden, out_act)
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }
}

/// Gradient aligned element-for-element with [`NetParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradTape {
    pub values: Vec<f64>,
}

impl GradTape {
    pub fn zeros(len: usize) -> Self {
        GradTape {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add_assign(&mut self, other: &GradTape) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}

/// Layer outputs recorded by [`NetParams::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

/// Flat parameter vector plus the shape that interprets it.
///
/// Layer `l` stores an `out x in` row-major weight block followed by `out`
/// biases.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub def: NetDef,
    pub values: Vec<f64>,
}

impl NetParams {
    pub fn zeros(def: &NetDef) -> Self {
        NetParams {
            values: vec![0.0; def.num_params()],
            def: def.clone(),
        }
    }

    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(def: &NetDef, rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(def.num_params());
        for w in def.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                values.push(rng.random_range(-limit..limit));
            }
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        NetParams {
            def: def.clone(),
            values,
        }
    }

    pub fn from_values(def: &NetDef, values: Vec<f64>) -> Result<Self> {
        if values.len() != def.num_params() {
            return Err(BmfError::dims("parameter vector", def.num_params(), values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(BmfError::NonFinite {
                what: "parameter",
                index: i,
            });
        }
        Ok(NetParams {
            def: def.clone(),
            values,
        })
    }

    pub fn input_size(&self) -> usize {
        self.def.input_size()
    }

    pub fn output_size(&self) -> usize {
        self.def.output_size()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(BmfError::dims("network input", self.input_size(), input.len()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut off = 0;
        for l in 0..self.def.num_layers() {
            let (n_in, n_out) = (self.def.layer_sizes[l], self.def.layer_sizes[l + 1]);
            let mut z = affine(&self.values[off..], n_in, n_out, &x);
            off += n_in * n_out + n_out;
            self.def.activation(l).apply(&mut z);
            x = z;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.def.layer_sizes.len());
        acts.push(input.to_vec());
        let mut off = 0;
        for l in 0..self.def.num_layers() {
            let (n_in, n_out) = (self.def.layer_sizes[l], self.def.layer_sizes[l + 1]);
            let mut z = affine(&self.values[off..], n_in, n_out, &acts[l]);
            off += n_in * n_out + n_out;
            self.def.activation(l).apply(&mut z);
            acts.push(z);
        }
        Ok(Trace { acts })
    }

    /// Gradient of a scalar loss with respect to the parameters, given the
    /// loss gradient at the network output.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<GradTape> {
        let trace = self.forward_trace(input)?;
        let mut tape = GradTape::zeros(self.values.len());
        self.backward_trace(&trace, output_grad, &mut tape)?;
        Ok(tape)
    }

    /// Accumulates parameter gradients into `tape` and returns the gradient
    /// with respect to the network input.
    pub fn backward_trace(
        &self,
        trace: &Trace,
        output_grad: &[f64],
        tape: &mut GradTape,
    ) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_size() {
            return Err(BmfError::dims("output gradient", self.output_size(), output_grad.len()));
        }
        if tape.len() != self.values.len() {
            return Err(BmfError::dims("gradient tape", self.values.len(), tape.len()));
        }
        let n_layers = self.def.num_layers();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.def.layer_sizes[l] * self.def.layer_sizes[l + 1] + self.def.layer_sizes[l + 1];
        }

        let mut grad = output_grad.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.def.layer_sizes[l], self.def.layer_sizes[l + 1]);
            self.def.activation(l).backprop(&trace.acts[l + 1], &mut grad);
            let x = &trace.acts[l];
            let w = &self.values[offsets[l]..offsets[l] + n_in * n_out];
            let gw = &mut tape.values[offsets[l]..offsets[l] + n_in * n_out + n_out];
            let mut gin = vec![0.0; n_in];
            for o in 0..n_out {
                let g = grad[o];
                if g == 0.0 {
                    continue;
                }
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (r, &xi) in row.iter_mut().zip(x) {
                    *r += g * xi;
                }
                let wrow = &w[o * n_in..(o + 1) * n_in];
                for (gi, &wi) in gin.iter_mut().zip(wrow) {
                    *gi += g * wi;
                }
            }
            for o in 0..n_out {
                gw[n_in * n_out + o] += grad[o];
            }
            grad = gin;
        }
        Ok(grad)
    }
}

fn affine(block: &[f64], n_in: usize, n_out: usize, x: &[f64]) -> Vec<f64> {
    let (w, rest) = block.split_at(n_in * n_out);
    let b = &rest[..n_out];
    (0..n_out)
        .map(|o| {
            let row = &w[o * n_in..(o + 1) * n_in];
            b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn net(sizes: &[usize], hidden: Activation, out: Activation, seed: u64) -> NetParams {
        let def = NetDef::new(sizes.to_vec(), hidden, out).unwrap();
        NetParams::init(&def, &mut stream(seed, Stream::Init))
    }

    /// Central finite differences of `loss(params) = <output_grad, forward(params)>`.
    fn fd_grad(p: &NetParams, input: &[f64], out_grad: &[f64], h: f64) -> Vec<f64> {
        let loss = |q: &NetParams| -> f64 {
            q.forward(input)
                .unwrap()
                .iter()
                .zip(out_grad)
                .map(|(a, b)| a * b)
                .sum()
        };
        (0..p.values.len())
            .map(|i| {
                let mut plus = p.clone();
                plus.values[i] += h;
                let mut minus = p.clone();
                minus.values[i] -= h;
                (loss(&plus) - loss(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn zero_net_outputs_zero() {
        let def = NetDef::new(vec![3, 4, 2], Activation::Relu, Activation::Identity).unwrap();
        let p = NetParams::zeros(&def);
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_tanh_at_zero() {
        let def = NetDef::new(vec![2, 2], Activation::Tanh, Activation::Tanh).unwrap();
        let p = NetParams::from_values(&def, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.forward(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_matches_straight_line_recompute() {
        let p = net(&[4, 8, 2], Activation::Tanh, Activation::Identity, 11);
        let x = [0.3, -0.7, 1.1, 0.05];
        // Independent evaluation with explicit index arithmetic.
        let v = &p.values;
        let mut h = [0.0; 8];
        for (o, hv) in h.iter_mut().enumerate() {
            let mut z = v[32 + o];
            for i in 0..4 {
                z += v[o * 4 + i] * x[i];
            }
            *hv = z.tanh();
        }
        let base = 40;
        let mut y = [0.0; 2];
        for (o, yv) in y.iter_mut().enumerate() {
            let mut z = v[base + 16 + o];
            for i in 0..8 {
                z += v[base + o * 8 + i] * h[i];
            }
            *yv = z;
        }
        let out = p.forward(&x).unwrap();
        assert_eq!(out.len(), 2);
        for k in 0..2 {
            assert!((out[k] - y[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_errors_name_sizes() {
        let p = net(&[3, 2], Activation::Relu, Activation::Identity, 1);
        match p.forward(&[1.0]) {
            Err(BmfError::DimensionMismatch {
                expected, actual, ..
            }) => assert_eq!((expected, actual), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(p.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_seed_gives_zero_tape() {
        let p = net(&[3, 5, 2], Activation::Tanh, Activation::Identity, 3);
        let tape = p.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(tape.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_one_by_one() {
        let def = NetDef::new(vec![1, 1], Activation::Identity, Activation::Identity).unwrap();
        let p = NetParams::from_values(&def, vec![0.5, -1.0]).unwrap();
        let tape = p.backward(&[2.0], &[1.0]).unwrap();
        assert_eq!(tape.values, vec![2.0, 1.0]);
    }

    #[test]
    fn random_3_5_1_matches_finite_differences() {
        let p = net(&[3, 5, 1], Activation::Tanh, Activation::Identity, 5);
        let x = [0.4, -0.2, 0.9];
        let tape = p.backward(&x, &[1.0]).unwrap();
        let fd = fd_grad(&p, &x, &[1.0], 1e-5);
        for (a, b) in tape.values.iter().zip(&fd) {
            assert!(rel_err(*a, *b) <= 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_output_gradient() {
        let p = net(&[3, 6, 4], Activation::Relu, Activation::Softmax, 9);
        let x = [0.4, -0.2, 0.9];
        let g = [0.3, -1.0, 0.7, 2.0];
        let tape = p.backward(&x, &g).unwrap();
        let fd = fd_grad(&p, &x, &g, 1e-5);
        for (a, b) in tape.values.iter().zip(&fd) {
            assert!(rel_err(*a, *b) <= 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let p = net(&[4, 7, 3], Activation::Tanh, Activation::Identity, 21);
        let x = vec![0.1, 0.5, -0.3, 0.8];
        let g = [1.0, -0.5, 0.25];
        let trace = p.forward_trace(&x).unwrap();
        let mut tape = GradTape::zeros(p.values.len());
        let gin = p.backward_trace(&trace, &g, &mut tape).unwrap();
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let f = |v: &[f64]| -> f64 {
                p.forward(v).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum()
            };
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!(rel_err(gin[i], fd) < 1e-6);
        }
    }

    #[test]
    fn passes_leave_params_untouched() {
        let p = net(&[3, 5, 2], Activation::Relu, Activation::Identity, 2);
        let before = p.values.clone();
        let _ = p.forward(&[1.0, 2.0, 3.0]).unwrap();
        let _ = p.backward(&[1.0, 2.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!(before, p.values);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = net(&[10, 20, 3], Activation::Relu, Activation::Identity, 42);
        let b = net(&[10, 20, 3], Activation::Relu, Activation::Identity, 42);
        assert_eq!(a.values, b.values);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(a.values[..200].iter().all(|w| w.abs() <= limit));
        assert_eq!(a.values.len(), 10 * 20 + 20 + 20 * 3 + 3);
    }

    #[test]
    fn rejects_bad_defs() {
        assert!(NetDef::new(vec![3], Activation::Relu, Activation::Identity).is_err());
        assert!(NetDef::new(vec![3, 0, 1], Activation::Relu, Activation::Identity).is_err());
        assert!(NetDef::new(vec![3, 2, 1], Activation::Softmax, Activation::Identity).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn backward_matches_finite_differences(
            seed in 0u64..10_000,
            n_in in 1usize..5,
            n_hidden in 1usize..6,
            n_out in 1usize..4,
            act in 0u8..3,
            x in proptest::collection::vec(-1.0f64..1.0, 5),
        ) {
            let hidden = Activation::from_code(act).unwrap();
            // Keep relu kinks away from the probe points by using tanh when
            // relu is drawn on the output layer.
            let p = net(&[n_in, n_hidden, n_out], hidden, Activation::Tanh, seed);
            let input = &x[..n_in];
            let og: Vec<f64> = (0..n_out).map(|i| 1.0 - 0.3 * i as f64).collect();
            let tape = p.backward(input, &og).unwrap();
            let fd = fd_grad(&p, input, &og, 1e-5);
            let trace = p.forward_trace(input).unwrap();
            for (i, (a, b)) in tape.values.iter().zip(&fd).enumerate() {
                // A relu unit sitting within h of its kink makes the central
                // difference itself unreliable; skip only those entries.
                let near_kink = hidden == Activation::Relu
                    && trace.acts[1].iter().any(|&h| h > 0.0 && h < 1e-4);
                if !near_kink {
                    prop_assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-4),
                        "param {}: {} vs {}", i, a, b);
                }
            }
        }
    }
}
