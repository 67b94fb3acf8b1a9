//! Fully connected ReLU networks with hand-written backpropagation and Adam.
//!
//! Parameters live in one flat vector, layer by layer, each layer storing
//! its row-major `out × in` weight matrix followed by its bias. Gradients,
//! optimizer moments and checkpoints share that layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer post-activation values from a forward pass, input included.
#[derive(Debug, Clone)]
pub struct Activations {
    layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("non-empty")
    }
}

impl Mlp {
    /// All-zero network with the given layer sizes `[input, hidden.., output]`.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer dims {dims:?}")));
        }
        let n = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// He-uniform weights (bound √(6 / fan_in)), zero biases.
    pub fn he_uniform<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let mut offset = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                expected: net.params.len(),
                actual: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    /// Multiplies the output layer's weights by `k`.
    pub fn scale_output_layer(mut self, k: f64) -> Self {
        let l = self.n_layers() - 1;
        let (wo, bo) = self.offsets(l);
        self.params[wo..bo].iter_mut().for_each(|w| *w *= k);
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// (weight offset, bias offset) of layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.dims[l] * self.dims[l + 1])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass through the hidden layers only; the last entry is the
    /// input of the output layer.
    fn hidden_forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut layers = vec![x.to_vec()];
        for l in 0..self.n_layers() - 1 {
            let (wo, bo) = self.offsets(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let input = layers.last().unwrap();
            let w = &self.params[wo..wo + n_in * n_out];
            let b = &self.params[bo..bo + n_out];
            let h: Vec<f64> = (0..n_out)
                .map(|o| {
                    let z = b[o] + dot(&w[o * n_in..(o + 1) * n_in], input);
                    z.max(0.0)
                })
                .collect();
            layers.push(h);
        }
        layers
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Activations> {
        self.check_input(x)?;
        let mut layers = self.hidden_forward(x);
        let l = self.n_layers() - 1;
        let (wo, bo) = self.offsets(l);
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let input = layers.last().unwrap();
        let out: Vec<f64> = (0..n_out)
            .map(|o| self.params[bo + o] + dot(&self.params[wo + o * n_in..wo + (o + 1) * n_in], input))
            .collect();
        layers.push(out);
        Ok(Activations { layers })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.layers.pop().unwrap())
    }

    /// Single output component `k`; the returned activations stop at the
    /// last hidden layer and feed [`Mlp::backward_component`].
    pub fn forward_component(&self, x: &[f64], k: usize) -> Result<(f64, Activations)> {
        self.check_input(x)?;
        if k >= self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: k,
            });
        }
        let layers = self.hidden_forward(x);
        let l = self.n_layers() - 1;
        let (wo, bo) = self.offsets(l);
        let n_in = self.dims[l];
        let v = self.params[bo + k] + dot(&self.params[wo + k * n_in..wo + (k + 1) * n_in], layers.last().unwrap());
        Ok((v, Activations { layers }))
    }

    /// Gradient of ⟨output, output_grad⟩ w.r.t. every parameter, added
    /// into `grad`.
    pub fn backward(&self, acts: &Activations, output_grad: &[f64], grad: &mut [f64]) -> Result<()> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        if grad.len() != self.n_params() || acts.layers.len() != self.dims.len() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                actual: grad.len(),
            });
        }
        let mut delta = output_grad.to_vec();
        for l in (0..self.n_layers()).rev() {
            delta = self.backward_layer(l, &acts.layers[l], &delta, grad);
        }
        Ok(())
    }

    /// Like [`Mlp::backward`] for `output_grad = scale · e_k`.
    pub fn backward_component(&self, acts: &Activations, k: usize, scale: f64, grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.n_params() || acts.layers.len() != self.dims.len() - 1 {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                actual: grad.len(),
            });
        }
        let l = self.n_layers() - 1;
        let (wo, bo) = self.offsets(l);
        let n_in = self.dims[l];
        let input = &acts.layers[l];
        grad[bo + k] += scale;
        let row = wo + k * n_in;
        let mut delta = vec![0.0; n_in];
        for i in 0..n_in {
            grad[row + i] += scale * input[i];
            delta[i] = scale * self.params[row + i];
        }
        for l in (0..self.n_layers() - 1).rev() {
            // ReLU derivative at this layer's output
            let out = &acts.layers[l + 1];
            for (d, &h) in delta.iter_mut().zip(out) {
                if h <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = self.linear_backward(l, &acts.layers[l], &delta, grad);
        }
        Ok(())
    }

    fn backward_layer(&self, l: usize, input: &[f64], delta_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let delta_in = self.linear_backward(l, input, delta_out, grad);
        if l == 0 {
            return delta_in;
        }
        // input of layer l is the ReLU output of layer l-1
        delta_in
            .into_iter()
            .zip(input)
            .map(|(d, &h)| if h > 0.0 { d } else { 0.0 })
            .collect()
    }

    /// Accumulates weight/bias gradients of layer `l` and returns the
    /// gradient w.r.t. its input (pre-mask).
    fn linear_backward(&self, l: usize, input: &[f64], delta_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (wo, bo) = self.offsets(l);
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let mut delta_in = vec![0.0; n_in];
        for o in 0..n_out {
            let d = delta_out[o];
            if d == 0.0 {
                continue;
            }
            grad[bo + o] += d;
            let row = wo + o * n_in;
            for i in 0..n_in {
                grad[row + i] += d * input[i];
                delta_in[i] += d * self.params[row + i];
            }
        }
        delta_in
    }

    /// Deep copy used as a frozen target network.
    pub fn clone_into_target(&self) -> Mlp {
        self.clone()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One bias-corrected Adam update. A non-finite gradient is rejected and
    /// leaves both the network and the state untouched.
    pub fn step(&mut self, net: &mut Mlp, grad: &[f64]) -> Result<()> {
        if grad.len() != net.n_params() || self.m.len() != net.n_params() {
            return Err(Error::DimensionMismatch {
                expected: net.n_params(),
                actual: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in net.params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(net: &mut Mlp, state: &mut AdamState, grad: &[f64]) -> Result<()> {
    state.step(net, grad)
}

/// Network plus optimizer state, serialized as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCheckpoint {
    pub version: u32,
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
    pub optimizer: AdamState,
}

impl NetworkCheckpoint {
    pub fn new(net: &Mlp, opt: &AdamState) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            dims: net.dims.clone(),
            params: net.params.clone(),
            optimizer: opt.clone(),
        }
    }

    pub fn restore(&self) -> Result<(Mlp, AdamState)> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let net = Mlp::from_params(&self.dims, self.params.clone())?;
        if self.optimizer.m.len() != net.n_params() || self.optimizer.v.len() != net.n_params() {
            return Err(Error::DimensionMismatch {
                expected: net.n_params(),
                actual: self.optimizer.m.len(),
            });
        }
        Ok((net, self.optimizer.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn random_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Straightforward matrix-multiply forward pass used as a reference.
    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut off = 0;
        let d = net.dims();
        for l in 0..d.len() - 1 {
            let (n_in, n_out) = (d[l], d[l + 1]);
            let w = &net.params()[off..off + n_in * n_out];
            let b = &net.params()[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                z[o] = b[o];
                for i in 0..n_in {
                    z[o] += w[o * n_in + i] * h[i];
                }
                if l + 2 < d.len() {
                    z[o] = z[o].max(0.0);
                }
            }
            h = z;
        }
        h
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[8, 32, 32, 256]).unwrap();
        let y = net.forward(&[1.0; 8]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(net.forward(&[1.0; 7]).is_err());
    }

    #[test]
    fn identity_linear_net() {
        let net = Mlp::from_params(&[1, 1], vec![1.0, 0.0]).unwrap();
        for x in [0.0, 0.5, 3.0] {
            assert_eq!(net.forward(&[x]).unwrap(), vec![x]);
        }
    }

    #[test]
    fn forward_matches_reference() {
        let mut r = seeded(4);
        for _ in 0..10 {
            let net = Mlp::he_uniform(&[8, 32, 32, 256], &mut r).unwrap();
            let x = random_vec(8, &mut r);
            let a = net.forward(&x).unwrap();
            let b = reference_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
            let (c, _) = net.forward_component(&x, 77).unwrap();
            assert!((c - b[77]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_gradient() {
        let mut r = seeded(5);
        let net = Mlp::he_uniform(&[8, 32, 32, 256], &mut r).unwrap();
        let acts = net.forward_cached(&random_vec(8, &mut r)).unwrap();
        let mut g = vec![0.0; net.n_params()];
        net.backward(&acts, &vec![0.0; 256], &mut g).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_row_is_input() {
        let mut r = seeded(6);
        let net = Mlp::he_uniform(&[5, 3], &mut r).unwrap();
        let x = random_vec(5, &mut r);
        let acts = net.forward_cached(&x).unwrap();
        let mut g = vec![0.0; net.n_params()];
        net.backward(&acts, &[0.0, 1.0, 0.0], &mut g).unwrap();
        assert_eq!(&g[5..10], &x[..]);
        assert_eq!(g[15 + 1], 1.0);
        assert!(g[0..5].iter().chain(&g[10..15]).all(|&v| v == 0.0));
    }

    #[test]
    fn component_backward_matches_full_backward() {
        let mut r = seeded(7);
        let net = Mlp::he_uniform(&[8, 32, 32, 256], &mut r).unwrap();
        let x = random_vec(8, &mut r);
        let mut full = vec![0.0; net.n_params()];
        let mut og = vec![0.0; 256];
        og[42] = -0.7;
        net.backward(&net.forward_cached(&x).unwrap(), &og, &mut full).unwrap();
        let mut part = vec![0.0; net.n_params()];
        let (_, acts) = net.forward_component(&x, 42).unwrap();
        net.backward_component(&acts, 42, -0.7, &mut part).unwrap();
        for (a, b) in full.iter().zip(&part) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_check_small_net() {
        let mut r = seeded(8);
        let mut net = Mlp::he_uniform(&[4, 6, 5, 3], &mut r).unwrap();
        let x = random_vec(4, &mut r);
        let og = random_vec(3, &mut r);
        let mut g = vec![0.0; net.n_params()];
        net.backward(&net.forward_cached(&x).unwrap(), &og, &mut g).unwrap();
        let h = 1e-5;
        for k in 0..net.n_params() {
            let p0 = net.params[k];
            net.params[k] = p0 + h;
            let up = dot(&net.forward(&x).unwrap(), &og);
            net.params[k] = p0 - h;
            let dn = dot(&net.forward(&x).unwrap(), &og);
            net.params[k] = p0;
            let fd = (up - dn) / (2.0 * h);
            let denom = g[k].abs().max(fd.abs()).max(1e-7);
            assert!((g[k] - fd).abs() / denom < 1e-4, "param {k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn adam_zero_gradient_only_counts() {
        let mut r = seeded(9);
        let mut net = Mlp::he_uniform(&[3, 4, 2], &mut r).unwrap();
        let before = net.clone();
        let mut opt = AdamState::new(net.n_params(), 1e-3);
        let zero = vec![0.0; net.n_params()];
        adam_step(&mut net, &mut opt, &zero).unwrap();
        assert_eq!(net, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        let mut opt = AdamState::new(2, 1e-4);
        let g = vec![0.3, -2.0];
        opt.step(&mut net, &g).unwrap();
        for (p, gk) in net.params().iter().zip(&g) {
            let expected = -1e-4 * gk / (gk.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        let before = net.clone();
        let mut opt = AdamState::new(2, 1e-4);
        assert!(matches!(opt.step(&mut net, &[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
        assert_eq!(net, before);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let mut r = seeded(10);
        let mut net = Mlp::zeros(&[4, 2]).unwrap();
        for p in net.params_mut() {
            *p = r.gen_range(-1.0..1.0);
        }
        let mut opt = AdamState::new(net.n_params(), 1e-2);
        let mut norms = Vec::new();
        for _ in 0..5000 {
            let grad: Vec<f64> = net.params().iter().map(|p| 2.0 * p).collect();
            opt.step(&mut net, &grad).unwrap();
            norms.push(net.params().iter().map(|p| p * p).sum::<f64>().sqrt());
        }
        // monotone over the first stretch after warm-up (before Adam's
        // end-game oscillation around the minimum)
        assert!(norms[10..60].windows(2).all(|w| w[1] < w[0]));
        assert!(*norms.last().unwrap() < 1e-2);
    }

    #[test]
    fn fits_random_regression() {
        let mut r = seeded(11);
        let xs: Vec<Vec<f64>> = (0..16).map(|_| random_vec(8, &mut r)).collect();
        let ys: Vec<Vec<f64>> = (0..16).map(|_| random_vec(4, &mut r)).collect();
        let mut net = Mlp::he_uniform(&[8, 32, 32, 4], &mut r).unwrap();
        let mut opt = AdamState::new(net.n_params(), 1e-3);
        let mse = |net: &Mlp| {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| net.forward(x).unwrap().iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .sum::<f64>()
                / (16.0 * 4.0)
        };
        for _ in 0..5000 {
            let mut g = vec![0.0; net.n_params()];
            for (x, y) in xs.iter().zip(&ys) {
                let acts = net.forward_cached(x).unwrap();
                let og: Vec<f64> = acts.output().iter().zip(y).map(|(a, b)| 2.0 * (a - b) / 64.0).collect();
                net.backward(&acts, &og, &mut g).unwrap();
            }
            opt.step(&mut net, &g).unwrap();
        }
        assert!(mse(&net) < 1e-3, "mse {}", mse(&net));
    }

    #[test]
    fn target_copy_is_independent() {
        let mut r = seeded(12);
        let mut net = Mlp::he_uniform(&[8, 32, 32, 256], &mut r).unwrap();
        let target = net.clone_into_target();
        assert_eq!(target.params(), net.params());
        let x = random_vec(8, &mut r);
        let before = target.forward(&x).unwrap();
        net.params_mut()[0] += 1.0;
        assert_eq!(target.forward(&x).unwrap(), before);
        assert_eq!(target.clone_into_target(), target);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut r = seeded(13);
        let mut net = Mlp::he_uniform(&[8, 32, 32, 256], &mut r).unwrap();
        let mut opt = AdamState::new(net.n_params(), 1e-4);
        let g = random_vec(net.n_params(), &mut r);
        opt.step(&mut net, &g).unwrap();
        let json = serde_json::to_string(&NetworkCheckpoint::new(&net, &opt)).unwrap();
        let (net2, opt2) = serde_json::from_str::<NetworkCheckpoint>(&json).unwrap().restore().unwrap();
        assert_eq!(opt2, opt);
        let x = random_vec(8, &mut r);
        let a = net.forward(&x).unwrap();
        let b = net2.forward(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
        let mut small = vec![1.0, 1.0];
        clip_global_norm(&mut small, 10.0);
        assert_eq!(small, vec![1.0, 1.0]);
    }
}
