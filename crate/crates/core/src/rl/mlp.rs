//! Fully connected ReLU networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector (layer by layer, weights row-major as
//! `out × in`, then biases) so optimisers, target averaging and checkpoints
//! can treat a network as a plain slice.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate values of a batched forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every layer (the network input first).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// Zero-initialised network.
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output sizes");
        let n = param_count(layer_sizes);
        Self { layer_sizes: layer_sizes.to_vec(), params: vec![0.0; n] }
    }

    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(layer_sizes);
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_out * (fan_in + 1)] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_out * (fan_in + 1);
        }
        net
    }

    pub fn from_params(layer_sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let expected = param_count(layer_sizes);
        if params.len() != expected {
            return Err(Error::ShapeMismatch { expected, got: params.len() });
        }
        Ok(Self { layer_sizes: layer_sizes.to_vec(), params })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer(&self, idx: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let offset: usize = self.layer_sizes.windows(2).take(idx).map(|w| w[1] * (w[0] + 1)).sum();
        let (fan_in, fan_out) = (self.layer_sizes[idx], self.layer_sizes[idx + 1]);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[offset..offset + fan_out * fan_in]).unwrap();
        let b = ArrayView1::from(&self.params[offset + fan_out * fan_in..offset + fan_out * (fan_in + 1)]);
        (w, b)
    }

    fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward_cached(input).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, MlpCache)> {
        if input.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch { expected: self.input_dim(), got: input.ncols() });
        }
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut pre = Vec::with_capacity(self.n_layers() - 1);
        let mut x = input.to_owned();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z = x.dot(&w.t());
            z += &b;
            inputs.push(x);
            if l + 1 == self.n_layers() {
                return Ok((z, MlpCache { inputs, pre }));
            }
            let h = z.mapv(relu);
            pre.push(z);
            x = h;
        }
        unreachable!()
    }

    /// Single-sample convenience forward.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. Accumulates parameter gradients into `grads` (when given)
    /// and returns the gradient with respect to the network input.
    pub fn backward(&self, cache: &MlpCache, output_grad: ArrayView2<'_, f64>, grads: Option<&mut [f64]>) -> Array2<f64> {
        let mut grads = grads;
        if let Some(g) = grads.as_deref() {
            assert_eq!(g.len(), self.params.len());
        }
        let mut delta = output_grad.to_owned();
        let mut offset_end = self.params.len();
        for l in (0..self.n_layers()).rev() {
            let (w, _) = self.layer(l);
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let start = offset_end - fan_out * (fan_in + 1);
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g[start..offset_end].split_at_mut(fan_out * fan_in);
                let dw = delta.t().dot(&cache.inputs[l]);
                for (acc, v) in gw.iter_mut().zip(dw.iter()) {
                    *acc += v;
                }
                for (acc, v) in gb.iter_mut().zip(delta.sum_axis(Axis(0)).iter()) {
                    *acc += v;
                }
            }
            let mut dx = delta.dot(&w);
            if l > 0 {
                dx.zip_mut_with(&cache.pre[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = dx;
            offset_end = start;
        }
        delta
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straightforward loop implementation of the same network.
    fn reference_forward(sizes: &[usize], params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut y = vec![0.0; fan_out];
            for (o, yo) in y.iter_mut().enumerate() {
                let mut acc = params[offset + fan_out * fan_in + o];
                for i in 0..fan_in {
                    acc += params[offset + o * fan_in + i] * x[i];
                }
                *yo = if l + 2 < sizes.len() { acc.max(0.0) } else { acc };
            }
            offset += fan_out * (fan_in + 1);
            x = y;
        }
        x
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[4, 64, 64, 2]);
        assert_eq!(net.forward_one(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_path_passes_input_through() {
        // input 1 → hidden unit 0 → hidden unit 0 → output, all weights 1
        let sizes = [3, 2, 2, 1];
        let mut net = Mlp::zeros(&sizes);
        let p = net.params_mut();
        p[1] = 1.0; // layer 0, w[0][1]
        let l1 = 2 * 4;
        p[l1] = 1.0; // layer 1, w[0][0]
        let l2 = l1 + 2 * 3;
        p[l2] = 1.0; // layer 2, w[0][0]
        assert_eq!(net.forward_one(&[5.0, 0.75, -3.0]).unwrap(), vec![0.75]);
    }

    #[test]
    fn matches_reference_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sizes = [5, 64, 64, 3];
        let net = Mlp::new(&sizes, &mut rng);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = net.forward_one(&x).unwrap();
            let want = reference_forward(&sizes, net.params(), &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn wrong_input_width() {
        let net = Mlp::zeros(&[4, 8, 1]);
        let x = Array2::<f64>::zeros((2, 3));
        assert!(matches!(net.forward(x.view()), Err(Error::ShapeMismatch { .. })));
        assert!(Mlp::from_params(&[4, 8, 1], vec![0.0; 3]).is_err());
    }

    fn loss(net: &Mlp, x: &Array2<f64>, weights: &Array2<f64>) -> f64 {
        (&net.forward(x.view()).unwrap() * weights).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sizes = [4, 64, 64, 2];
        let mut net = Mlp::new(&sizes, &mut rng);
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.5..1.5));
        let weights = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));

        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let mut grads = vec![0.0; net.n_params()];
        let dx = net.backward(&cache, weights.view(), Some(&mut grads));

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..net.n_params() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = loss(&net, &x, &weights);
            net.params_mut()[i] = orig - h;
            let down = loss(&net, &x, &weights);
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (grads[i] - fd).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");

        // input gradient
        let mut xp = x.clone();
        for r in 0..6 {
            for c in 0..4 {
                let orig = xp[[r, c]];
                xp[[r, c]] = orig + h;
                let up = loss(&net, &xp, &weights);
                xp[[r, c]] = orig - h;
                let down = loss(&net, &xp, &weights);
                xp[[r, c]] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((dx[[r, c]] - fd).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[3, 16, 16, 2], &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let mut grads = vec![0.0; net.n_params()];
        let dx = net.backward(&cache, Array2::zeros((4, 2)).view(), Some(&mut grads));
        assert!(grads.iter().all(|&g| g == 0.0));
        assert!(dx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        // one hidden unit with negative bias never activates for this input
        let sizes = [1, 1, 1];
        let net = Mlp::from_params(&sizes, vec![1.0, -5.0, 2.0, 0.0]).unwrap();
        let x = array![[1.0]];
        let (out, cache) = net.forward_cached(x.view()).unwrap();
        assert_eq!(out[[0, 0]], 0.0);
        let mut grads = vec![0.0; 4];
        net.backward(&cache, array![[1.0]].view(), Some(&mut grads));
        assert_eq!(&grads[..3], &[0.0, 0.0, 0.0]);
        // output bias still receives gradient
        assert_eq!(grads[3], 1.0);
    }
}
