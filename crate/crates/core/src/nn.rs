//! Small dense-network building blocks with flat parameter vectors.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Fully connected network with ReLU hidden layers and a linear output.
///
/// Each layer stores its weight matrix (out × in, column-major) followed by
/// its bias in one flat vector. Batches are matrices with one sample per
/// column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct MlpTape {
    /// Layer inputs; `inputs[0]` is the batch itself.
    inputs: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        for w in sizes.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Self {
        assert_eq!(params.len(), Self::param_count(sizes));
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer(&self, l: usize, offset: usize) -> (DMatrixView<'_, f64>, &[f64]) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = DMatrixView::from_slice(&self.params[offset..offset + n_in * n_out], n_out, n_in);
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        (w, b)
    }

    pub fn forward_tape(&self, x: &DMatrix<f64>) -> MlpTape {
        assert_eq!(x.nrows(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut a = x.clone();
        let mut offset = 0;
        for l in 0..n_layers {
            let (w, b) = self.layer(l, offset);
            let mut z = w * &a;
            for mut col in z.column_iter_mut() {
                for (v, bias) in col.iter_mut().zip(b) {
                    *v += bias;
                }
            }
            if l + 1 < n_layers {
                z.apply(|v| *v = v.max(0.0));
            }
            inputs.push(a);
            a = z;
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        MlpTape { inputs, output: a }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_tape(x).output
    }

    /// Outputs for a single input vector.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let m = DMatrix::from_column_slice(x.len(), 1, x);
        self.forward(&m).as_slice().to_vec()
    }

    /// Gradient of a loss with respect to all parameters, given the loss
    /// gradient with respect to the outputs of the taped pass.
    pub fn backward(&self, tape: &MlpTape, d_out: &DMatrix<f64>) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let mut grads = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.clone();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &tape.inputs[l];
            let dw = &delta * input.transpose();
            let o = offsets[l];
            grads[o..o + n_in * n_out].copy_from_slice(dw.as_slice());
            for (r, g) in grads[o + n_in * n_out..o + n_in * n_out + n_out].iter_mut().enumerate() {
                *g = delta.row(r).sum();
            }
            if l > 0 {
                let (w, _) = self.layer(l, o);
                let mut prev = w.transpose() * &delta;
                // input of layer l is the ReLU output of layer l-1
                prev.zip_apply(input, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        grads
    }
}

/// Maximum relative discrepancy between two gradient vectors, with a floor
/// on the denominator so that coordinates where both are near zero do not
/// dominate.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half_sq_loss(net: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let out = net.forward(x);
        (out - y).iter().map(|v| 0.5 * v * v).sum()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[5, 7, 6, 3], &mut rng);
        for b in net.params_mut().iter_mut() {
            *b += rng.random_range(-0.1..0.1);
        }
        let x = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let tape = net.forward_tape(&x);
        let analytic = net.backward(&tape, &(&tape.output - &y));
        let eps = 1e-5;
        let numeric: Vec<f64> = (0..net.params().len())
            .map(|k| {
                let mut p = net.clone();
                p.params_mut()[k] += eps;
                let up = half_sq_loss(&p, &x, &y);
                p.params_mut()[k] -= 2.0 * eps;
                let down = half_sq_loss(&p, &x, &y);
                (up - down) / (2.0 * eps)
            })
            .collect();
        assert!(max_relative_error(&analytic, &numeric, 1e-6) < 1e-4);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let net = Mlp::from_params(&[3, 4, 2], vec![0.0; Mlp::param_count(&[3, 4, 2])]);
        assert_eq!(net.forward_one(&[1.0, -2.0, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn param_layout_is_weights_then_bias() {
        // 2 -> 1 linear: w = [2, -1], b = 0.5
        let net = Mlp::from_params(&[2, 1], vec![2.0, -1.0, 0.5]);
        assert_eq!(net.forward_one(&[3.0, 4.0]), vec![2.5]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut p = vec![4.0];
        let mut opt = Adam::new(1, 0.05);
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }
}
