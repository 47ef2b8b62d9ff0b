//! Network parameters, forward pass and backpropagation.
//!
//! All trainable parameters live in one flat vector, laid out as
//! `W1, b1, [gamma1, beta1], W2, b2, [gamma2, beta2], W3, b3` with weight
//! matrices stored column-major (`fan_in x fan_out`). Batches are matrices
//! with one row per sample.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::NeuralError;

/// Decay of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
    LeakyRelu,
    /// Identity; not part of the search space, kept for diagnostics.
    Linear,
}

impl Activation {
    pub const SEARCHABLE: [Activation; 5] =
        [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Softplus, Activation::LeakyRelu];

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative with respect to the pre-activation. At the kink of the
    /// piecewise-linear activations the left derivative is used.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Softplus => sigmoid(z),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn has_kink(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitScheme {
    /// Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    UniformScaled,
    /// Glorot normal: N(0, 2 / (fan_in + fan_out)).
    NormalScaled,
    /// Orthonormal rows or columns from a QR factorization.
    Orthogonal,
}

impl InitScheme {
    pub const ALL: [InitScheme; 3] = [InitScheme::UniformScaled, InitScheme::NormalScaled, InitScheme::Orthogonal];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub inputs: usize,
    pub hidden: [usize; 2],
    pub outputs: usize,
    pub batch_norm: bool,
}

/// Offsets of each parameter group inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Slots {
    pub w: [usize; 3],
    pub b: [usize; 3],
    pub gamma: [usize; 2],
    pub beta: [usize; 2],
    pub total: usize,
}

impl Shape {
    pub fn dims(&self) -> [usize; 4] {
        [self.inputs, self.hidden[0], self.hidden[1], self.outputs]
    }

    pub(crate) fn slots(&self) -> Slots {
        let d = self.dims();
        let mut at = 0;
        let mut take = |n: usize| {
            let s = at;
            at += n;
            s
        };
        let mut s = Slots { w: [0; 3], b: [0; 3], gamma: [0; 2], beta: [0; 2], total: 0 };
        for l in 0..3 {
            s.w[l] = take(d[l] * d[l + 1]);
            s.b[l] = take(d[l + 1]);
            if l < 2 && self.batch_norm {
                s.gamma[l] = take(d[l + 1]);
                s.beta[l] = take(d[l + 1]);
            }
        }
        s.total = at;
        s
    }

    pub fn param_count(&self) -> usize {
        self.slots().total
    }

    /// Index ranges of the weight matrices (the L1-penalized parameters).
    pub fn weight_ranges(&self) -> [std::ops::Range<usize>; 3] {
        let s = self.slots();
        let d = self.dims();
        std::array::from_fn(|l| s.w[l]..s.w[l] + d[l] * d[l + 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub shape: Shape,
    pub activation: Activation,
    pub params: Vec<f64>,
    pub running_mean: [Vec<f64>; 2],
    pub running_var: [Vec<f64>; 2],
}

/// Per hidden layer intermediate values kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct HiddenCache {
    pub z: DMatrix<f64>,
    /// Normalized activations, batch norm only.
    pub xhat: Option<DMatrix<f64>>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub mask: Option<DMatrix<f64>>,
    pub out: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    pub hidden: [HiddenCache; 2],
    pub output: DMatrix<f64>,
}

impl Mlp {
    pub fn new(shape: Shape, activation: Activation, init: InitScheme, rng: &mut ChaCha8Rng) -> Self {
        let s = shape.slots();
        let d = shape.dims();
        let mut params = vec![0.0; s.total];
        for l in 0..3 {
            let (fan_in, fan_out) = (d[l], d[l + 1]);
            let w = init_matrix(init, fan_in, fan_out, rng);
            params[s.w[l]..s.w[l] + fan_in * fan_out].copy_from_slice(w.as_slice());
            if l < 2 && shape.batch_norm {
                params[s.gamma[l]..s.gamma[l] + fan_out].fill(1.0);
            }
        }
        let ones = |n: usize| vec![1.0; n];
        Self {
            shape,
            activation,
            params,
            running_mean: [vec![0.0; d[1]], vec![0.0; d[2]]],
            running_var: [ones(d[1]), ones(d[2])],
        }
    }

    pub(crate) fn weight(&self, l: usize) -> DMatrixView<'_, f64> {
        let s = self.shape.slots();
        let d = self.shape.dims();
        DMatrixView::from_slice(&self.params[s.w[l]..s.w[l] + d[l] * d[l + 1]], d[l], d[l + 1])
    }

    fn group(&self, start: usize, len: usize) -> &[f64] {
        &self.params[start..start + len]
    }

    /// Inference: batch norm uses running statistics and dropout is off.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NeuralError> {
        self.check_input(x)?;
        let s = self.shape.slots();
        let d = self.shape.dims();
        let mut h = x.clone();
        for l in 0..2 {
            let mut a = self.affine(&h, l);
            a.apply(|v| *v = self.activation.apply(*v));
            if self.shape.batch_norm {
                let (g, b) = (self.group(s.gamma[l], d[l + 1]), self.group(s.beta[l], d[l + 1]));
                for j in 0..d[l + 1] {
                    let inv = 1.0 / (self.running_var[l][j] + BN_EPSILON).sqrt();
                    let m = self.running_mean[l][j];
                    a.column_mut(j).apply(|v| *v = g[j] * (*v - m) * inv + b[j]);
                }
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFinite(l + 1));
            }
            h = a;
        }
        let y = self.affine(&h, 2);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFinite(3));
        }
        Ok(y)
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<(), NeuralError> {
        if x.ncols() != self.shape.inputs {
            return Err(NeuralError::Dimension { expected: self.shape.inputs, got: x.ncols() });
        }
        Ok(())
    }

    fn affine(&self, h: &DMatrix<f64>, l: usize) -> DMatrix<f64> {
        let s = self.shape.slots();
        let d = self.shape.dims();
        let mut z = h * self.weight(l);
        let b = self.group(s.b[l], d[l + 1]);
        for (j, bj) in b.iter().enumerate() {
            z.column_mut(j).add_scalar_mut(*bj);
        }
        z
    }

    /// Training-mode forward pass: batch norm uses batch statistics and
    /// dropout (inverted, rescaled by 1/(1-rate)) is applied when
    /// `dropout > 0`.
    pub(crate) fn forward_train(
        &self,
        x: &DMatrix<f64>,
        dropout: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache, NeuralError> {
        self.check_input(x)?;
        let s = self.shape.slots();
        let d = self.shape.dims();
        let n = x.nrows();
        let mut rng = rng;
        let mut caches: Vec<HiddenCache> = Vec::with_capacity(2);
        let mut h = x.clone();
        for l in 0..2 {
            let z = self.affine(&h, l);
            let mut a = z.map(|v| self.activation.apply(v));
            let width = d[l + 1];
            let (mut xhat, mut inv_std) = (None, Vec::new());
            let (mut batch_mean, mut batch_var) = (Vec::new(), Vec::new());
            if self.shape.batch_norm {
                let (g, b) = (self.group(s.gamma[l], width), self.group(s.beta[l], width));
                let mut xh = a.clone();
                for j in 0..width {
                    let col = a.column(j);
                    let mean = col.sum() / n as f64;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + BN_EPSILON).sqrt();
                    xh.column_mut(j).apply(|v| *v = (*v - mean) * inv);
                    batch_mean.push(mean);
                    batch_var.push(var);
                    inv_std.push(inv);
                    for i in 0..n {
                        a[(i, j)] = g[j] * xh[(i, j)] + b[j];
                    }
                }
                xhat = Some(xh);
            }
            let mut mask = None;
            if dropout > 0.0 {
                let r = rng.as_deref_mut().expect("dropout needs a random source");
                let keep = 1.0 / (1.0 - dropout);
                let m = DMatrix::from_fn(n, width, |_, _| if r.random::<f64>() < dropout { 0.0 } else { keep });
                a.component_mul_assign(&m);
                mask = Some(m);
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFinite(l + 1));
            }
            h = a.clone();
            caches.push(HiddenCache { z, xhat, inv_std, batch_mean, batch_var, mask, out: a });
        }
        let output = self.affine(&h, 2);
        if output.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFinite(3));
        }
        let second = caches.pop().expect("two hidden layers");
        let first = caches.pop().expect("two hidden layers");
        Ok(ForwardCache { hidden: [first, second], output })
    }

    /// Gradient of a loss with respect to all parameters, given the gradient
    /// `dy` of that loss with respect to the network output.
    pub(crate) fn backward(&self, x: &DMatrix<f64>, cache: &ForwardCache, dy: &DMatrix<f64>) -> Vec<f64> {
        let s = self.shape.slots();
        let d = self.shape.dims();
        let n = x.nrows() as f64;
        let mut grad = vec![0.0; s.total];

        let mut delta = dy.clone();
        for l in (0..3).rev() {
            let input = if l == 0 { x } else { &cache.hidden[l - 1].out };
            let gw = input.transpose() * &delta;
            grad[s.w[l]..s.w[l] + d[l] * d[l + 1]].copy_from_slice(gw.as_slice());
            for j in 0..d[l + 1] {
                grad[s.b[l] + j] = delta.column(j).sum();
            }
            if l == 0 {
                break;
            }
            // gradient with respect to the output of hidden layer l-1
            let hc = &cache.hidden[l - 1];
            let mut dh = &delta * self.weight(l).transpose();
            if let Some(m) = &hc.mask {
                dh.component_mul_assign(m);
            }
            let width = d[l];
            if let Some(xh) = &hc.xhat {
                let g = self.group(s.gamma[l - 1], width).to_vec();
                let mut da = DMatrix::zeros(dh.nrows(), width);
                for j in 0..width {
                    let dcol = dh.column(j);
                    let xcol = xh.column(j);
                    grad[s.gamma[l - 1] + j] = dcol.dot(&xcol);
                    grad[s.beta[l - 1] + j] = dcol.sum();
                    // d/da of gamma * (a - mean) * inv_std
                    let dx = dcol * g[j];
                    let sum_dx = dx.sum();
                    let sum_dx_x = dx.dot(&xcol);
                    let scale = hc.inv_std[j] / n;
                    for i in 0..dh.nrows() {
                        da[(i, j)] = scale * (n * dx[i] - sum_dx - xcol[i] * sum_dx_x);
                    }
                }
                dh = da;
            }
            let act = self.activation;
            dh.zip_apply(&hc.z, |g, z| *g *= act.derivative(z));
            delta = dh;
        }
        grad
    }

    /// Moves the running statistics toward a training batch's statistics.
    pub(crate) fn update_running_stats(&mut self, cache: &ForwardCache) {
        if !self.shape.batch_norm {
            return;
        }
        for l in 0..2 {
            let hc = &cache.hidden[l];
            for j in 0..hc.batch_mean.len() {
                self.running_mean[l][j] = BN_MOMENTUM * self.running_mean[l][j] + (1.0 - BN_MOMENTUM) * hc.batch_mean[j];
                self.running_var[l][j] = BN_MOMENTUM * self.running_var[l][j] + (1.0 - BN_MOMENTUM) * hc.batch_var[j];
            }
        }
    }

    /// Sum of absolute weight-matrix entries.
    pub fn weight_l1(&self) -> f64 {
        self.shape.weight_ranges().into_iter().map(|r| self.params[r].iter().map(|w| w.abs()).sum::<f64>()).sum()
    }

    /// Training objective on one batch and its gradient: mean absolute error
    /// over all outputs plus `l1 * sum |W|`.
    pub fn loss_and_gradient(
        &self,
        x: &DMatrix<f64>,
        t: &DMatrix<f64>,
        l1: f64,
        dropout: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>), NeuralError> {
        let (loss, grad, _) = self.loss_gradient_cache(x, t, l1, dropout, rng)?;
        Ok((loss, grad))
    }

    pub(crate) fn loss_gradient_cache(
        &self,
        x: &DMatrix<f64>,
        t: &DMatrix<f64>,
        l1: f64,
        dropout: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>, ForwardCache), NeuralError> {
        let cache = self.forward_train(x, dropout, rng)?;
        let (loss, dy) = mae_with_gradient(&cache.output, t);
        let mut grad = self.backward(x, &cache, &dy);
        if l1 > 0.0 {
            for r in self.shape.weight_ranges() {
                for k in r {
                    grad[k] += l1 * sign(self.params[k]);
                }
            }
        }
        Ok((loss + l1 * self.weight_l1(), grad, cache))
    }

    /// Training-mode objective without gradient.
    pub fn loss(&self, x: &DMatrix<f64>, t: &DMatrix<f64>, l1: f64) -> Result<f64, NeuralError> {
        let cache = self.forward_train(x, 0.0, None)?;
        Ok(mae_with_gradient(&cache.output, t).0 + l1 * self.weight_l1())
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error over all entries and its gradient in `y`.
pub(crate) fn mae_with_gradient(y: &DMatrix<f64>, t: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let count = y.len() as f64;
    let diff = y - t;
    let loss = diff.iter().map(|v| v.abs()).sum::<f64>() / count;
    (loss, diff.map(|v| sign(v) / count))
}

pub fn mean_absolute_error(y: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    (y - t).iter().map(|v| v.abs()).sum::<f64>() / y.len() as f64
}

fn init_matrix(init: InitScheme, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let scale = (fan_in + fan_out) as f64;
    match init {
        InitScheme::UniformScaled => {
            let a = (6.0 / scale).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("finite bounds");
            DMatrix::from_fn(fan_in, fan_out, |_, _| u.sample(rng))
        }
        InitScheme::NormalScaled => {
            let dist = Normal::new(0.0, (2.0 / scale).sqrt()).expect("positive sd");
            DMatrix::from_fn(fan_in, fan_out, |_, _| dist.sample(rng))
        }
        InitScheme::Orthogonal => {
            let (tall, short) = (fan_in.max(fan_out), fan_in.min(fan_out));
            let g = DMatrix::from_fn(tall, short, |_, _| rng.sample::<f64, _>(StandardNormal));
            let qr = g.qr();
            let mut q = qr.q();
            let r = qr.r();
            // sign correction makes the distribution uniform over orthogonal matrices
            for j in 0..short {
                if r[(j, j)] < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            if fan_in >= fan_out {
                q
            } else {
                q.transpose()
            }
        }
    }
}

impl Mlp {
    /// Mutable view of one weight matrix, for tests and hand-built networks.
    pub fn weight_mut(&mut self, l: usize) -> DMatrixViewMut<'_, f64> {
        let s = self.shape.slots();
        let d = self.shape.dims();
        DMatrixViewMut::from_slice(&mut self.params[s.w[l]..s.w[l] + d[l] * d[l + 1]], d[l], d[l + 1])
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.shape.slots();
        let d = self.shape.dims();
        &mut self.params[s.b[l]..s.b[l] + d[l + 1]]
    }
}
