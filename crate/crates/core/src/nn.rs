//! Small dense networks with hand-written backpropagation, an Adam
//! optimizer and a finite-difference gradient checker.
//!
//! Batches are flat row-major `batch × features` slices. Hidden layers use
//! ReLU; the output layer is linear. Losses are summed over the batch, so a
//! duplicated row contributes exactly twice its gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer computing `W x + b`, with `W` of shape
/// `rows × cols` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Uniform in `±1/sqrt(cols)` for weights and bias.
    pub fn init<R: Rng>(cols: usize, rows: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(cols.max(1) as f64);
        Self {
            rows,
            cols,
            weights: (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: (0..rows).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.rows * self.cols || self.bias.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "layer {}x{} has {} weights and {} biases",
                self.rows,
                self.cols,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], batch: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(batch * self.rows, 0.0);
        for b in 0..batch {
            let xb = &x[b * self.cols..(b + 1) * self.cols];
            let ob = &mut out[b * self.rows..(b + 1) * self.rows];
            for (r, o) in ob.iter_mut().enumerate() {
                let w = &self.weights[r * self.cols..(r + 1) * self.cols];
                *o = self.bias[r] + w.iter().zip(xb).map(|(w, x)| w * x).sum::<f64>();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept for the backward pass: the input and every layer output
/// after its nonlinearity.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    batch: usize,
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |v| v.as_slice())
    }
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        }
        for l in &layers {
            l.check()?;
        }
        for w in layers.windows(2) {
            if w[0].rows != w[1].cols {
                return Err(Error::ShapeMismatch(format!(
                    "layer output {} does not feed input {}",
                    w[0].rows, w[1].cols
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn forward_cached(&self, x: &[f64], batch: usize) -> Result<Cache> {
        if x.len() != batch * self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} for batch {batch} of width {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.forward(&acts[i], batch, &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        Ok(Cache { batch, acts })
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x, batch)?.acts.pop().unwrap_or_default())
    }

    /// Parameter gradient given `d_out = ∂L/∂output`, flat in [`Mlp::params`]
    /// order. Also returns `∂L/∂input`.
    pub fn backward(&self, cache: &Cache, d_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let batch = cache.batch;
        let mut grads = vec![0.0; self.n_params()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.n_params();
        }
        let mut delta = d_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.acts[i];
            let g = &mut grads[offsets[i]..offsets[i] + layer.n_params()];
            let (gw, gb) = g.split_at_mut(layer.weights.len());
            for b in 0..batch {
                let db = &delta[b * layer.rows..(b + 1) * layer.rows];
                let xb = &input[b * layer.cols..(b + 1) * layer.cols];
                for (r, &d) in db.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[r] += d;
                    for (w, x) in gw[r * layer.cols..(r + 1) * layer.cols].iter_mut().zip(xb) {
                        *w += d * x;
                    }
                }
            }
            let mut prev = vec![0.0; batch * layer.cols];
            for b in 0..batch {
                let db = &delta[b * layer.rows..(b + 1) * layer.rows];
                let pb = &mut prev[b * layer.cols..(b + 1) * layer.cols];
                for (r, &d) in db.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in pb.iter_mut().zip(&layer.weights[r * layer.cols..(r + 1) * layer.cols]) {
                        *p += d * w;
                    }
                }
            }
            if i > 0 {
                // through the ReLU that produced this layer's input
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        (grads, delta)
    }

    /// Parameters flattened layer by layer, weights before bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Applies `f(param, index)` to every parameter in flat order.
    pub fn update_params(&mut self, mut f: impl FnMut(&mut f64, usize)) {
        let mut i = 0;
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                f(p, i);
                i += 1;
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        net.update_params(|p, i| {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            *p -= lr * (m[i] / c1) / (libm::sqrt(v[i] / c2) + eps);
        });
    }
}

/// Something with flat parameters and an analytic loss gradient.
pub trait Differentiable<B: ?Sized> {
    fn n_params(&self) -> usize;
    fn param_mut(&mut self, i: usize) -> &mut f64;
    fn loss(&self, batch: &B) -> f64;
    fn loss_and_grad(&self, batch: &B) -> (f64, Vec<f64>);
}

pub const FD_STEP: f64 = 1e-5;
pub const MAX_PROBES: usize = 64;

/// Largest relative error between analytic and central-difference gradients
/// over up to `n_probe` (at most 64) randomly chosen parameters. The
/// denominator is floored at `1e-6` so parameters with vanishing gradient do
/// not amplify roundoff.
pub fn gradient_check<B: ?Sized, N: Differentiable<B>, R: Rng>(net: &mut N, batch: &B, n_probe: usize, rng: &mut R) -> f64 {
    let (_, analytic) = net.loss_and_grad(batch);
    let n = net.n_params();
    let k = n_probe.min(MAX_PROBES).min(n);
    let mut worst: f64 = 0.0;
    for i in sample(rng, n, k).into_iter() {
        let orig = *net.param_mut(i);
        *net.param_mut(i) = orig + FD_STEP;
        let up = net.loss(batch);
        *net.param_mut(i) = orig - FD_STEP;
        let down = net.loss(batch);
        *net.param_mut(i) = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Regression probe: an [`Mlp`] with summed squared-error loss
/// `0.5·Σ (f(x) − y)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct MseProbe<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub batch: usize,
}

impl Differentiable<MseProbe<'_>> for Mlp {
    fn n_params(&self) -> usize {
        Mlp::n_params(self)
    }

    fn param_mut(&mut self, i: usize) -> &mut f64 {
        Mlp::param_mut(self, i)
    }

    fn loss(&self, p: &MseProbe<'_>) -> f64 {
        mse_loss_and_grad(self, p.x, p.y, p.batch, false).0
    }

    fn loss_and_grad(&self, p: &MseProbe<'_>) -> (f64, Vec<f64>) {
        mse_loss_and_grad(self, p.x, p.y, p.batch, true)
    }
}

/// Summed `0.5·(f(x) − y)²` and, if requested, its parameter gradient.
pub fn mse_loss_and_grad(net: &Mlp, x: &[f64], y: &[f64], batch: usize, grad: bool) -> (f64, Vec<f64>) {
    let cache = net.forward_cached(x, batch).expect("probe shape");
    let out = cache.output();
    let d: Vec<f64> = out.iter().zip(y).map(|(o, t)| o - t).collect();
    let loss = 0.5 * d.iter().map(|v| v * v).sum::<f64>();
    if !grad {
        return (loss, Vec::new());
    }
    (loss, net.backward(&cache, &d).0)
}
