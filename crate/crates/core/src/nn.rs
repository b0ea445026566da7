//! Minimal dense neural networks with exact reverse-mode gradients.
//!
//! The encoders, classifiers and covariance predictors of the semantic
//! pipeline are all small multilayer perceptrons built from [`Dense`]
//! layers. Arithmetic is `f64` throughout so finite-difference checks stay
//! meaningful.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::math::{exp, log_sum_exp, sigmoid, softplus, sqrt};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Row-major `f64` tensor. Most operations here treat it as a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch { expected: n, found: data.len() });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Stacks equal-length rows into a `rows × cols` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { shape: vec![rows.len(), cols], data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            return 1;
        }
        self.shape[1..].iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Rows `idx` gathered into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor { shape: vec![idx.len(), c], data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(pre),
        }
    }
}

/// Affine layer `y = act(W·x + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Tensor,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor::zeros(&[outputs, inputs]),
            biases: vec![0.0; outputs],
            activation,
        }
    }

    /// Glorot-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = sqrt(6.0 / (inputs + outputs) as f64);
        let mut layer = Self::zeros(inputs, outputs, activation);
        for w in layer.weights.data_mut() {
            *w = rng.random_range(-limit..=limit);
        }
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn affine(&self, input: &Tensor) -> Tensor {
        let (b, n_in, n_out) = (input.rows(), self.inputs(), self.outputs());
        let mut out = Tensor::zeros(&[b, n_out]);
        let w = self.weights.data();
        for r in 0..b {
            let x = input.row(r);
            let y = out.row_mut(r);
            for o in 0..n_out {
                let wr = &w[o * n_in..(o + 1) * n_in];
                y[o] = self.biases[o] + dot(wr, x);
            }
        }
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of a scalar loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// Gradient with respect to the network input.
    pub input: Tensor,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.biases);
        }
        v
    }
}

/// Per-layer inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    pub output: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero rate is allowed: it freezes parameters, which tests rely on.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", 0.0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
}

impl Network {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network layers"));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::DimensionMismatch { expected: w[0].outputs(), found: w[1].inputs() });
            }
        }
        for l in &layers {
            if l.biases.len() != l.outputs() {
                return Err(Error::DimensionMismatch { expected: l.outputs(), found: l.biases.len() });
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialized MLP through `sizes`, `hidden` activation between
    /// layers and `output` on the last.
    pub fn mlp<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Empty("mlp sizes"));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::glorot(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    /// Single linear layer with identity weights.
    pub fn identity(dim: usize) -> Self {
        let mut l = Dense::zeros(dim, dim, Activation::Identity);
        for i in 0..dim {
            l.weights.data_mut()[i * dim + i] = 1.0;
        }
        Self { layers: vec![l] }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data().len() + l.biases.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(l.weights.data());
            v.extend_from_slice(&l.biases);
        }
        v
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch { expected: self.param_count(), found: params.len() });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            if index < nw {
                return &mut l.weights.data_mut()[index];
            }
            index -= nw;
            if index < l.biases.len() {
                return &mut l.biases[index];
            }
            index -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: input.cols() });
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for l in &self.layers {
            let mut z = l.affine(&x);
            for v in z.data_mut() {
                *v = l.activation.apply(*v);
            }
            x = z;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for l in &self.layers {
            let z = l.affine(&x);
            let mut a = z.clone();
            for v in a.data_mut() {
                *v = l.activation.apply(*v);
            }
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok(ForwardCache { inputs, pre, output: x })
    }

    /// Reverse-mode pass from `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor) -> Result<Gradients> {
        if grad_output.shape() != cache.output.shape() {
            return Err(Error::DimensionMismatch { expected: cache.output.data().len(), found: grad_output.data().len() });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[k];
            for (gv, &z) in g.data_mut().iter_mut().zip(pre.data()) {
                *gv *= l.activation.derivative(z);
            }
            let x = &cache.inputs[k];
            let (b, n_in, n_out) = (x.rows(), l.inputs(), l.outputs());
            let mut dw = vec![0.0; n_out * n_in];
            let mut db = vec![0.0; n_out];
            let mut dx = Tensor::zeros(&[b, n_in]);
            let w = l.weights.data();
            for r in 0..b {
                let gr = g.row(r);
                let xr = x.row(r);
                let dxr = dx.row_mut(r);
                for o in 0..n_out {
                    let go = gr[o];
                    if go == 0.0 {
                        continue;
                    }
                    db[o] += go;
                    let dwo = &mut dw[o * n_in..(o + 1) * n_in];
                    let wo = &w[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        dwo[i] += go * xr[i];
                        dxr[i] += go * wo[i];
                    }
                }
            }
            layers.push(LayerGrad { weights: dw, biases: db });
            g = dx;
        }
        layers.reverse();
        Ok(Gradients { layers, input: g })
    }

    /// Plain SGD: `θ ← θ − η·∂L/∂θ`.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        self.apply_layer_gradients(&grads.layers, learning_rate);
    }

    pub fn apply_layer_gradients(&mut self, grads: &[LayerGrad], learning_rate: f64) {
        for (l, g) in self.layers.iter_mut().zip(grads) {
            for (w, d) in l.weights.data_mut().iter_mut().zip(&g.weights) {
                *w -= learning_rate * d;
            }
            for (b, d) in l.biases.iter_mut().zip(&g.biases) {
                *b -= learning_rate * d;
            }
        }
    }

    /// Backpropagates `loss_grad` (gradient at the output for `input`) and
    /// takes one SGD step. Returns the gradient at the input.
    pub fn backward_and_step(&mut self, input: &Tensor, loss_grad: &Tensor, cfg: &TrainConfig) -> Result<Tensor> {
        cfg.validate()?;
        let cache = self.forward_cached(input)?;
        let grads = self.backward(&cache, loss_grad)?;
        self.apply_gradients(&grads, cfg.learning_rate);
        Ok(grads.input)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = exp(*x - m);
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::DimensionMismatch { expected: rows, found: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label: bad, classes });
    }
    Ok(())
}

/// Mean cross-entropy over the batch and its gradient `(softmax − onehot)/B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = (logits.rows(), logits.cols());
    check_labels(labels, b, c)?;
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    let mut grad = Tensor::zeros(&[b, c]);
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for r in 0..b {
        let z = logits.row(r);
        let lse = log_sum_exp(z);
        loss += lse - z[labels[r]];
        let g = grad.row_mut(r);
        for k in 0..c {
            g[k] = exp(z[k] - lse) * inv_b;
        }
        g[labels[r]] -= inv_b;
    }
    Ok((loss * inv_b, grad))
}

/// Minibatch SGD on softmax cross-entropy. Returns mean loss per epoch.
pub fn train_classifier(net: &mut Network, inputs: &Tensor, labels: &[usize], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_labels(labels, inputs.rows(), net.output_dim())?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = inputs.gather_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let cache = net.forward_cached(&x)?;
            let (loss, g) = softmax_cross_entropy(&cache.output, &y)?;
            let grads = net.backward(&cache, &g)?;
            net.apply_gradients(&grads, cfg.learning_rate);
            total += loss * chunk.len() as f64;
        }
        history.push(total / inputs.rows().max(1) as f64);
    }
    if !net.is_finite() {
        return Err(Error::NonFinite("classifier training"));
    }
    Ok(history)
}

/// Relative-error denominator floor: below this magnitude both gradients
/// are treated as zero and the difference is compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probes: usize,
    /// Set when no parameter was probed and the zero error is vacuous.
    pub vacuous: bool,
}

#[inline]
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares analytic parameter gradients against central differences at
/// `probes` randomly chosen parameters.
///
/// `loss_fn` maps the network output to `(loss, dloss/doutput)`.
pub fn gradient_check<F, R>(
    net: &Network,
    loss_fn: F,
    input: &Tensor,
    epsilon: f64,
    probes: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
    R: Rng + ?Sized,
{
    if probes == 0 {
        return Ok(GradCheckReport { max_relative_error: 0.0, probes: 0, vacuous: true });
    }
    let cache = net.forward_cached(input)?;
    let (_, g) = loss_fn(&cache.output)?;
    let analytic = net.backward(&cache, &g)?.flat();
    let mut probe_net = net.clone();
    let mut worst: f64 = 0.0;
    let n = net.param_count();
    for _ in 0..probes {
        let i = rng.random_range(0..n);
        let orig = *probe_net.param_mut(i);
        *probe_net.param_mut(i) = orig + epsilon;
        let up = loss_fn(&probe_net.forward(input)?)?.0;
        *probe_net.param_mut(i) = orig - epsilon;
        let down = loss_fn(&probe_net.forward(input)?)?.0;
        *probe_net.param_mut(i) = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(GradCheckReport { max_relative_error: worst, probes, vacuous: false })
}

/// `ln` of the predicted probability of each label; handy for reporting.
pub fn log_likelihoods(logits: &Tensor, labels: &[usize]) -> Vec<f64> {
    (0..logits.rows())
        .map(|r| {
            let z = logits.row(r);
            z[labels[r]] - log_sum_exp(z)
        })
        .collect()
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
