//! Cognitive semantic augmentation.
//!
//! A covariance predictor `g` turns reference features (one class mean per
//! class) into a diagonal per-class covariance `Σ`. The task networks are
//! trained on the semantic-augmentation loss
//!
//! ```text
//! L_SA = mean_b −log[ exp(z_y) / Σ_c exp(z_c + (λ/2)·(w_c−w_y)ᵀ diag(Σ_y) (w_c−w_y)) ]
//! ```
//!
//! the closed-form upper bound of the expected cross-entropy when features
//! of class `y` are perturbed by `N(0, λΣ_y)`. `g` itself is updated to
//! lower the validation cross-entropy reached after a task step.

mod fedavg;
mod scenario;

pub use fedavg::{average_networks, fedavg_round, local_train, FedAvgConfig};
pub use scenario::{
    prepare_scenario, rounds_to_target, run_csa_end_to_end, run_csa_with_state, run_fedavg_baseline, Adaptation,
    CsaOutcome, CsaScenario, PreparedScenario,
};

use alloc::vec;
use alloc::vec::Vec;

use crate::dtjscc::Codebook;
use crate::nn::{argmax, softmax_cross_entropy, softmax_rows, Activation, ForwardCache, LayerGrad, Network, Tensor};
use crate::{Error, Result};

/// Diagonal covariance per class, stored `C × A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    diag: Tensor,
}

impl CovarianceMatrix {
    pub fn new(diag: Tensor) -> Result<Self> {
        if let Some((index, &value)) = diag.data().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            if value.is_finite() {
                return Err(Error::NegativeCovariance { index, value });
            }
            return Err(Error::NonFinite("covariance"));
        }
        Ok(Self { diag })
    }

    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { diag: Tensor::zeros(&[classes, dim]) }
    }

    pub fn classes(&self) -> usize {
        self.diag.rows()
    }

    pub fn dim(&self) -> usize {
        self.diag.cols()
    }

    pub fn class(&self, c: usize) -> &[f64] {
        self.diag.row(c)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.diag
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaConfig {
    pub lambda: f64,
    pub inner_steps: usize,
    pub inner_learning_rate: f64,
    pub meta_learning_rate: f64,
    /// Fraction of rounds over which `λ` ramps linearly up to its value.
    pub warmup_fraction: f64,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self { lambda: 0.5, inner_steps: 5, inner_learning_rate: 0.01, meta_learning_rate: 0.01, warmup_fraction: 0.25 }
    }
}

impl SaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::param("lambda", self.lambda));
        }
        if !(self.inner_learning_rate >= 0.0) {
            return Err(Error::param("inner_learning_rate", self.inner_learning_rate));
        }
        if !(self.meta_learning_rate >= 0.0) {
            return Err(Error::param("meta_learning_rate", self.meta_learning_rate));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::param("warmup_fraction", self.warmup_fraction));
        }
        Ok(())
    }

    /// `λ` in effect at `round` (0-based) of `rounds`.
    pub fn lambda_at(&self, round: usize, rounds: usize) -> f64 {
        let ramp = libm::ceil(self.warmup_fraction * rounds as f64) as usize;
        if ramp == 0 || round + 1 >= ramp {
            return self.lambda;
        }
        self.lambda * (round + 1) as f64 / ramp as f64
    }
}

/// Loss value and gradients of [`sa_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct SaLoss {
    pub loss: f64,
    pub grad_features: Tensor,
    pub grad_classifier: LayerGrad,
    /// `C × A`, same layout as the covariance.
    pub grad_cov: Tensor,
}

fn linear_classifier(l: &Network) -> Result<()> {
    match l.layers() {
        [layer] if layer.activation == Activation::Identity => Ok(()),
        _ => Err(Error::param("classifier must be one linear layer; layers", l.layers().len() as f64)),
    }
}

fn check_cov(cov: &CovarianceMatrix, classes: usize, dim: usize) -> Result<()> {
    if cov.classes() != classes {
        return Err(Error::DimensionMismatch { expected: classes, found: cov.classes() });
    }
    if cov.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: cov.dim() });
    }
    Ok(())
}

/// Logits with the augmentation penalty added to every competing class.
fn augmented_logits(cache: &ForwardCache, labels: &[usize], l: &Network, cov: &CovarianceMatrix, lambda: f64) -> Tensor {
    let mut z = cache.output.clone();
    if lambda > 0.0 {
        let w = &l.layers()[0].weights;
        for (r, &y) in labels.iter().enumerate() {
            let wy = w.row(y);
            let sy = cov.class(y);
            let zr = z.row_mut(r);
            for (c, zc) in zr.iter_mut().enumerate() {
                if c == y {
                    continue;
                }
                let pen: f64 = w.row(c).iter().zip(wy).zip(sy).map(|((a, b), s)| (a - b) * (a - b) * s).sum();
                *zc += 0.5 * lambda * pen;
            }
        }
    }
    z
}

/// Semantic-augmentation loss for a linear classifier `l` (one identity
/// layer, weights `C × A`).
///
/// With `λ = 0` or `Σ = 0` this is computed by exactly the same operations
/// as [`softmax_cross_entropy`] followed by the classifier backward pass.
pub fn sa_loss(features: &Tensor, labels: &[usize], l: &Network, cov: &CovarianceMatrix, lambda: f64) -> Result<SaLoss> {
    if !(lambda >= 0.0) {
        return Err(Error::param("lambda", lambda));
    }
    linear_classifier(l)?;
    check_cov(cov, l.output_dim(), l.input_dim())?;
    let cache = l.forward_cached(features)?;
    let z = augmented_logits(&cache, labels, l, cov, lambda);
    let (loss, dz) = softmax_cross_entropy(&z, labels)?;
    let mut grads = l.backward(&cache, &dz)?;
    let mut grad_cov = Tensor::zeros(&[cov.classes(), cov.dim()]);
    if lambda > 0.0 {
        let w = &l.layers()[0].weights;
        let a = w.cols();
        let gw = &mut grads.layers[0].weights;
        for (r, &y) in labels.iter().enumerate() {
            let sy = cov.class(y);
            for c in 0..l.output_dim() {
                if c == y {
                    continue;
                }
                // dz[r][c] is p_c / B for a competing class.
                let coef = dz.row(r)[c];
                for k in 0..a {
                    let d = w.row(c)[k] - w.row(y)[k];
                    let gk = coef * lambda * d * sy[k];
                    gw[c * a + k] += gk;
                    gw[y * a + k] -= gk;
                    grad_cov.row_mut(y)[k] += coef * 0.5 * lambda * d * d;
                }
            }
        }
    }
    let grad_classifier = grads.layers.pop().expect("one layer");
    Ok(SaLoss { loss, grad_features: grads.input, grad_classifier, grad_cov })
}

/// Directional derivative of `∂L_SA/∂Σ` when the classifier parameters
/// move along `direction`: `d/dε ∂L_SA/∂Σ (W + ε·V, b + ε·v)` at `ε = 0`.
///
/// By symmetry of mixed partials this is `∂/∂Σ [⟨∇_{W,b} L_SA, (V, v)⟩]`,
/// which is what the covariance predictor's one-step lookahead needs.
pub fn sa_cov_directional(
    features: &Tensor,
    labels: &[usize],
    l: &Network,
    cov: &CovarianceMatrix,
    lambda: f64,
    direction: &LayerGrad,
) -> Result<Tensor> {
    linear_classifier(l)?;
    check_cov(cov, l.output_dim(), l.input_dim())?;
    let (classes, a) = (l.output_dim(), l.input_dim());
    let mut out = Tensor::zeros(&[classes, a]);
    if lambda == 0.0 {
        return Ok(out);
    }
    let cache = l.forward_cached(features)?;
    let z = augmented_logits(&cache, labels, l, cov, lambda);
    let p = softmax_rows(&z);
    let w = &l.layers()[0].weights;
    let v = &direction.weights;
    let inv_b = 1.0 / features.rows() as f64;
    let mut zdot = vec![0.0; classes];
    for (r, &y) in labels.iter().enumerate() {
        let x = features.row(r);
        let sy = cov.class(y);
        for c in 0..classes {
            let vc = &v[c * a..(c + 1) * a];
            let mut zd = direction.biases[c] + crate::nn::dot(vc, x);
            if c != y {
                let vy = &v[y * a..(y + 1) * a];
                for k in 0..a {
                    zd += lambda * (w.row(c)[k] - w.row(y)[k]) * (vc[k] - vy[k]) * sy[k];
                }
            }
            zdot[c] = zd;
        }
        let pr = p.row(r);
        let mean_zdot: f64 = pr.iter().zip(&zdot).map(|(pc, zd)| pc * zd).sum();
        let vy = &v[y * a..(y + 1) * a];
        for c in 0..classes {
            if c == y {
                continue;
            }
            let pdot = pr[c] * (zdot[c] - mean_zdot);
            let vc = &v[c * a..(c + 1) * a];
            for k in 0..a {
                let d = w.row(c)[k] - w.row(y)[k];
                let dd = vc[k] - vy[k];
                out.row_mut(y)[k] += inv_b * 0.5 * lambda * (pdot * d * d + pr[c] * 2.0 * d * dd);
            }
        }
    }
    Ok(out)
}

/// Covariance-predictor input: one row per class, the class mean of the
/// reference features followed by the class one-hot. Classes missing from
/// the reference get a zero mean.
pub fn covariance_input(reference: &Tensor, labels: &[usize], classes: usize) -> Result<Tensor> {
    crate::nn::check_labels(labels, reference.rows(), classes)?;
    let means = crate::dataset::class_means(reference, labels, classes);
    let a = reference.cols();
    let mut input = Tensor::zeros(&[classes, a + classes]);
    for c in 0..classes {
        let row = input.row_mut(c);
        row[..a].copy_from_slice(&means[c]);
        row[a + c] = 1.0;
    }
    Ok(input)
}

/// `Σ = g(class means of the reference)`. Non-negative because `g` ends in
/// a softplus.
pub fn predict_covariance(g: &Network, reference: &Tensor, labels: &[usize], classes: usize) -> Result<CovarianceMatrix> {
    CovarianceMatrix::new(g.forward(&covariance_input(reference, labels, classes)?)?)
}

/// Covariance predictor for `A`-dimensional features and `C` classes.
pub fn covariance_network<R: rand::Rng + ?Sized>(dim: usize, classes: usize, hidden: usize, rng: &mut R) -> Result<Network> {
    Network::mlp(&[dim + classes, hidden, hidden, dim], Activation::Relu, Activation::Softplus, rng)
}

/// Encoder `f`, optional quantizer and linear classifier `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub f: Network,
    pub l: Network,
    /// When present, encoder outputs are snapped to their nearest codeword
    /// and gradients pass straight through.
    pub codebook: Option<Codebook>,
    pub commitment_weight: f64,
}

impl Pipeline {
    /// Encoder cache and the (possibly quantized) features fed to `l`.
    pub fn features(&self, x: &Tensor) -> Result<(ForwardCache, Tensor)> {
        let enc = self.f.forward_cached(x)?;
        let q = match &self.codebook {
            Some(cb) => snap(&enc.output, cb),
            None => enc.output.clone(),
        };
        Ok((enc, q))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let (_, q) = self.features(x)?;
        let logits = self.l.forward(&q)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    pub fn cross_entropy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let (_, q) = self.features(x)?;
        Ok(softmax_cross_entropy(&self.l.forward(&q)?, labels)?.0)
    }

    /// Backpropagates a feature gradient into `f` (adding the commitment
    /// pull when quantizing) and steps it.
    pub(crate) fn step_encoder(&mut self, enc: &ForwardCache, q: &Tensor, mut grad_q: Tensor, lr: f64) -> Result<()> {
        if self.codebook.is_some() && self.commitment_weight > 0.0 {
            let scale = 2.0 * self.commitment_weight / q.rows() as f64;
            for ((g, z), qv) in grad_q.data_mut().iter_mut().zip(enc.output.data()).zip(q.data()) {
                *g += scale * (z - qv);
            }
        }
        let ge = self.f.backward(enc, &grad_q)?;
        self.f.apply_gradients(&ge, lr);
        Ok(())
    }
}

/// Replaces every block of every row by its nearest codeword.
pub fn snap(z: &Tensor, codebook: &Codebook) -> Tensor {
    let mut q = z.clone();
    let d = codebook.dim();
    for r in 0..q.rows() {
        for block in q.row_mut(r).chunks_mut(d) {
            let i = codebook.nearest(block);
            block.copy_from_slice(codebook.entry(i));
        }
    }
    q
}

/// One side's meta-learner: its pipeline plus covariance predictor `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub g: Network,
    pub pipeline: Pipeline,
}

/// Labeled inputs.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a Tensor,
    pub labels: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaReport {
    pub val_ce_before: f64,
    pub val_ce_after: f64,
    /// SA loss of the last inner step.
    pub sa_loss: f64,
    pub covariance: CovarianceMatrix,
}

/// One round of covariance-predictor meta-learning.
///
/// 1. `Σ = g(reference)`.
/// 2. `inner_steps` SGD steps of `f` and `l` on `L_SA(train; Σ)`.
/// 3. `g` steps along `∂L_CE(val)/∂Σ` through the last inner step only:
///    with `θ' = θ − η∇_θL_SA(θ, Σ)` for the classifier parameters `θ`,
///    `∂L_CE(val; θ')/∂Σ = −η·∂/∂Σ⟨∇_θL_SA, ∇_θ'L_CE⟩`. Earlier inner steps
///    and the encoder's dependence on `Σ` are held constant.
///
/// Aborts with [`Error::Divergence`] if the SA loss exceeds ten times its
/// initial value.
pub fn meta_step(learner: &mut Learner, reference: Batch<'_>, train: Batch<'_>, val: Batch<'_>, cfg: &SaConfig, lambda: f64) -> Result<MetaReport> {
    cfg.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::param("lambda", lambda));
    }
    let classes = learner.pipeline.l.output_dim();
    let g_input = covariance_input(reference.inputs, reference.labels, classes)?;
    let g_cache = learner.g.forward_cached(&g_input)?;
    let cov = CovarianceMatrix::new(g_cache.output.clone())?;
    let val_ce_before = learner.pipeline.cross_entropy(val.inputs, val.labels)?;

    let lr = cfg.inner_learning_rate;
    let mut initial = None;
    let mut last: Option<(Tensor, Network, f64)> = None;
    for _ in 0..cfg.inner_steps {
        let (enc, q) = learner.pipeline.features(train.inputs)?;
        let out = sa_loss(&q, train.labels, &learner.pipeline.l, &cov, lambda)?;
        let first = *initial.get_or_insert(out.loss);
        if !out.loss.is_finite() || out.loss > 10.0 * first {
            return Err(Error::Divergence { loss: out.loss, initial: first });
        }
        let l_before = learner.pipeline.l.clone();
        learner.pipeline.l.apply_layer_gradients(core::slice::from_ref(&out.grad_classifier), lr);
        learner.pipeline.step_encoder(&enc, &q, out.grad_features, lr)?;
        last = Some((q, l_before, out.loss));
    }

    let (_, qv) = learner.pipeline.features(val.inputs)?;
    let lv = learner.pipeline.l.forward_cached(&qv)?;
    let (val_ce_after, gv) = softmax_cross_entropy(&lv.output, val.labels)?;
    let mut sa = 0.0;
    if let Some((q, l_before, loss)) = last {
        sa = loss;
        if cfg.meta_learning_rate > 0.0 && lambda > 0.0 {
            let v = learner.pipeline.l.backward(&lv, &gv)?.layers.pop().expect("one layer");
            let mut dsigma = sa_cov_directional(&q, train.labels, &l_before, &cov, lambda, &v)?;
            dsigma.data_mut().iter_mut().for_each(|x| *x *= -lr);
            let gg = learner.g.backward(&g_cache, &dsigma)?;
            learner.g.apply_gradients(&gg, cfg.meta_learning_rate);
        }
    }
    if !learner.g.is_finite() || !learner.pipeline.f.is_finite() || !learner.pipeline.l.is_finite() {
        return Err(Error::NonFinite("meta step"));
    }
    Ok(MetaReport { val_ce_before, val_ce_after, sa_loss: sa, covariance: cov })
}

/// Which node a round-log row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Sat2,
    Ut,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Sat2 => "sat2",
            Side::Ut => "ut",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "sat2" => Some(Side::Sat2),
            "ut" => Some(Side::Ut),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub side: Side,
    pub top1: f64,
    pub ce_loss: f64,
    pub sa_loss: f64,
    pub bits_tx: u64,
}
