//! Discrete task-oriented joint source-channel coding.
//!
//! Image → encoder `f` → feature in `R^A` → split into `G` blocks, each
//! replaced by the index of its nearest codeword → `log2 K`-bit words →
//! modem and fading channel → received indices → codewords → classifier `l`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::{noise_variance_from_psnr, ChannelKind, ChannelModel, FadingMode};
use crate::dataset::MultispectralImage;
use crate::modem::{demodulate_hard, demodulate_hard_per_symbol, modulate, BitStream, Constellation, Modulation};
use crate::nn::{argmax, softmax_cross_entropy, softmax_rows, Activation, Network, Tensor};
use crate::rng::{rng_from_seed, standard_normal, SimRng};
use crate::{Error, Result};

/// Codebook sizes offered as presets.
pub const K_PRESETS: [usize; 3] = [32, 64, 128];

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    entries: Vec<f64>,
}

impl Codebook {
    /// `entries` holds `k` codewords of length `dim`, concatenated.
    pub fn new(k: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        if k < 2 || !k.is_power_of_two() || k > 1 << 16 {
            return Err(Error::param("codebook size", k as f64));
        }
        if dim == 0 {
            return Err(Error::param("codeword dimension", 0.0));
        }
        if entries.len() != k * dim {
            return Err(Error::DimensionMismatch { expected: k * dim, found: entries.len() });
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("codebook entries"));
        }
        Ok(Self { k, dim, entries })
    }

    /// Entries drawn from `N(0, scale²)`.
    pub fn random<R: Rng + ?Sized>(k: usize, dim: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let entries = (0..k * dim).map(|_| scale * standard_normal(rng)).collect();
        Self::new(k, dim, entries)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits_per_index(&self) -> u32 {
        self.k.trailing_zeros()
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    fn entry_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Nearest codeword by squared Euclidean distance; ties go to the
    /// lowest index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.dim);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.k {
            let d: f64 = self.entry(i).iter().zip(x).map(|(e, v)| (e - v) * (e - v)).sum();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn has_duplicates(&self) -> bool {
        (0..self.k).any(|i| (0..i).any(|j| self.entry(i) == self.entry(j)))
    }
}

/// One feature vector per image, stacked `B × A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFeatures {
    tensor: Tensor,
}

impl SemanticFeatures {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if !tensor.is_finite() {
            return Err(Error::NonFinite("semantic features"));
        }
        Ok(Self { tensor })
    }

    pub fn batch(&self) -> usize {
        self.tensor.rows()
    }

    pub fn dim(&self) -> usize {
        self.tensor.cols()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.tensor.row(i)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }
}

pub fn encode(images: &Tensor, f: &Network) -> Result<SemanticFeatures> {
    SemanticFeatures::new(f.forward(images)?)
}

pub fn encode_image(image: &MultispectralImage, f: &Network) -> Result<Vec<f64>> {
    let x = Tensor::from_vec(&[1, image.len()], image.pixels().to_vec())?;
    Ok(encode(&x, f)?.into_tensor().into_data())
}

/// The indices carried by one frame (one image).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedMessage {
    pub indices: Vec<u32>,
    /// Zero bits appended so the frame fills whole symbols.
    pub pad_bits: usize,
    pub frame_id: u64,
    /// Set when the frame was lost to a deep fade; `indices` are then
    /// placeholders and must not be trusted.
    pub erased: bool,
}

fn block_count(dim: usize, codebook: &Codebook) -> Result<usize> {
    if dim % codebook.dim() != 0 {
        return Err(Error::DimensionMismatch { expected: codebook.dim(), found: dim });
    }
    Ok(dim / codebook.dim())
}

pub fn quantize_vector(x: &[f64], codebook: &Codebook) -> Vec<u32> {
    x.chunks(codebook.dim()).map(|b| codebook.nearest(b) as u32).collect()
}

/// One message per feature row, with consecutive frame ids from `first_frame`.
pub fn quantize(features: &SemanticFeatures, codebook: &Codebook, first_frame: u64) -> Result<Vec<QuantizedMessage>> {
    block_count(features.dim(), codebook)?;
    Ok((0..features.batch())
        .map(|r| QuantizedMessage {
            indices: quantize_vector(features.vector(r), codebook),
            pad_bits: 0,
            frame_id: first_frame + r as u64,
            erased: false,
        })
        .collect())
}

pub fn dequantize(msg: &QuantizedMessage, codebook: &Codebook) -> Vec<f64> {
    let mut out = Vec::with_capacity(msg.indices.len() * codebook.dim());
    for &i in &msg.indices {
        out.extend_from_slice(codebook.entry(i as usize));
    }
    out
}

/// Codewords for a batch of messages, `B × (G·dim)`.
pub fn dequantize_batch(msgs: &[QuantizedMessage], codebook: &Codebook) -> Tensor {
    let cols = msgs.first().map_or(0, |m| m.indices.len() * codebook.dim());
    let mut data = Vec::with_capacity(msgs.len() * cols);
    for m in msgs {
        data.extend(dequantize(m, codebook));
    }
    Tensor::from_vec(&[msgs.len(), cols], data).expect("uniform message sizes")
}

/// A modulated link with a fixed noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalLink {
    pub channel: ChannelModel,
    pub constellation: Constellation,
    pub noise_variance: f64,
}

impl DigitalLink {
    /// Noise variance set from `psnr_db` relative to the constellation's
    /// mean symbol energy; `+∞` gives a noiseless link.
    pub fn new(channel: ChannelModel, modulation: Modulation, apsk_gamma: f64, psnr_db: f64) -> Result<Self> {
        let constellation = modulation.constellation(apsk_gamma)?;
        let noise_variance = if psnr_db == f64::INFINITY {
            0.0
        } else if psnr_db.is_finite() {
            noise_variance_from_psnr(psnr_db, constellation.mean_energy())
        } else {
            return Err(Error::param("psnr_db", psnr_db));
        };
        Ok(Self { channel, constellation, noise_variance })
    }

    pub fn noiseless(channel: ChannelModel, modulation: Modulation, apsk_gamma: f64) -> Result<Self> {
        Self::new(channel, modulation, apsk_gamma, f64::INFINITY)
    }
}

pub fn index_bits(msg: &QuantizedMessage, bits_per_index: u32) -> BitStream {
    let mut bits = BitStream::new();
    for &i in &msg.indices {
        bits.push_word(i, bits_per_index);
    }
    bits
}

/// Sends the indices of `msg` over `link` and re-segments what comes out.
///
/// A deep fade (zero gain) yields an erased frame rather than an error.
pub fn transmit<R: Rng + ?Sized>(
    msg: &QuantizedMessage,
    codebook_k: usize,
    link: &DigitalLink,
    rng: &mut R,
) -> Result<QuantizedMessage> {
    if codebook_k < 2 || !codebook_k.is_power_of_two() {
        return Err(Error::param("codebook size", codebook_k as f64));
    }
    let width = codebook_k.trailing_zeros();
    if let Some(&bad) = msg.indices.iter().find(|&&i| i as usize >= codebook_k) {
        return Err(Error::LabelOutOfRange { label: bad as usize, classes: codebook_k });
    }
    let bits = index_bits(msg, width);
    let modulated = modulate(&bits, &link.constellation);
    let pairs = link.channel.transmit(&modulated.symbols, link.noise_variance, rng)?;
    let demod = match link.channel.fading {
        FadingMode::Block => {
            let gain = pairs.first().map_or(crate::ComplexSample::new(1.0, 0.0), |p| p.1);
            let y: Vec<_> = pairs.iter().map(|p| p.0).collect();
            demodulate_hard(&y, gain, &link.constellation)
        }
        FadingMode::PerSymbol => demodulate_hard_per_symbol(&pairs, &link.constellation),
    };
    let mut out = QuantizedMessage {
        indices: vec![0; msg.indices.len()],
        pad_bits: modulated.pad_bits,
        frame_id: msg.frame_id,
        erased: false,
    };
    match demod {
        Ok(mut rx) => {
            rx.truncate(bits.len());
            for (b, slot) in out.indices.iter_mut().enumerate() {
                *slot = rx.read_word(b * width as usize, width);
            }
        }
        Err(Error::DeepFade) => out.erased = true,
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Class probabilities for a received message. Erased frames get the
/// uniform distribution.
pub fn classify(msg: &QuantizedMessage, codebook: &Codebook, l: &Network) -> Result<Vec<f64>> {
    let c = l.output_dim();
    if msg.erased {
        return Ok(vec![1.0 / c as f64; c]);
    }
    let q = dequantize(msg, codebook);
    let logits = l.forward(&Tensor::from_vec(&[1, q.len()], q)?)?;
    Ok(softmax_rows(&logits).into_data())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtJsccConfig {
    /// Feature dimension `A`.
    pub feature_dim: usize,
    pub hidden: usize,
    pub k: usize,
    /// Feature blocks `G`; each block is quantized to its own index.
    pub blocks: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Leading epochs trained without quantization, before the codebook is
    /// seeded by k-means on the encoder outputs.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub codebook_weight: f64,
    pub commitment_weight: f64,
    /// Channel noise injected while training; `+∞` trains noiselessly.
    pub train_psnr_db: f64,
    pub channel: ChannelKind,
    pub rician_factor: f64,
    pub modulation: Modulation,
    pub apsk_gamma: f64,
    /// Epochs without improvement of the best loss before training stops
    /// and is reported as stalled.
    pub patience: usize,
    /// Permute codeword indices after training so that index confusions
    /// likely on the training link land on codewords of the same class.
    pub index_assignment: bool,
}

impl Default for DtJsccConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            hidden: 64,
            k: 32,
            blocks: 1,
            learning_rate: 0.01,
            epochs: 60,
            warmup_epochs: 15,
            batch_size: 32,
            seed: 0,
            codebook_weight: 1.0,
            commitment_weight: 0.25,
            train_psnr_db: 4.0,
            channel: ChannelKind::LeoRician,
            rician_factor: 2.8,
            modulation: Modulation::Apsk16,
            apsk_gamma: crate::modem::DEFAULT_APSK_GAMMA,
            patience: 20,
            index_assignment: true,
        }
    }
}

impl DtJsccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.feature_dim == 0 || self.feature_dim % self.blocks != 0 {
            return Err(Error::param("blocks", self.blocks as f64));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::param("learning_rate", self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", 0.0));
        }
        if self.k < 2 || !self.k.is_power_of_two() {
            return Err(Error::param("k", self.k as f64));
        }
        if !(self.codebook_weight >= 0.0) || !(self.commitment_weight >= 0.0) {
            return Err(Error::param("auxiliary loss weight", self.commitment_weight));
        }
        Ok(())
    }

    pub fn train_link(&self) -> Result<DigitalLink> {
        let channel = ChannelModel::new(self.channel).with_rician_factor(self.rician_factor);
        DigitalLink::new(channel, self.modulation, self.apsk_gamma, self.train_psnr_db)
    }
}

/// Encoder, codebook and classifier of one trained system.
#[derive(Debug, Clone, PartialEq)]
pub struct DtJsccSystem {
    pub encoder: Network,
    pub codebook: Codebook,
    pub classifier: Network,
}

/// Outcome of an evaluation over a noisy link.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    /// `(label, prediction)` per transmitted frame; `None` for erasures.
    pub outcomes: Vec<(usize, Option<usize>)>,
    pub index_errors: usize,
    pub indices_sent: usize,
    pub erased_frames: usize,
    pub bits_sent: usize,
}

impl Evaluation {
    pub fn correct(&self) -> usize {
        self.outcomes.iter().filter(|(y, p)| *p == Some(*y)).count()
    }

    /// Erased frames count as misses.
    pub fn top1(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.correct() as f64 / self.outcomes.len() as f64
    }

    pub fn index_error_rate(&self) -> f64 {
        if self.indices_sent == 0 {
            return 0.0;
        }
        self.index_errors as f64 / self.indices_sent as f64
    }
}

impl DtJsccSystem {
    /// Untrained system: Glorot networks and a small random codebook.
    pub fn init(input_dim: usize, classes: usize, cfg: &DtJsccConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(cfg.seed);
        let encoder = Network::mlp(&[input_dim, cfg.hidden, cfg.feature_dim], Activation::Relu, Activation::Identity, &mut rng)?;
        let classifier = Network::mlp(&[cfg.feature_dim, classes], Activation::Identity, Activation::Identity, &mut rng)?;
        let codebook = Codebook::random(cfg.k, cfg.feature_dim / cfg.blocks, 0.1, &mut rng)?;
        Ok(Self { encoder, codebook, classifier })
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn messages(&self, images: &Tensor) -> Result<Vec<QuantizedMessage>> {
        quantize(&encode(images, &self.encoder)?, &self.codebook, 0)
    }

    /// Predictions with the channel bypassed.
    pub fn predict_noiseless(&self, images: &Tensor) -> Result<Vec<usize>> {
        let q = dequantize_batch(&self.messages(images)?, &self.codebook);
        let logits = self.classifier.forward(&q)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    /// Transmits every image `passes` times over `link`.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        images: &Tensor,
        labels: &[usize],
        link: &DigitalLink,
        passes: usize,
        rng: &mut R,
    ) -> Result<Evaluation> {
        let sent = self.messages(images)?;
        evaluate_messages(&sent, labels, &self.codebook, link, passes, rng, |q| {
            let logits = self.classifier.forward(q)?;
            Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
        })
    }
}

/// Shared evaluation loop: transmit, dequantize, decode with `decoder`.
pub fn evaluate_messages<R, D>(
    sent: &[QuantizedMessage],
    labels: &[usize],
    codebook: &Codebook,
    link: &DigitalLink,
    passes: usize,
    rng: &mut R,
    decoder: D,
) -> Result<Evaluation>
where
    R: Rng + ?Sized,
    D: Fn(&Tensor) -> Result<Vec<usize>>,
{
    if labels.len() != sent.len() {
        return Err(Error::DimensionMismatch { expected: sent.len(), found: labels.len() });
    }
    let mut ev = Evaluation::default();
    let bits_per_frame = |m: &QuantizedMessage| m.indices.len() * codebook.bits_per_index() as usize;
    for _ in 0..passes {
        let mut received = Vec::with_capacity(sent.len());
        for m in sent {
            let rx = transmit(m, codebook.k(), link, rng)?;
            ev.indices_sent += m.indices.len();
            ev.bits_sent += bits_per_frame(m);
            if rx.erased {
                ev.erased_frames += 1;
                ev.index_errors += m.indices.len();
            } else {
                ev.index_errors += m.indices.iter().zip(&rx.indices).filter(|(a, b)| a != b).count();
            }
            received.push(rx);
        }
        let preds = decoder(&dequantize_batch(&received, codebook))?;
        for ((rx, &y), p) in received.iter().zip(labels).zip(preds) {
            ev.outcomes.push((y, if rx.erased { None } else { Some(p) }));
        }
    }
    Ok(ev)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean total loss per epoch (task plus auxiliary terms).
    pub loss_history: Vec<f64>,
    /// Epoch at which training stopped for lack of improvement.
    pub stalled_at: Option<usize>,
}

/// Lloyd's algorithm seeded with distinct random samples.
pub fn kmeans<R: Rng + ?Sized>(points: &Tensor, k: usize, iterations: usize, rng: &mut R) -> Result<Vec<f64>> {
    let (n, d) = (points.rows(), points.cols());
    if n == 0 {
        return Err(Error::Empty("k-means input"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut centers = Vec::with_capacity(k * d);
    for j in 0..k {
        let p = points.row(order[j % n]);
        // Repeated seeds (k > n) are jittered so centers stay distinct.
        let jitter = if j >= n { 1e-3 } else { 0.0 };
        centers.extend(p.iter().map(|v| v + jitter * standard_normal(rng)));
    }
    let mut cb = Codebook::new(k, d, centers)?;
    for _ in 0..iterations {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for r in 0..n {
            let i = cb.nearest(points.row(r));
            counts[i] += 1;
            for (s, v) in sums[i * d..(i + 1) * d].iter_mut().zip(points.row(r)) {
                *s += v;
            }
        }
        for i in 0..k {
            if counts[i] > 0 {
                let inv = 1.0 / counts[i] as f64;
                for (e, s) in cb.entry_mut(i).iter_mut().zip(&sums[i * d..(i + 1) * d]) {
                    *e = s * inv;
                }
            }
        }
    }
    Ok(cb.entries)
}

fn as_blocks(features: &Tensor, dim: usize) -> Tensor {
    let rows = features.data().len() / dim;
    Tensor::from_vec(&[rows, dim], features.data().to_vec()).expect("block reshape")
}

/// Joint training of encoder, codebook and classifier.
///
/// After the warm-up the classifier only ever sees codewords of indices
/// that went through the training link, so it learns the channel's index
/// confusions. Encoder gradients pass straight through the quantizer;
/// the codebook is pulled toward the features it serves and the features
/// toward their codewords (commitment).
pub fn train_dtjscc(
    images: &Tensor,
    labels: &[usize],
    classes: usize,
    cfg: &DtJsccConfig,
) -> Result<(DtJsccSystem, TrainReport)> {
    cfg.validate()?;
    crate::nn::check_labels(labels, images.rows(), classes)?;
    if images.rows() == 0 {
        return Err(Error::Empty("training set"));
    }
    let mut sys = DtJsccSystem::init(images.cols(), classes, cfg)?;
    let mut report = TrainReport::default();
    if cfg.learning_rate == 0.0 {
        return Ok((sys, report));
    }
    let mut rng: SimRng = rng_from_seed(cfg.seed ^ 0xD7_15CC);
    let link = cfg.train_link()?;
    let lr = cfg.learning_rate;
    let n = images.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let block_dim = cfg.feature_dim / cfg.blocks;

    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        if epoch == cfg.warmup_epochs.min(cfg.epochs) {
            let z = sys.encoder.forward(images)?;
            let centers = kmeans(&as_blocks(&z, block_dim), cfg.k, 20, &mut rng)?;
            sys.codebook = Codebook::new(cfg.k, block_dim, centers)?;
        }
        let quantized = epoch >= cfg.warmup_epochs;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut usage = vec![0usize; cfg.k];
        for chunk in order.chunks(cfg.batch_size) {
            let x = images.gather_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let b = chunk.len() as f64;
            let enc = sys.encoder.forward_cached(&x)?;
            let z = &enc.output;
            if !quantized {
                let cls = sys.classifier.forward_cached(z)?;
                let (loss, g) = softmax_cross_entropy(&cls.output, &y)?;
                let gc = sys.classifier.backward(&cls, &g)?;
                sys.classifier.apply_gradients(&gc, lr);
                let ge = sys.encoder.backward(&enc, &gc.input)?;
                sys.encoder.apply_gradients(&ge, lr);
                total += loss * b;
                continue;
            }
            let sent = quantize(&SemanticFeatures::new(z.clone())?, &sys.codebook, 0)?;
            let mut received = Vec::with_capacity(sent.len());
            for m in &sent {
                let mut rx = transmit(m, cfg.k, &link, &mut rng)?;
                if rx.erased {
                    // Nothing to learn from; fall back to the sent indices.
                    rx.indices.clone_from(&m.indices);
                    rx.erased = false;
                }
                received.push(rx);
            }
            let q_rx = dequantize_batch(&received, &sys.codebook);
            let q_tx = dequantize_batch(&sent, &sys.codebook);
            let cls = sys.classifier.forward_cached(&q_rx)?;
            let (loss, g) = softmax_cross_entropy(&cls.output, &y)?;
            let gc = sys.classifier.backward(&cls, &g)?;
            sys.classifier.apply_gradients(&gc, lr);

            let mut dz = gc.input;
            let mut aux = 0.0;
            for ((d, &zv), &qv) in dz.data_mut().iter_mut().zip(z.data()).zip(q_tx.data()) {
                let diff = zv - qv;
                aux += diff * diff;
                *d += 2.0 * cfg.commitment_weight * diff / b;
            }
            let ge = sys.encoder.backward(&enc, &dz)?;
            sys.encoder.apply_gradients(&ge, lr);

            for (r, m) in sent.iter().enumerate() {
                for (blk, &i) in m.indices.iter().enumerate() {
                    usage[i as usize] += 1;
                    let zb = &z.row(r)[blk * block_dim..(blk + 1) * block_dim];
                    let step = lr * cfg.codebook_weight * 2.0 / b;
                    for (e, &zv) in sys.codebook.entry_mut(i as usize).iter_mut().zip(zb) {
                        *e -= step * (*e - zv);
                    }
                }
            }
            total += (loss + (cfg.codebook_weight + cfg.commitment_weight) * aux / b) * b;
        }
        if quantized {
            reset_dead_codes(&mut sys, images, &usage, block_dim, &mut rng)?;
        }
        let mean = total / n as f64;
        if !mean.is_finite() || !sys.encoder.is_finite() || !sys.classifier.is_finite() {
            return Err(Error::NonFinite("dt-jscc training"));
        }
        report.loss_history.push(mean);
        // The quantized phase starts a new loss curve.
        if epoch == cfg.warmup_epochs {
            best = f64::INFINITY;
            since_best = 0;
        }
        if mean < best - 1e-6 {
            best = mean;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stalled_at = Some(epoch);
                break;
            }
        }
    }
    if cfg.index_assignment {
        assign_indices(&mut sys.codebook, &sys.encoder.forward(images)?, labels, classes, &link, 200, &mut rng)?;
    }
    Ok((sys, report))
}

/// Estimates `T[i][j]`, the probability that a lone index `i` arrives as `j`.
pub fn index_transitions<R: Rng + ?Sized>(k: usize, link: &DigitalLink, trials: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let mut t = vec![vec![0.0; k]; k];
    for (i, row) in t.iter_mut().enumerate() {
        let msg = QuantizedMessage { indices: vec![i as u32], pad_bits: 0, frame_id: 0, erased: false };
        let mut kept = 0usize;
        for _ in 0..trials {
            let rx = transmit(&msg, k, link, rng)?;
            if !rx.erased {
                row[rx.indices[0] as usize] += 1.0;
                kept += 1;
            }
        }
        if kept > 0 {
            row.iter_mut().for_each(|v| *v /= kept as f64);
        }
    }
    Ok(t)
}

/// Channel-optimized index assignment by pairwise-swap local search.
///
/// With `N[a][c]` the number of training blocks of class `c` quantized to
/// codeword `a` and `p(a)` the index carrying codeword `a`, maximizes
/// `Σ_ab T[p(a)][p(b)]·Σ_c N[a][c]·N[b][c]/n_b`, the expected count of
/// receptions whose codeword was mostly fed by the sender's class.
/// Returns the permutation applied (`new index = perm[old index]`).
pub fn assign_indices<R: Rng + ?Sized>(
    codebook: &mut Codebook,
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    link: &DigitalLink,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let k = codebook.k();
    let blocks = as_blocks(features, codebook.dim());
    let g = blocks.rows() / labels.len().max(1);
    let mut counts = vec![vec![0.0; classes]; k];
    for r in 0..blocks.rows() {
        counts[codebook.nearest(blocks.row(r))][labels[r / g.max(1)]] += 1.0;
    }
    let mut s = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            let nb: f64 = counts[b].iter().sum();
            if nb > 0.0 {
                s[a][b] = (0..classes).map(|c| counts[a][c] * counts[b][c]).sum::<f64>() / nb;
            }
        }
    }
    let t = index_transitions(k, link, trials, rng)?;
    // pos[a]: index currently carrying codeword a.
    let mut pos: Vec<usize> = (0..k).collect();
    let involving = |pos: &[usize], a: usize, b: usize| -> f64 {
        let mut v = 0.0;
        for x in 0..k {
            v += t[pos[a]][pos[x]] * s[a][x] + t[pos[x]][pos[a]] * s[x][a];
            v += t[pos[b]][pos[x]] * s[b][x] + t[pos[x]][pos[b]] * s[x][b];
        }
        // Terms with both endpoints in {a, b} were counted twice.
        v - (t[pos[a]][pos[b]] * s[a][b] + t[pos[b]][pos[a]] * s[b][a])
            - (t[pos[a]][pos[a]] * s[a][a] + t[pos[b]][pos[b]] * s[b][b])
    };
    for _sweep in 0..20 {
        let mut improved = false;
        for a in 0..k {
            for b in a + 1..k {
                let before = involving(&pos, a, b);
                pos.swap(a, b);
                if involving(&pos, a, b) > before + 1e-9 {
                    improved = true;
                } else {
                    pos.swap(a, b);
                }
            }
        }
        if !improved {
            break;
        }
    }
    let mut entries = vec![0.0; codebook.entries.len()];
    let d = codebook.dim();
    for a in 0..k {
        entries[pos[a] * d..(pos[a] + 1) * d].copy_from_slice(codebook.entry(a));
    }
    codebook.entries = entries;
    Ok(pos)
}

/// Moves unused codewords onto randomly chosen encoder outputs.
fn reset_dead_codes<R: Rng + ?Sized>(
    sys: &mut DtJsccSystem,
    images: &Tensor,
    usage: &[usize],
    block_dim: usize,
    rng: &mut R,
) -> Result<()> {
    if usage.iter().all(|&u| u > 0) {
        return Ok(());
    }
    let blocks = as_blocks(&sys.encoder.forward(images)?, block_dim);
    for (i, &u) in usage.iter().enumerate() {
        if u == 0 {
            let src = blocks.row(rng.random_range(0..blocks.rows())).to_vec();
            for (e, v) in sys.codebook.entry_mut(i).iter_mut().zip(src) {
                *e = v + 0.01 * standard_normal(rng);
            }
        }
    }
    Ok(())
}

/// Accuracy of assigning each sample to the class with the nearest mean
/// of the training samples.
pub fn nearest_centroid_accuracy(train: &Tensor, train_labels: &[usize], test: &Tensor, test_labels: &[usize], classes: usize) -> f64 {
    let means = crate::dataset::class_means(train, train_labels, classes);
    let correct = (0..test.rows())
        .filter(|&r| {
            let x = test.row(r);
            let pred = (0..classes)
                .min_by(|&a, &b| {
                    let da = crate::dataset::euclidean(&means[a], x);
                    let db = crate::dataset::euclidean(&means[b], x);
                    da.partial_cmp(&db).unwrap_or(core::cmp::Ordering::Equal)
                })
                .unwrap_or(0);
            pred == test_labels[r]
        })
        .count();
    correct as f64 / test.rows().max(1) as f64
}
