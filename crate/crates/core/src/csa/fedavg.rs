//! Federated averaging over pipelines that share a fixed codebook.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{Batch, Pipeline};
use crate::nn::{softmax_cross_entropy, Network};
use crate::rng::{cell_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedAvgConfig {
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Also train and average the encoder; by default clients only train
    /// their classifier on top of the shared encoder.
    pub train_encoder: bool,
}

impl Default for FedAvgConfig {
    fn default() -> Self {
        Self { local_epochs: 1, learning_rate: 0.01, batch_size: 20, seed: 0, train_encoder: false }
    }
}

/// Minibatch SGD on cross-entropy, shuffled by `seed`. Returns the mean
/// loss of the last epoch. The encoder is frozen unless `train_encoder`.
///
/// Without a codebook and commitment this performs the same operations as
/// [`crate::nn::train_classifier`] on the concatenation of `f` and `l`.
pub fn local_train(
    p: &mut Pipeline,
    shard: Batch<'_>,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
    train_encoder: bool,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::param("batch_size", 0.0));
    }
    crate::nn::check_labels(shard.labels, shard.inputs.rows(), p.l.output_dim())?;
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..shard.inputs.rows()).collect();
    let mut last = 0.0;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let x = shard.inputs.gather_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| shard.labels[i]).collect();
            let (enc, q) = p.features(&x)?;
            let cache = p.l.forward_cached(&q)?;
            let (loss, g) = softmax_cross_entropy(&cache.output, &y)?;
            let gl = p.l.backward(&cache, &g)?;
            p.l.apply_gradients(&gl, lr);
            if train_encoder {
                p.step_encoder(&enc, &q, gl.input, lr)?;
            }
            total += loss * chunk.len() as f64;
        }
        last = total / shard.inputs.rows().max(1) as f64;
    }
    if !p.f.is_finite() || !p.l.is_finite() {
        return Err(Error::NonFinite("local training"));
    }
    Ok(last)
}

/// `Σ_k w_k·θ_k` over networks of identical shape.
pub fn average_networks(nets: &[&Network], weights: &[f64]) -> Result<Network> {
    let first = nets.first().ok_or(Error::Empty("networks to average"))?;
    if nets.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: nets.len(), found: weights.len() });
    }
    let mut acc = alloc::vec![0.0; first.param_count()];
    for (net, &w) in nets.iter().zip(weights) {
        let p = net.params();
        if p.len() != acc.len() {
            return Err(Error::DimensionMismatch { expected: acc.len(), found: p.len() });
        }
        for (a, v) in acc.iter_mut().zip(p) {
            *a += w * v;
        }
    }
    let mut out = (*first).clone();
    out.set_params(&acc)?;
    Ok(out)
}

/// One round: every client trains a copy of `global` on its shard for
/// `local_epochs`, then the classifiers (and encoders, if trained) are
/// averaged with weights `n_k / N`. Every client shuffles its shard with
/// `cell_seed(seed, [r])` in round `r`. Returns the new global model and the
/// sample-weighted mean of the clients' final-epoch losses.
pub fn fedavg_round(global: &Pipeline, shards: &[Batch<'_>], cfg: &FedAvgConfig, round: usize) -> Result<(Pipeline, f64)> {
    let total: usize = shards.iter().map(|s| s.inputs.rows()).sum();
    if total == 0 {
        return Err(Error::Empty("client shards"));
    }
    let mut locals = Vec::with_capacity(shards.len());
    let mut weights = Vec::with_capacity(shards.len());
    let mut loss = 0.0;
    for shard in shards {
        let mut p = global.clone();
        let seed = cell_seed(cfg.seed, &[round as u64]);
        let l = local_train(&mut p, *shard, cfg.local_epochs, cfg.learning_rate, cfg.batch_size, seed, cfg.train_encoder)?;
        let w = shard.inputs.rows() as f64 / total as f64;
        loss += w * l;
        weights.push(w);
        locals.push(p);
    }
    let fs: Vec<&Network> = locals.iter().map(|p| &p.f).collect();
    let ls: Vec<&Network> = locals.iter().map(|p| &p.l).collect();
    let mut next = global.clone();
    if cfg.train_encoder {
        next.f = average_networks(&fs, &weights)?;
    }
    next.l = average_networks(&ls, &weights)?;
    Ok((next, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{train_classifier, Activation, Tensor, TrainConfig};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn toy(seed: u64) -> (Pipeline, Tensor, Vec<usize>) {
        let mut rng = rng_from_seed(seed);
        let f = Network::mlp(&[3, 5, 4], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let l = Network::mlp(&[4, 2], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let x = Tensor::from_vec(&[20, 3], (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = (0..20).map(|i| i % 2).collect();
        (Pipeline { f, l, codebook: None, commitment_weight: 0.0 }, x, y)
    }

    #[test]
    fn single_client_matches_centralized_sgd() {
        let (p, x, y) = toy(1);
        let cfg = FedAvgConfig { local_epochs: 2, learning_rate: 0.1, batch_size: 6, seed: 9, train_encoder: true };
        let mut fed = p.clone();
        let mut central = Network::new([p.f.layers(), p.l.layers()].concat()).unwrap();
        for round in 0..3 {
            fed = fedavg_round(&fed, &[Batch { inputs: &x, labels: &y }], &cfg, round).unwrap().0;
            let tc = TrainConfig { learning_rate: 0.1, epochs: 2, batch_size: 6, seed: cell_seed(9, &[round as u64]) };
            train_classifier(&mut central, &x, &y, &tc).unwrap();
        }
        assert_eq!([fed.f.params(), fed.l.params()].concat(), central.params());
    }

    #[test]
    fn identical_clients_average_to_either() {
        let (p, x, y) = toy(2);
        let cfg = FedAvgConfig { local_epochs: 1, learning_rate: 0.1, batch_size: 5, seed: 4, train_encoder: true };
        let shard = Batch { inputs: &x, labels: &y };
        let (avg, _) = fedavg_round(&p, &[shard, shard], &cfg, 0).unwrap();
        let mut solo = p.clone();
        local_train(&mut solo, shard, 1, 0.1, 5, cell_seed(4, &[0]), true).unwrap();
        assert_eq!(avg.f, solo.f);
        assert_eq!(avg.l, solo.l);
    }

    #[test]
    fn averaging_identical_networks_is_identity() {
        let (p, _, _) = toy(3);
        let avg = average_networks(&[&p.f, &p.f], &[0.5, 0.5]).unwrap();
        assert_eq!(avg, p.f);
    }
}
