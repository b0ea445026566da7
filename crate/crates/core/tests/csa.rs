use semcom_core::channel::ChannelKind;
use semcom_core::csa::{
    covariance_network, meta_step, prepare_scenario, run_csa_end_to_end, Adaptation, Batch, CsaScenario, Learner, Pipeline, SaConfig,
    Side,
};
use semcom_core::dataset::DatasetSpec;
use semcom_core::nn::{softmax_cross_entropy, Activation, Network, Tensor};
use semcom_core::rng::rng_from_seed;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Gaussian blobs around class-dependent centres.
fn blobs(seed: u64, n: usize, dim: usize, classes: usize, spread: f64) -> (Tensor, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let centres: Vec<Vec<f64>> = (0..classes).map(|c| (0..dim).map(|k| if k % classes == c { 2.0 } else { 0.0 }).collect()).collect();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for k in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(centres[c][k] + spread * z);
        }
    }
    (Tensor::from_vec(&[n, dim], data).unwrap(), labels)
}

fn learner(seed: u64, dim: usize, feat: usize, classes: usize) -> Learner {
    let mut rng = rng_from_seed(seed);
    let f = Network::mlp(&[dim, 8, feat], Activation::Relu, Activation::Identity, &mut rng).unwrap();
    let l = Network::mlp(&[feat, classes], Activation::Identity, Activation::Identity, &mut rng).unwrap();
    let g = covariance_network(feat, classes, 6, &mut rng).unwrap();
    Learner { g, pipeline: Pipeline { f, l, codebook: None, commitment_weight: 0.0 } }
}

#[test]
fn zero_lambda_meta_step_is_plain_sgd() {
    let (x, y) = blobs(1, 24, 5, 3, 0.7);
    let (v, vy) = blobs(2, 12, 5, 3, 0.7);
    let mut ln = learner(3, 5, 4, 3);
    let g0 = ln.g.clone();
    let cfg = SaConfig { inner_steps: 4, inner_learning_rate: 0.05, ..SaConfig::default() };
    let mut oracle = Network::new([ln.pipeline.f.layers(), ln.pipeline.l.layers()].concat()).unwrap();

    let r = ln.pipeline.f.forward(&x).unwrap();
    let batch = Batch { inputs: &x, labels: &y };
    meta_step(&mut ln, Batch { inputs: &r, labels: &y }, batch, Batch { inputs: &v, labels: &vy }, &cfg, 0.0).unwrap();

    for _ in 0..4 {
        let cache = oracle.forward_cached(&x).unwrap();
        let (_, grad) = softmax_cross_entropy(&cache.output, &y).unwrap();
        let grads = oracle.backward(&cache, &grad).unwrap();
        oracle.apply_gradients(&grads, 0.05);
    }
    assert_eq!([ln.pipeline.f.params(), ln.pipeline.l.params()].concat(), oracle.params());
    assert_eq!(ln.g, g0);
}

#[test]
fn zero_meta_rate_freezes_covariance_predictor() {
    let (x, y) = blobs(4, 24, 5, 3, 0.7);
    let mut ln = learner(5, 5, 4, 3);
    let g0 = ln.g.clone();
    let cfg = SaConfig { meta_learning_rate: 0.0, ..SaConfig::default() };
    let r = ln.pipeline.f.forward(&x).unwrap();
    let b = Batch { inputs: &x, labels: &y };
    meta_step(&mut ln, Batch { inputs: &r, labels: &y }, b, b, &cfg, 1.0).unwrap();
    assert_eq!(ln.g, g0);
    assert_ne!(ln.pipeline.l, learner(5, 5, 4, 3).pipeline.l);
}

#[test]
fn validation_loss_mostly_decreases_over_meta_rounds() {
    let (v, vy) = blobs(99, 60, 6, 3, 1.0);
    let mut ln = learner(7, 6, 4, 3);
    let cfg = SaConfig::default();
    let mut improved = 0;
    for round in 0..20 {
        let (x, y) = blobs(100 + round, 60, 6, 3, 1.0);
        let r = ln.pipeline.f.forward(&x).unwrap();
        let b = Batch { inputs: &x, labels: &y };
        let rep = meta_step(&mut ln, Batch { inputs: &r, labels: &y }, b, Batch { inputs: &v, labels: &vy }, &cfg, cfg.lambda_at(round as usize, 20)).unwrap();
        if rep.val_ce_after <= rep.val_ce_before {
            improved += 1;
        }
        assert!(rep.covariance.as_tensor().data().iter().all(|&s| s >= 0.0));
    }
    assert!(improved >= 16, "improved in {improved}/20 rounds");
}

fn tiny_scenario() -> CsaScenario {
    let mut sc = CsaScenario {
        dataset: DatasetSpec { per_class_count: 20, classes: 4, temporal_drift: 0.0, noise_std: 0.0, ..DatasetSpec::default() },
        batch: 20,
        eval_passes: 2,
        ..CsaScenario::default()
    };
    sc.dtjscc.epochs = 20;
    sc.dtjscc.warmup_epochs = 5;
    sc.dtjscc.k = 16;
    sc
}

#[test]
fn zero_rounds_give_empty_log() {
    let sc = tiny_scenario();
    let prep = prepare_scenario(&sc).unwrap();
    assert!(run_csa_end_to_end(&prep, &sc, 0, Adaptation::Csa).unwrap().is_empty());
}

#[test]
fn frozen_noiseless_replay_is_constant() {
    let mut sc = tiny_scenario();
    sc.sa.inner_learning_rate = 0.0;
    sc.sa.meta_learning_rate = 0.0;
    sc.downlink = ChannelKind::Awgn;
    sc.eval_psnr_db = f64::INFINITY;
    sc.isl_psnr_db = f64::INFINITY;
    let prep = prepare_scenario(&sc).unwrap();
    let logs = run_csa_end_to_end(&prep, &sc, 4, Adaptation::Csa).unwrap();
    assert_eq!(logs.len(), 8);
    for side in [Side::Sat2, Side::Ut] {
        let acc: Vec<f64> = logs.iter().filter(|l| l.side == side).map(|l| l.top1).collect();
        assert!(acc.windows(2).all(|w| w[0] == w[1]), "{side:?} {acc:?}");
    }
    assert_eq!(logs, run_csa_end_to_end(&prepare_scenario(&sc).unwrap(), &sc, 4, Adaptation::Csa).unwrap());
}

#[test]
fn inner_updates_change_the_pipeline() {
    let (x, y) = blobs(11, 24, 5, 3, 0.7);
    let mut ln = learner(12, 5, 4, 3);
    let before = ln.pipeline.clone();
    let mut rng = rng_from_seed(13);
    let lambda = rng.random_range(0.1..1.0);
    let r = ln.pipeline.f.forward(&x).unwrap();
    let b = Batch { inputs: &x, labels: &y };
    meta_step(&mut ln, Batch { inputs: &r, labels: &y }, b, b, &SaConfig::default(), lambda).unwrap();
    assert_ne!(ln.pipeline, before);
}
