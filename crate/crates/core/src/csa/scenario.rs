//! Two satellites and a user terminal over drifting imagery.
//!
//! Round `r` images the ground at `t₁ = start_time + r` (Sat1) and
//! `t₂ = t₁ + 1` (Sat2). Sat1's semantic indices reach Sat2 over the
//! inter-satellite link and the user terminal (UT) over the downlink; both
//! use them as labeled reference for their own meta-learner. Sat2 then
//! encodes the test scenes at `t₂` and the UT classifies what it receives.
//!
//! Sat1 encodes with the constellation's current encoder, i.e. Sat2's
//! encoder at the start of the round.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{covariance_network, fedavg_round, meta_step, Batch, FedAvgConfig, Learner, Pipeline, RoundLog, SaConfig, Side};
use crate::channel::{ChannelKind, ChannelModel};
use crate::dataset::{split_indices, DatasetSpec, SceneSet, SPLIT_RATIOS};
use crate::dtjscc::{
    dequantize_batch, encode, quantize, train_dtjscc, transmit, Codebook, DigitalLink, DtJsccConfig, DtJsccSystem,
    QuantizedMessage, TrainReport,
};
use crate::modem::{Modulation, DEFAULT_APSK_GAMMA};
use crate::math::log_sum_exp;
use crate::nn::{argmax, Network, Tensor};
use crate::rng::{cell_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsaScenario {
    pub dataset: DatasetSpec,
    pub dtjscc: DtJsccConfig,
    pub sa: SaConfig,
    pub fedavg: FedAvgConfig,
    /// Time index of Sat1's first acquisition. Pre-training uses `t = 0`.
    pub start_time: u32,
    /// Scenes imaged by each satellite per round.
    pub batch: usize,
    pub eval_psnr_db: f64,
    pub isl_psnr_db: f64,
    pub downlink: ChannelKind,
    pub rician_factor: f64,
    pub modulation: Modulation,
    pub apsk_gamma: f64,
    /// Transmissions of the test set per evaluation.
    pub eval_passes: usize,
    pub target_accuracy: f64,
    pub g_hidden: usize,
    pub seed: u64,
}

impl Default for CsaScenario {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec { temporal_drift: 0.02, ..DatasetSpec::default() },
            dtjscc: DtJsccConfig { learning_rate: 0.01, ..DtJsccConfig::default() },
            sa: SaConfig::default(),
            fedavg: FedAvgConfig::default(),
            start_time: 80,
            batch: 100,
            eval_psnr_db: 12.0,
            isl_psnr_db: 20.0,
            downlink: ChannelKind::LeoRician,
            rician_factor: 2.8,
            modulation: Modulation::Apsk16,
            apsk_gamma: DEFAULT_APSK_GAMMA,
            eval_passes: 10,
            target_accuracy: 0.65,
            g_hidden: 32,
            seed: 0,
        }
    }
}

impl CsaScenario {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.dtjscc.validate()?;
        self.sa.validate()?;
        if self.batch < 2 {
            return Err(Error::param("batch", self.batch as f64));
        }
        if self.eval_passes == 0 {
            return Err(Error::param("eval_passes", 0.0));
        }
        Ok(())
    }

    pub fn downlink(&self) -> Result<DigitalLink> {
        let ch = ChannelModel::new(self.downlink).with_rician_factor(self.rician_factor);
        DigitalLink::new(ch, self.modulation, self.apsk_gamma, self.eval_psnr_db)
    }

    pub fn isl(&self) -> Result<DigitalLink> {
        let ch = ChannelModel::new(ChannelKind::Isl).with_rician_factor(self.rician_factor);
        DigitalLink::new(ch, self.modulation, self.apsk_gamma, self.isl_psnr_db)
    }
}

/// Whether the satellites and terminal adapt during the rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adaptation {
    /// Meta-learning on both sides.
    Csa,
    /// Pre-trained networks used as they are.
    Frozen,
}

/// Scenes, splits and the system pre-trained at `t = 0`, shared by every
/// run on the same scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScenario {
    pub scenes: SceneSet,
    pub train_scenes: Vec<usize>,
    pub test_scenes: Vec<usize>,
    pub system: DtJsccSystem,
    pub pretrain: TrainReport,
}

// Stream tags for per-round seeds.
const STREAM_SCENES: u64 = 1;
const STREAM_LINKS: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_INIT: u64 = 4;

pub fn prepare_scenario(sc: &CsaScenario) -> Result<PreparedScenario> {
    sc.validate()?;
    let spec = DatasetSpec { seed: cell_seed(sc.seed, &[sc.dataset.seed]), ..sc.dataset };
    let scenes = SceneSet::new(&spec)?;
    let labels: Vec<usize> = (0..scenes.len()).map(|s| scenes.label(s)).collect();
    let [train, val, test] = split_indices(&labels, SPLIT_RATIOS, spec.seed)?;
    // Validation scenes are not needed separately here; they join training.
    let mut train_scenes = train;
    train_scenes.extend(val);
    train_scenes.sort_unstable();
    let data = scenes.render_many(&train_scenes, 0);
    let cfg = DtJsccConfig { seed: cell_seed(sc.seed, &[sc.dtjscc.seed]), ..sc.dtjscc };
    let (system, pretrain) = train_dtjscc(&data.to_tensor(), &data.labels(), spec.classes, &cfg)?;
    Ok(PreparedScenario { scenes, train_scenes, test_scenes: test, system, pretrain })
}

/// Number of rounds until `side` first reaches `target` Top-1.
pub fn rounds_to_target(logs: &[RoundLog], side: Side, target: f64) -> Option<usize> {
    logs.iter().filter(|l| l.side == side).find(|l| l.top1 >= target).map(|l| l.round + 1)
}

struct RoundData {
    x1: Tensor,
    y1: Vec<usize>,
    x2: Tensor,
    y2: Vec<usize>,
    test_x: Tensor,
    test_y: Vec<usize>,
}

fn round_data(prep: &PreparedScenario, sc: &CsaScenario, round: usize) -> RoundData {
    let t1 = sc.start_time + round as u32;
    let mut rng = rng_from_seed(cell_seed(sc.seed, &[round as u64, STREAM_SCENES]));
    let mut pick = || {
        let mut pool = prep.train_scenes.clone();
        pool.shuffle(&mut rng);
        pool.truncate(sc.batch);
        pool
    };
    let (s1, s2) = (pick(), pick());
    let d1 = prep.scenes.render_many(&s1, t1);
    let d2 = prep.scenes.render_many(&s2, t1 + 1);
    let dt = prep.scenes.render_many(&prep.test_scenes, t1 + 1);
    RoundData {
        x1: d1.to_tensor(),
        y1: d1.labels(),
        x2: d2.to_tensor(),
        y2: d2.labels(),
        test_x: dt.to_tensor(),
        test_y: dt.labels(),
    }
}

/// Received reference: codewords of the frames that were not erased.
fn receive<R: rand::Rng + ?Sized>(
    sent: &[QuantizedMessage],
    labels: &[usize],
    codebook: &Codebook,
    link: &DigitalLink,
    rng: &mut R,
) -> Result<(Tensor, Vec<usize>, u64)> {
    let mut kept = Vec::with_capacity(sent.len());
    let mut kept_labels = Vec::with_capacity(sent.len());
    let mut bits = 0u64;
    for (m, &y) in sent.iter().zip(labels) {
        bits += (m.indices.len() as u32 * codebook.bits_per_index()) as u64;
        let rx = transmit(m, codebook.k(), link, rng)?;
        if !rx.erased {
            kept.push(rx);
            kept_labels.push(y);
        }
    }
    Ok((dequantize_batch(&kept, codebook), kept_labels, bits))
}

struct UtEval {
    top1: f64,
    ce: f64,
    bits: u64,
}

/// Sat2 encodes the test scenes, the downlink carries them `passes` times,
/// the UT decodes. Erased frames count as misses and are left out of the
/// cross-entropy.
fn evaluate_ut(encoder: &Network, codebook: &Codebook, ut: &Pipeline, data: &RoundData, link: &DigitalLink, passes: usize, seed: u64) -> Result<UtEval> {
    let sent = quantize(&encode(&data.test_x, encoder)?, codebook, 0)?;
    let mut rng = rng_from_seed(seed);
    let (mut correct, mut total, mut ce, mut ce_n, mut bits) = (0usize, 0usize, 0.0, 0usize, 0u64);
    for _ in 0..passes {
        let (q, y, b) = receive(&sent, &data.test_y, codebook, link, &mut rng)?;
        bits += b;
        total += sent.len();
        if y.is_empty() {
            continue;
        }
        let (_, feats) = ut.features(&q)?;
        let logits = ut.l.forward(&feats)?;
        for (r, &label) in y.iter().enumerate() {
            let z = logits.row(r);
            if argmax(z) == label {
                correct += 1;
            }
            ce += log_sum_exp(z) - z[label];
            ce_n += 1;
        }
    }
    Ok(UtEval { top1: correct as f64 / total as f64, ce: ce / ce_n.max(1) as f64, bits })
}

fn sat2_row(round: usize, p: &Pipeline, data: &RoundData, sa: f64, bits: u64) -> Result<RoundLog> {
    let pred = p.predict(&data.test_x)?;
    let correct = pred.iter().zip(&data.test_y).filter(|(a, b)| a == b).count();
    Ok(RoundLog {
        round,
        side: Side::Sat2,
        top1: correct as f64 / data.test_y.len() as f64,
        ce_loss: p.cross_entropy(&data.test_x, &data.test_y)?,
        sa_loss: sa,
        bits_tx: bits,
    })
}

fn split_half(x: &Tensor, y: &[usize]) -> ((Tensor, Vec<usize>), (Tensor, Vec<usize>)) {
    let h = x.rows() / 2;
    let a: Vec<usize> = (0..h).collect();
    let b: Vec<usize> = (h..x.rows()).collect();
    ((x.gather_rows(&a), y[..h].to_vec()), (x.gather_rows(&b), y[h..].to_vec()))
}

/// Round logs plus the final Sat2 and UT learners.
#[derive(Debug, Clone, PartialEq)]
pub struct CsaOutcome {
    pub logs: Vec<RoundLog>,
    pub sat2: Learner,
    pub ut: Learner,
}

/// Runs `rounds` rounds and logs a Sat2 row and a UT row per round.
pub fn run_csa_end_to_end(prep: &PreparedScenario, sc: &CsaScenario, rounds: usize, mode: Adaptation) -> Result<Vec<RoundLog>> {
    Ok(run_csa_with_state(prep, sc, rounds, mode)?.logs)
}

pub fn run_csa_with_state(prep: &PreparedScenario, sc: &CsaScenario, rounds: usize, mode: Adaptation) -> Result<CsaOutcome> {
    sc.validate()?;
    let sys = &prep.system;
    let (a, classes) = (sys.classifier.input_dim(), sys.classes());
    let codebook = sys.codebook.clone();
    let mut init_rng = rng_from_seed(cell_seed(sc.seed, &[STREAM_INIT]));
    let mut sat2 = Learner {
        g: covariance_network(a, classes, sc.g_hidden, &mut init_rng)?,
        pipeline: Pipeline {
            f: sys.encoder.clone(),
            l: sys.classifier.clone(),
            codebook: Some(codebook.clone()),
            commitment_weight: sc.dtjscc.commitment_weight,
        },
    };
    let mut ut = Learner {
        g: covariance_network(a, classes, sc.g_hidden, &mut init_rng)?,
        pipeline: Pipeline { f: Network::identity(a), l: sys.classifier.clone(), codebook: None, commitment_weight: 0.0 },
    };
    let (isl, downlink) = (sc.isl()?, sc.downlink()?);
    let mut logs = Vec::with_capacity(2 * rounds);
    for r in 0..rounds {
        let data = round_data(prep, sc, r);
        let sent = quantize(&encode(&data.x1, &sat2.pipeline.f)?, &codebook, 0)?;
        let mut link_rng = rng_from_seed(cell_seed(sc.seed, &[r as u64, STREAM_LINKS]));
        let (ref_s2, ref_s2_y, isl_bits) = receive(&sent, &data.y1, &codebook, &isl, &mut link_rng)?;
        let (ref_ut, ref_ut_y, dl_bits) = receive(&sent, &data.y1, &codebook, &downlink, &mut link_rng)?;

        let (mut sa_s2, mut sa_ut) = (0.0, 0.0);
        if mode == Adaptation::Csa {
            let lambda = sc.sa.lambda_at(r, rounds);
            let ((tx, ty), (vx, vy)) = split_half(&data.x2, &data.y2);
            sa_s2 = meta_step(
                &mut sat2,
                Batch { inputs: &ref_s2, labels: &ref_s2_y },
                Batch { inputs: &tx, labels: &ty },
                Batch { inputs: &vx, labels: &vy },
                &sc.sa,
                lambda,
            )?
            .sa_loss;
            if ref_ut.rows() >= 2 {
                let ((tx, ty), (vx, vy)) = split_half(&ref_ut, &ref_ut_y);
                sa_ut = meta_step(
                    &mut ut,
                    Batch { inputs: &ref_ut, labels: &ref_ut_y },
                    Batch { inputs: &tx, labels: &ty },
                    Batch { inputs: &vx, labels: &vy },
                    &sc.sa,
                    lambda,
                )?
                .sa_loss;
            }
        }
        logs.push(sat2_row(r, &sat2.pipeline, &data, sa_s2, isl_bits)?);
        let ev = evaluate_ut(&sat2.pipeline.f, &codebook, &ut.pipeline, &data, &downlink, sc.eval_passes, cell_seed(sc.seed, &[r as u64, STREAM_EVAL]))?;
        logs.push(RoundLog { round: r, side: Side::Ut, top1: ev.top1, ce_loss: ev.ce, sa_loss: sa_ut, bits_tx: dl_bits + ev.bits });
    }
    Ok(CsaOutcome { logs, sat2, ut })
}

/// Federated averaging baseline on the same rounds: Sat1 and Sat2 train
/// the shared classifier (and the encoder if `fedavg.train_encoder`) on
/// their own labeled images, the UT averages and broadcasts. Bits count parameter uploads and downloads.
pub fn run_fedavg_baseline(prep: &PreparedScenario, sc: &CsaScenario, rounds: usize) -> Result<Vec<RoundLog>> {
    sc.validate()?;
    let sys = &prep.system;
    let codebook = sys.codebook.clone();
    let mut global = Pipeline {
        f: sys.encoder.clone(),
        l: sys.classifier.clone(),
        codebook: Some(codebook.clone()),
        commitment_weight: sc.dtjscc.commitment_weight,
    };
    let downlink = sc.downlink()?;
    let params = if sc.fedavg.train_encoder { global.f.param_count() + global.l.param_count() } else { global.l.param_count() } as u64;
    let mut logs = Vec::with_capacity(2 * rounds);
    for r in 0..rounds {
        let data = round_data(prep, sc, r);
        let shards = [Batch { inputs: &data.x1, labels: &data.y1 }, Batch { inputs: &data.x2, labels: &data.y2 }];
        let cfg = FedAvgConfig { seed: cell_seed(sc.seed, &[sc.fedavg.seed]), ..sc.fedavg };
        let (next, loss) = fedavg_round(&global, &shards, &cfg, r)?;
        global = next;
        let bits = 2 * shards.len() as u64 * params * 64;
        let mut row = sat2_row(r, &global, &data, 0.0, bits)?;
        row.ce_loss = loss;
        logs.push(row);
        let ut = Pipeline { f: Network::identity(global.l.input_dim()), l: global.l.clone(), codebook: None, commitment_weight: 0.0 };
        let ev = evaluate_ut(&global.f, &codebook, &ut, &data, &downlink, sc.eval_passes, cell_seed(sc.seed, &[r as u64, STREAM_EVAL]))?;
        logs.push(RoundLog { round: r, side: Side::Ut, top1: ev.top1, ce_loss: ev.ce, sa_loss: 0.0, bits_tx: bits + ev.bits });
    }
    Ok(logs)
}
