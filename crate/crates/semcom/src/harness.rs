//! Experiment drivers: accuracy-vs-PSNR sweeps, confusion matrices and
//! the CSA / non-CSA / FedAvg round comparisons.
//!
//! Every unit of work draws from its own seed `cell_seed(master, coords)`,
//! so results do not depend on the worker count or on scheduling, and rows
//! are always returned in the canonical order of the configuration lists.

use rayon::prelude::*;
use semcom_core::channel::{ChannelKind, ChannelModel};
use semcom_core::csa::{
    prepare_scenario, run_csa_with_state, run_fedavg_baseline, Adaptation, CsaScenario, Learner, RoundLog,
};
use semcom_core::dataset::{generate_synthetic, ClassCatalog, Dataset, DatasetSpec, SyntheticData};
use semcom_core::dtjscc::{train_dtjscc, DigitalLink, DtJsccSystem};
use semcom_core::modem::Modulation;
use semcom_core::rng::{cell_seed, rng_from_seed};

use crate::Error;

const STREAM_DATA: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_ROUNDS: u64 = 4;

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Runtime(e.to_string()))
}

/// Class names for `classes` classes: the land-cover names when they
/// suffice, numbered names otherwise.
pub fn catalog(classes: usize) -> Result<ClassCatalog, Error> {
    match ClassCatalog::eurosat(classes) {
        Ok(c) => Ok(c),
        Err(_) => Ok(ClassCatalog::new((0..classes).map(|c| format!("class{c}")).collect())?),
    }
}

/// Synthetic dataset for replicate `seed`.
pub fn dataset(spec: &DatasetSpec, master: u64, seed: u64) -> Result<SyntheticData, Error> {
    let spec = DatasetSpec { seed: cell_seed(master, &[STREAM_DATA, spec.seed, seed]), ..*spec };
    Ok(generate_synthetic(&spec)?)
}

/// Trains a system with codebook size `k` for replicate `seed`.
pub fn train_system(cfg: &crate::config::ExperimentConfig, train: &Dataset, master: u64, k: usize, seed: u64) -> Result<DtJsccSystem, Error> {
    let tc = semcom_core::dtjscc::DtJsccConfig { seed: cell_seed(master, &[STREAM_TRAIN, k as u64, seed]), ..cfg.training(k) };
    Ok(train_dtjscc(&train.to_tensor(), &train.labels(), cfg.dataset.classes, &tc)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub channel: ChannelKind,
    pub modulation: Modulation,
    pub k: usize,
    pub psnr_db: f64,
    pub seed: u64,
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Seed-averaged Top-1 per PSNR for one (channel, K) series, in grid
    /// order.
    pub fn series(&self, channel: ChannelKind, k: usize) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.channel == channel && r.k == k) {
            match out.iter_mut().find(|(p, _, _)| *p == r.psnr_db) {
                Some(e) => {
                    e.1 += r.top1;
                    e.2 += 1;
                }
                None => out.push((r.psnr_db, r.top1, 1)),
            }
        }
        out.into_iter().map(|(p, s, n)| (p, s / n as f64)).collect()
    }

    /// Distinct (channel, K) pairs in row order.
    pub fn series_keys(&self) -> Vec<(ChannelKind, usize)> {
        let mut keys = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.channel, r.k)) {
                keys.push((r.channel, r.k));
            }
        }
        keys
    }
}

pub fn link(channel: ChannelKind, rician_factor: f64, modulation: Modulation, apsk_gamma: f64, psnr_db: f64) -> Result<DigitalLink, Error> {
    Ok(DigitalLink::new(ChannelModel::new(channel).with_rician_factor(rician_factor), modulation, apsk_gamma, psnr_db)?)
}

/// One system per (K, seed), trained once on the configured training link
/// and evaluated on every channel and PSNR. Evaluation seeds leave out the
/// channel so all channels see the same noise and fading draws.
pub fn run_sweep(cfg: &crate::config::ExperimentConfig, master: u64, workers: usize) -> Result<SweepResult, Error> {
    cfg.validate().map_err(Error::Usage)?;
    let pool = thread_pool(workers)?;
    pool.install(|| {
        let data: Vec<SyntheticData> = cfg.seeds.par_iter().map(|&s| dataset(&cfg.dataset, master, s)).collect::<Result<_, _>>()?;
        let jobs: Vec<(usize, usize)> = (0..cfg.ks.len()).flat_map(|ki| (0..cfg.seeds.len()).map(move |si| (ki, si))).collect();
        let systems: Vec<DtJsccSystem> = jobs
            .par_iter()
            .map(|&(ki, si)| train_system(cfg, &data[si].t0.train, master, cfg.ks[ki], cfg.seeds[si]))
            .collect::<Result<_, _>>()?;
        let tests: Vec<_> = data.iter().map(|d| (d.t0.test.to_tensor(), d.t0.test.labels())).collect();

        let mut cells = Vec::new();
        for &channel in &cfg.channels {
            for ki in 0..cfg.ks.len() {
                for &psnr in &cfg.psnr_grid {
                    for si in 0..cfg.seeds.len() {
                        cells.push((channel, ki, psnr, si));
                    }
                }
            }
        }
        let rows = cells
            .par_iter()
            .map(|&(channel, ki, psnr_db, si)| {
                let (k, seed) = (cfg.ks[ki], cfg.seeds[si]);
                let sys = &systems[ki * cfg.seeds.len() + si];
                let link = link(channel, cfg.rician_factor, cfg.modulation, cfg.apsk_gamma, psnr_db)?;
                let mut rng = rng_from_seed(cell_seed(master, &[STREAM_EVAL, k as u64, psnr_db.to_bits(), seed]));
                let (x, y) = &tests[si];
                let ev = sys.evaluate(x, y, &link, cfg.trials, &mut rng)?;
                Ok(SweepRow { channel, modulation: cfg.modulation, k, psnr_db, seed, top1: ev.top1() })
            })
            .collect::<Result<_, Error>>()?;
        Ok(SweepResult { rows })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[i][j]`: frames of class `i` predicted as `j`.
    pub counts: Vec<Vec<usize>>,
    /// Row-normalized percentages; all zero for a class with no frames.
    pub row_pct: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    /// Mean of the diagonal percentages, as a fraction: the class-balanced
    /// Top-1.
    pub fn balanced_top1(&self) -> f64 {
        let n = self.counts.len();
        (0..n).map(|c| self.row_pct[c][c]).sum::<f64>() / (100.0 * n as f64)
    }
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], catalog: &ClassCatalog) -> Result<ConfusionMatrix, Error> {
    let c = catalog.len();
    if predictions.len() != labels.len() {
        return Err(Error::Runtime(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut counts = vec![vec![0usize; c]; c];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= c || y >= c {
            return Err(Error::Runtime(format!("class index {} out of range for {c} classes", p.max(y))));
        }
        counts[y][p] += 1;
    }
    let row_pct = counts
        .iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            row.iter().map(|&v| if n == 0 { 0.0 } else { 100.0 * v as f64 / n as f64 }).collect()
        })
        .collect();
    Ok(ConfusionMatrix { classes: catalog.names().to_vec(), counts, row_pct })
}

/// Confusion matrix of `sys` on `test` over the first configured channel
/// at the evaluation PSNR. An erased frame decodes to the uniform
/// distribution, whose argmax is class 0.
pub fn run_confusion(cfg: &crate::config::ExperimentConfig, test: &Dataset, sys: &DtJsccSystem, master: u64) -> Result<ConfusionMatrix, Error> {
    cfg.validate().map_err(Error::Usage)?;
    let channel = cfg.channels[0];
    let link = link(channel, cfg.rician_factor, cfg.modulation, cfg.apsk_gamma, cfg.eval_psnr_db)?;
    let mut rng = rng_from_seed(cell_seed(master, &[STREAM_EVAL, sys.codebook.k() as u64, cfg.eval_psnr_db.to_bits(), cfg.seeds[0]]));
    let ev = sys.evaluate(&test.to_tensor(), &test.labels(), &link, cfg.trials, &mut rng)?;
    let (labels, preds): (Vec<usize>, Vec<usize>) = ev.outcomes.iter().map(|&(y, p)| (y, p.unwrap_or(0))).unzip();
    confusion_matrix(&preds, &labels, &catalog(cfg.dataset.classes)?)
}

/// Adaptation scheme of a round run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Csa,
    NonCsa,
    FedAvg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Csa => "csa",
            Method::NonCsa => "noncsa",
            Method::FedAvg => "fedavg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundsRun {
    pub seed: u64,
    pub method: Method,
    pub logs: Vec<RoundLog>,
    /// Final Sat2 learner; `None` for FedAvg.
    pub sat2: Option<Learner>,
    pub system: DtJsccSystem,
}

pub fn scenario_for(sc: &CsaScenario, master: u64, seed: u64) -> CsaScenario {
    CsaScenario { seed: cell_seed(master, &[STREAM_ROUNDS, seed]), ..*sc }
}

/// Runs every method on every seed. The pre-trained system of a seed is
/// shared by its methods, so the comparison is paired.
pub fn run_rounds(sc: &CsaScenario, rounds: usize, seeds: &[u64], methods: &[Method], master: u64, workers: usize) -> Result<Vec<RoundsRun>, Error> {
    let pool = thread_pool(workers)?;
    pool.install(|| {
        let preps: Vec<_> = seeds
            .par_iter()
            .map(|&s| {
                let sc = scenario_for(sc, master, s);
                prepare_scenario(&sc).map(|p| (sc, p))
            })
            .collect::<Result<_, _>>()?;
        let jobs: Vec<(usize, Method)> = (0..seeds.len()).flat_map(|i| methods.iter().map(move |&m| (i, m))).collect();
        jobs.par_iter()
            .map(|&(i, method)| {
                let (sc, prep) = &preps[i];
                let (logs, sat2) = match method {
                    Method::Csa | Method::NonCsa => {
                        let mode = if method == Method::Csa { Adaptation::Csa } else { Adaptation::Frozen };
                        let out = run_csa_with_state(prep, sc, rounds, mode)?;
                        (out.logs, Some(out.sat2))
                    }
                    Method::FedAvg => (run_fedavg_baseline(prep, sc, rounds)?, None),
                };
                Ok(RoundsRun { seed: seeds[i], method, logs, sat2, system: prep.system.clone() })
            })
            .collect()
    })
}
