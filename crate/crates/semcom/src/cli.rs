//! `semcom` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use semcom_core::channel::{ChannelKind, ChannelModel};
use semcom_core::dataset::Dataset;
use semcom_core::dtjscc::DtJsccSystem;
use semcom_core::geometry::{link_budget_report, slant_range};
use semcom_core::modem::Modulation;
use semcom_core::rng::{cell_seed, rng_from_seed};

use crate::config::Config;
use crate::formats;
use crate::harness::{self, Method};
use crate::report;
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "semcom", version, about = "Semantic satellite link simulator", arg_required_else_help = true)]
pub struct Cli {
    /// INI configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, env = "SEMCOM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel experiments.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the downlink and inter-satellite link budget.
    Linkbudget,
    /// Generate the synthetic dataset as MSIT files.
    GenData,
    /// Train a semantic coding system and save it.
    Train {
        /// Directory with train_t0.msit and test_t0.msit.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Accuracy versus PSNR across channels and codebook sizes.
    Sweep,
    /// CSA rounds against the non-adapting ablation.
    Csa,
    /// Federated-averaging baseline rounds.
    Fedavg,
    /// Confusion matrix at the evaluation PSNR.
    Confusion {
        /// Saved system directory.
        #[arg(long)]
        system: Option<PathBuf>,
        /// Directory with test_t0.msit.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), Error> {
    if cli.workers == 0 {
        return Err(Error::Usage("--workers must be at least 1".into()));
    }
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Linkbudget => linkbudget(&cfg, cli, out),
        Command::GenData => gen_data(&cfg, cli.seed, &dir, out),
        Command::Train { data } => train(&cfg, cli.seed, data.as_deref(), &dir, out),
        Command::Sweep => sweep(&cfg, cli.seed, cli.workers, &dir, out),
        Command::Csa => rounds(&cfg, cli.seed, cli.workers, &[Method::Csa, Method::NonCsa], &dir, out),
        Command::Fedavg => rounds(&cfg, cli.seed, cli.workers, &[Method::FedAvg], &dir, out),
        Command::Confusion { system, data } => confusion(&cfg, cli.seed, system.as_deref(), data.as_deref(), &dir, out),
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::File { path: dir.to_path_buf(), source })
}

fn create(path: &Path) -> Result<fs::File, Error> {
    fs::File::create(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}

fn linkbudget(cfg: &Config, cli: &Cli, out: &mut dyn Write) -> Result<(), Error> {
    let l = &cfg.link;
    let r = link_budget_report(&l.geometry, &l.budget, l.shadow_db, l.slant_mode, l.doppler)?;
    let d = &r.downlink;
    writeln!(out, "slant range       {:>14.6} km", slant_range(&l.geometry, l.slant_mode)?)?;
    writeln!(out, "FSPL              {:>14.6} dB", d.fspl_db)?;
    writeln!(out, "shadow fading     {:>14.6} dB", d.shadow_db)?;
    writeln!(out, "gaseous           {:>14.6} dB", d.gas_db)?;
    writeln!(out, "scintillation     {:>14.6} dB", d.scint_db)?;
    writeln!(out, "total             {:>14.6} dB", d.total_db)?;
    writeln!(out, "zeta              {:>14.6} dB", r.zeta_db)?;
    writeln!(out, "doppler           {:>14.3} Hz", r.doppler_hz)?;
    writeln!(out, "ISL distance      {:>14.6} km", r.isl.distance_km)?;
    writeln!(out, "ISL total         {:>14.6} dB", r.isl.total_db)?;
    if let Some(dir) = &cli.out {
        create_dir(dir)?;
        report::write_linkbudget_csv(create(&dir.join("linkbudget.csv"))?, &r)?;
        for m in [Modulation::Psk16, Modulation::Apsk16] {
            let c = m.constellation(cfg.experiment.apsk_gamma)?;
            report::write_constellation_csv(create(&dir.join(format!("constellation_{}.csv", m.name())))?, &c)?;
        }
        let mut rng = rng_from_seed(cell_seed(cli.seed, &[0]));
        let mut rows = Vec::new();
        for kind in [ChannelKind::LeoRician, ChannelKind::LeoRayleigh] {
            let mut ch = ChannelModel::new(kind).with_rician_factor(l.budget.rician_factor);
            ch.zeta_linear = r.zeta_linear;
            ch.doppler_hz = r.doppler_hz;
            for _ in 0..64 {
                rows.push(ch.realize(0.0, &mut rng)?);
            }
        }
        report::write_realizations_csv(create(&dir.join("realizations.csv"))?, &rows)?;
    }
    Ok(())
}

fn gen_data(cfg: &Config, master: u64, dir: &Path, out: &mut dyn Write) -> Result<(), Error> {
    let e = &cfg.experiment;
    let data = harness::dataset(&e.dataset, master, e.seeds[0])?;
    create_dir(dir)?;
    for (t, splits) in [("t0", &data.t0), ("t1", &data.t1)] {
        for (name, set) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
            formats::save_tensor_file(&dir.join(format!("{name}_{t}.msit")), &set.images)?;
        }
    }
    report::write_dataset_summary_csv(create(&dir.join("dataset_summary.csv"))?, &data.catalog, &data.t0)?;
    let (tr, va, te) = (data.t0.train.len(), data.t0.val.len(), data.t0.test.len());
    writeln!(out, "{} classes: {tr} train, {va} val, {te} test images per time step", data.catalog.len())?;
    Ok(())
}

/// Train and test sets from `--data` or freshly generated.
fn datasets(cfg: &Config, master: u64, data: Option<&Path>) -> Result<(Dataset, Dataset), Error> {
    match data {
        Some(d) => Ok((formats::load_tensor_file(&d.join("train_t0.msit"))?, formats::load_tensor_file(&d.join("test_t0.msit"))?)),
        None => {
            let s = harness::dataset(&cfg.experiment.dataset, master, cfg.experiment.seeds[0])?;
            Ok((s.t0.train, s.t0.test))
        }
    }
}

fn train(cfg: &Config, master: u64, data: Option<&Path>, dir: &Path, out: &mut dyn Write) -> Result<(), Error> {
    let e = &cfg.experiment;
    e.validate().map_err(Error::Usage)?;
    let (train, test) = datasets(cfg, master, data)?;
    let sys = harness::train_system(e, &train, master, e.ks[0], e.seeds[0])?;
    let sys_dir = dir.join("system");
    formats::save_system(&sys_dir, &sys, None)?;
    let (x, y) = (test.to_tensor(), test.labels());
    let clean = sys.predict_noiseless(&x)?.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / y.len().max(1) as f64;
    let link = harness::link(e.channels[0], e.rician_factor, e.modulation, e.apsk_gamma, e.eval_psnr_db)?;
    let mut rng = rng_from_seed(cell_seed(master, &[e.seeds[0]]));
    let noisy = sys.evaluate(&x, &y, &link, e.trials, &mut rng)?.top1();
    writeln!(out, "K={} saved to {}", e.ks[0], sys_dir.display())?;
    writeln!(out, "test top1 noiseless {clean:.4}, {} at {} dB {noisy:.4}", e.channels[0].name(), e.eval_psnr_db)?;
    Ok(())
}

fn sweep(cfg: &Config, master: u64, workers: usize, dir: &Path, out: &mut dyn Write) -> Result<(), Error> {
    let result = harness::run_sweep(&cfg.experiment, master, workers)?;
    create_dir(dir)?;
    report::write_sweep_csv(create(&dir.join("sweep.csv"))?, &result)?;
    let svg = dir.join("sweep.svg");
    fs::write(&svg, report::sweep_svg(&result)).map_err(|source| Error::File { path: svg, source })?;
    for (channel, k) in result.series_keys() {
        let pts: Vec<String> = result.series(channel, k).iter().map(|(p, a)| format!("{p}:{a:.3}")).collect();
        writeln!(out, "{:<9} K={k:<4} {}", channel.name(), pts.join(" "))?;
    }
    Ok(())
}

fn rounds(cfg: &Config, master: u64, workers: usize, methods: &[Method], dir: &Path, out: &mut dyn Write) -> Result<(), Error> {
    let runs = harness::run_rounds(&cfg.csa, cfg.rounds, &cfg.csa_seeds, methods, master, workers)?;
    create_dir(dir)?;
    for run in &runs {
        let stem = format!("{}_seed{}", run.method.name(), run.seed);
        report::write_round_log_csv(create(&dir.join(format!("{stem}.csv")))?, &run.logs)?;
        if let (Method::Csa, Some(sat2)) = (run.method, &run.sat2) {
            let adapted = DtJsccSystem {
                encoder: sat2.pipeline.f.clone(),
                codebook: run.system.codebook.clone(),
                classifier: sat2.pipeline.l.clone(),
            };
            formats::save_system(&dir.join(&stem), &adapted, Some(&sat2.g))?;
        }
        let last = run.logs.iter().rev().find(|l| l.side == semcom_core::csa::Side::Ut).map_or(f64::NAN, |l| l.top1);
        let target = semcom_core::csa::rounds_to_target(&run.logs, semcom_core::csa::Side::Ut, cfg.csa.target_accuracy);
        let target = target.map_or_else(|| "not reached".to_string(), |r| format!("round {r}"));
        writeln!(out, "{stem}: final UT top1 {last:.4}, target {} {target}", cfg.csa.target_accuracy)?;
    }
    Ok(())
}

fn confusion(cfg: &Config, master: u64, system: Option<&Path>, data: Option<&Path>, dir: &Path, out: &mut dyn Write) -> Result<(), Error> {
    let e = &cfg.experiment;
    e.validate().map_err(Error::Usage)?;
    let (train, test) = datasets(cfg, master, data)?;
    let sys = match system {
        Some(s) => formats::load_system(s)?,
        None => harness::train_system(e, &train, master, e.ks[0], e.seeds[0])?,
    };
    let cm = harness::run_confusion(e, &test, &sys, master)?;
    create_dir(dir)?;
    report::write_confusion_csv(create(&dir.join("confusion.csv"))?, &cm)?;
    let width = cm.classes.iter().map(String::len).max().unwrap_or(0);
    for (name, row) in cm.classes.iter().zip(&cm.row_pct) {
        let cells: Vec<String> = row.iter().map(|p| format!("{p:5.1}")).collect();
        writeln!(out, "{name:>width$} {}", cells.join(" "))?;
    }
    writeln!(out, "balanced top1 {:.4}", cm.balanced_top1())?;
    Ok(())
}
