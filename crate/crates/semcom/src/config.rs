//! INI experiment configuration.
//!
//! Every section and key is optional; missing values keep their defaults.
//! Unknown sections or keys are rejected so typos do not pass silently.
//!
//! ```ini
//! [geometry]
//! altitude_km = 600
//! elevation_deg = 90
//!
//! [sweep]
//! channels = rician, rayleigh
//! psnr_grid = 0, 4, 8, 12, 16
//! ```

use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use semcom_core::channel::ChannelKind;
use semcom_core::csa::CsaScenario;
use semcom_core::dataset::DatasetSpec;
use semcom_core::dtjscc::DtJsccConfig;
use semcom_core::geometry::{DopplerModel, LinkBudget, OrbitGeometry, SlantRangeMode};
use semcom_core::modem::Modulation;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("syntax: {0}")]
    Syntax(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key {key} in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("[{section}] {key} = {value}: {reason}")]
    BadValue { section: String, key: String, value: String, reason: String },
}

/// Link-budget inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSettings {
    pub geometry: OrbitGeometry,
    pub budget: LinkBudget,
    pub slant_mode: SlantRangeMode,
    /// Shadow-fading value applied to the report, dB.
    pub shadow_db: f64,
    pub doppler: DopplerModel,
}

impl Default for LinkSettings {
    fn default() -> Self {
        Self {
            geometry: OrbitGeometry::default(),
            budget: LinkBudget::default(),
            slant_mode: SlantRangeMode::Corrected,
            shadow_db: 0.0,
            doppler: DopplerModel::CircularOrbit,
        }
    }
}

/// Accuracy-vs-PSNR sweep and confusion-matrix settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub channels: Vec<ChannelKind>,
    pub modulation: Modulation,
    pub apsk_gamma: f64,
    pub rician_factor: f64,
    pub ks: Vec<usize>,
    pub psnr_grid: Vec<f64>,
    /// Passes of the test set through the channel per cell.
    pub trials: usize,
    pub seeds: Vec<u64>,
    pub train_psnr_db: f64,
    /// Operating point of the confusion matrix.
    pub eval_psnr_db: f64,
    pub dataset: DatasetSpec,
    pub dtjscc: DtJsccConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "toy".into(),
            channels: vec![ChannelKind::LeoRician, ChannelKind::LeoRayleigh],
            modulation: Modulation::Apsk16,
            apsk_gamma: semcom_core::modem::DEFAULT_APSK_GAMMA,
            rician_factor: 2.8,
            ks: vec![32, 64, 128],
            psnr_grid: vec![0.0, 4.0, 8.0, 12.0, 16.0],
            trials: 20,
            seeds: (0..5).collect(),
            train_psnr_db: 4.0,
            eval_psnr_db: 12.0,
            dataset: DatasetSpec::default(),
            dtjscc: DtJsccConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.psnr_grid.is_empty() {
            return Err("psnr_grid is empty".into());
        }
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        if self.channels.is_empty() || self.ks.is_empty() || self.seeds.is_empty() {
            return Err("channels, ks and seeds must be non-empty".into());
        }
        Ok(())
    }

    /// Training configuration for codebook size `k`.
    pub fn training(&self, k: usize) -> DtJsccConfig {
        DtJsccConfig {
            k,
            train_psnr_db: self.train_psnr_db,
            modulation: self.modulation,
            apsk_gamma: self.apsk_gamma,
            rician_factor: self.rician_factor,
            ..self.dtjscc
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub link: LinkSettings,
    pub experiment: ExperimentConfig,
    pub csa: CsaScenario,
    pub rounds: usize,
    pub csa_seeds: Vec<u64>,
}

impl Default for Config {
    fn default() -> Self {
        let csa = CsaScenario::default();
        Self {
            link: LinkSettings::default(),
            experiment: ExperimentConfig::default(),
            csa,
            rounds: 30,
            csa_seeds: (0..5).collect(),
        }
    }
}

const SECTIONS: [&str; 8] = ["geometry", "linkbudget", "channel", "dataset", "dtjscc", "sweep", "csa", "fedavg"];

struct Value<'a> {
    section: &'a str,
    key: &'a str,
    raw: &'a str,
}

impl Value<'_> {
    fn fail(&self, reason: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            section: self.section.into(),
            key: self.key.into(),
            value: self.raw.into(),
            reason: reason.into(),
        }
    }

    fn parse<T: FromStr>(&self) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw.trim().parse().map_err(|e: T::Err| self.fail(e.to_string()))
    }

    fn list<T: FromStr>(&self) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e: T::Err| self.fail(e.to_string())))
            .collect()
    }

    fn bool(&self) -> Result<bool, ConfigError> {
        match self.raw.trim() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(self.fail("expected true or false")),
        }
    }

    fn channel(&self, s: &str) -> Result<ChannelKind, ConfigError> {
        ChannelKind::from_name(s.trim()).ok_or_else(|| self.fail("expected awgn, rician, rayleigh or isl"))
    }

    fn modulation(&self) -> Result<Modulation, ConfigError> {
        Modulation::from_name(self.raw.trim()).ok_or_else(|| self.fail("expected 16psk or 16apsk"))
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str_noescape(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut cfg = Config::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            if section.is_empty() && props.is_empty() {
                continue;
            }
            if !SECTIONS.contains(&section) {
                return Err(ConfigError::UnknownSection(section.into()));
            }
            for (key, raw) in props.iter() {
                cfg.set(&Value { section, key, raw })?;
            }
        }
        Ok(cfg)
    }

    fn set(&mut self, v: &Value<'_>) -> Result<(), ConfigError> {
        let unknown = || ConfigError::UnknownKey { section: v.section.into(), key: v.key.into() };
        match v.section {
            "geometry" => {
                let g = &mut self.link.geometry;
                match v.key {
                    "earth_radius_km" => g.earth_radius_km = v.parse()?,
                    "altitude_km" => g.altitude_km = v.parse()?,
                    "elevation_deg" => g.elevation_rad = v.parse::<f64>()?.to_radians(),
                    "isl_distance_km" => g.isl_distance_km = v.parse()?,
                    "slant_mode" => {
                        self.link.slant_mode = match v.raw.trim() {
                            "corrected" => SlantRangeMode::Corrected,
                            "uncorrected" => SlantRangeMode::Uncorrected,
                            _ => return Err(v.fail("expected corrected or uncorrected")),
                        }
                    }
                    _ => return Err(unknown()),
                }
            }
            "linkbudget" => {
                let b = &mut self.link.budget;
                match v.key {
                    "carrier_ghz" => b.carrier_ghz = v.parse()?,
                    "sat_antenna_gain_db" => b.sat_antenna_gain_db = v.parse()?,
                    "user_antenna_gain_db" => b.user_antenna_gain_db = v.parse()?,
                    "scintillation_loss_db" => b.scintillation_loss_db = v.parse()?,
                    "atmospheric_loss_db" => b.atmospheric_loss_db = v.parse()?,
                    "shadow_sigma_db" => b.shadow_sigma_db = v.parse()?,
                    "shadow_db" => self.link.shadow_db = v.parse()?,
                    "doppler_hz" => self.link.doppler = DopplerModel::Fixed(v.parse()?),
                    _ => return Err(unknown()),
                }
            }
            "channel" => match v.key {
                "kind" => {
                    let kind = v.channel(v.raw)?;
                    self.experiment.dtjscc.channel = kind;
                    self.csa.dtjscc.channel = kind;
                    self.csa.downlink = kind;
                }
                "rician_factor" => {
                    let r: f64 = v.parse()?;
                    self.link.budget.rician_factor = r;
                    self.experiment.rician_factor = r;
                    self.csa.rician_factor = r;
                    self.csa.dtjscc.rician_factor = r;
                }
                "modulation" => {
                    let m = v.modulation()?;
                    self.experiment.modulation = m;
                    self.csa.modulation = m;
                    self.csa.dtjscc.modulation = m;
                }
                "apsk_gamma" => {
                    let g: f64 = v.parse()?;
                    self.experiment.apsk_gamma = g;
                    self.csa.apsk_gamma = g;
                    self.csa.dtjscc.apsk_gamma = g;
                }
                _ => return Err(unknown()),
            },
            "dataset" => {
                for d in [&mut self.experiment.dataset, &mut self.csa.dataset] {
                    match v.key {
                        "per_class_count" => d.per_class_count = v.parse()?,
                        "height" => d.height = v.parse()?,
                        "width" => d.width = v.parse()?,
                        "bands" => d.bands = v.parse()?,
                        "classes" => d.classes = v.parse()?,
                        "class_separation" => d.class_separation = v.parse()?,
                        "noise_std" => d.noise_std = v.parse()?,
                        "illumination_jitter" => d.illumination_jitter = v.parse()?,
                        "texture_amplitude" => d.texture_amplitude = v.parse()?,
                        "seed" => d.seed = v.parse()?,
                        // Drift matters to the rounds only; the sweep stays at t0.
                        "temporal_drift" => d.temporal_drift = v.parse()?,
                        _ => return Err(unknown()),
                    }
                }
            }
            "dtjscc" => {
                for d in [&mut self.experiment.dtjscc, &mut self.csa.dtjscc] {
                    match v.key {
                        "k" => d.k = v.parse()?,
                        "feature_dim" => d.feature_dim = v.parse()?,
                        "hidden" => d.hidden = v.parse()?,
                        "blocks" => d.blocks = v.parse()?,
                        "learning_rate" => d.learning_rate = v.parse()?,
                        "epochs" => d.epochs = v.parse()?,
                        "warmup_epochs" => d.warmup_epochs = v.parse()?,
                        "batch_size" => d.batch_size = v.parse()?,
                        "codebook_weight" => d.codebook_weight = v.parse()?,
                        "commitment_weight" => d.commitment_weight = v.parse()?,
                        "train_psnr_db" => d.train_psnr_db = v.parse()?,
                        "patience" => d.patience = v.parse()?,
                        "index_assignment" => d.index_assignment = v.bool()?,
                        _ => return Err(unknown()),
                    }
                }
                if v.key == "train_psnr_db" {
                    self.experiment.train_psnr_db = v.parse()?;
                }
            }
            "sweep" => {
                let e = &mut self.experiment;
                match v.key {
                    "scenario" => e.scenario = v.raw.trim().to_string(),
                    "channels" => e.channels = v.raw.split(',').map(|s| v.channel(s)).collect::<Result<_, _>>()?,
                    "ks" => e.ks = v.list()?,
                    "psnr_grid" => e.psnr_grid = v.list()?,
                    "trials" => e.trials = v.parse()?,
                    "seeds" => e.seeds = v.list()?,
                    "eval_psnr_db" => e.eval_psnr_db = v.parse()?,
                    _ => return Err(unknown()),
                }
            }
            "csa" => {
                let c = &mut self.csa;
                match v.key {
                    "lambda" => c.sa.lambda = v.parse()?,
                    "inner_steps" => c.sa.inner_steps = v.parse()?,
                    "inner_lr" => c.sa.inner_learning_rate = v.parse()?,
                    "meta_lr" => c.sa.meta_learning_rate = v.parse()?,
                    "warmup_fraction" => c.sa.warmup_fraction = v.parse()?,
                    "rounds" => self.rounds = v.parse()?,
                    "seeds" => self.csa_seeds = v.list()?,
                    "start_time" => c.start_time = v.parse()?,
                    "batch" => c.batch = v.parse()?,
                    "eval_psnr_db" => c.eval_psnr_db = v.parse()?,
                    "isl_psnr_db" => c.isl_psnr_db = v.parse()?,
                    "eval_passes" => c.eval_passes = v.parse()?,
                    "target_accuracy" => c.target_accuracy = v.parse()?,
                    "g_hidden" => c.g_hidden = v.parse()?,
                    _ => return Err(unknown()),
                }
            }
            "fedavg" => {
                let f = &mut self.csa.fedavg;
                match v.key {
                    "local_epochs" => f.local_epochs = v.parse()?,
                    "learning_rate" => f.learning_rate = v.parse()?,
                    "batch_size" => f.batch_size = v.parse()?,
                    "train_encoder" => f.train_encoder = v.bool()?,
                    _ => return Err(unknown()),
                }
            }
            other => return Err(ConfigError::UnknownSection(other.into())),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn sections_and_lists() {
        let cfg = Config::parse(
            "[geometry]\naltitude_km = 550\nelevation_deg = 30\n[sweep]\nchannels = rician\nks = 32, 128\npsnr_grid = 0, inf\n[csa]\nrounds = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.link.geometry.altitude_km, 550.0);
        assert!((cfg.link.geometry.elevation_rad - std::f64::consts::FRAC_PI_6).abs() < 1e-15);
        assert_eq!(cfg.experiment.channels, vec![ChannelKind::LeoRician]);
        assert_eq!(cfg.experiment.ks, vec![32, 128]);
        assert_eq!(cfg.experiment.psnr_grid, vec![0.0, f64::INFINITY]);
        assert_eq!(cfg.rounds, 7);
    }

    #[test]
    fn typos_are_rejected() {
        assert!(matches!(Config::parse("[geometry]\naltitude = 1\n"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(Config::parse("[geometri]\n"), Err(ConfigError::UnknownSection(_))));
        assert!(matches!(Config::parse("[sweep]\ntrials = many\n"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::parse("[sweep]\nchannels = rice\n"), Err(ConfigError::BadValue { .. })));
    }
}
