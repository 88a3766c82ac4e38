//! Experiment configuration files.
//!
//! ```toml
//! version = 1
//! seeds = [0, 1, 2, 3]
//!
//! [channel]
//! scenario = "indoor-like"
//! Nc = 32
//!
//! [model]
//! compression = 4
//!
//! [train]
//! epochs = 100
//! mimic_epochs = 20
//! ```
//!
//! Every key is optional except `version`; unknown keys are rejected.

use std::path::{Path, PathBuf};

use cmfeedback::data::{ChannelConfig, Scenario};
use cmfeedback::distill::{Anneal, LrSettings, Pipeline, SchedulerKind, TrainPlan};
use cmfeedback::nn::CsiDims;
use cmfeedback::Error;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub scenario: Scenario,
    #[serde(rename = "Nbar_c")]
    pub subcarriers: usize,
    #[serde(rename = "Nc")]
    pub nc: usize,
    #[serde(rename = "Nt")]
    pub nt: usize,
    pub paths: Option<usize>,
    pub clusters: Option<usize>,
    pub delay_spread_s: Option<f64>,
    pub bandwidth_hz: Option<f64>,
    pub carrier_hz: Option<f64>,
    /// Seed of the channel generator, independent of training seeds.
    pub seed: u64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            scenario: Scenario::IndoorLike,
            subcarriers: 1024,
            nc: 32,
            nt: 32,
            paths: None,
            clusters: None,
            delay_spread_s: None,
            bandwidth_hz: None,
            carrier_hz: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_train: usize,
    pub n_test: usize,
    /// Dataset files; when absent the data are generated from `[channel]`.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { n_train: 5000, n_test: 1000, train: None, test: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    /// Full-precision CRNet encoder.
    Teacher,
    /// BCRNet encoder with a binarized FC layer.
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Inverse compression ratio, `1 / eta`.
    pub compression: Option<usize>,
    /// Codeword length `M`; exclusive with `compression`.
    pub codeword_size: Option<usize>,
    pub network: NetworkKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { compression: None, codeword_size: None, network: NetworkKind::Student }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    /// Epochs of the teacher run; defaults to `epochs`.
    pub teacher_epochs: Option<usize>,
    #[serde(alias = "T_cm")]
    pub mimic_epochs: usize,
    pub batch_size: usize,
    pub alpha0: f64,
    pub alpha_scheduler: SchedulerKind,
    pub kd_beta0: Option<f64>,
    pub warmup_epochs: usize,
    pub lr_benchmark: [f64; 2],
    pub lr_mimic: [f64; 2],
    pub lr_explore_decoder: [f64; 2],
    pub lr_explore_encoder: [f64; 2],
}

impl Default for TrainSection {
    fn default() -> Self {
        let lr = LrSettings::default();
        let pair = |a: Anneal| [a.start, a.end];
        let plan = TrainPlan::default();
        TrainSection {
            epochs: plan.epochs,
            teacher_epochs: None,
            mimic_epochs: plan.mimic_epochs,
            batch_size: plan.batch_size,
            alpha0: plan.alpha0,
            alpha_scheduler: plan.alpha_scheduler,
            kd_beta0: None,
            warmup_epochs: lr.warmup_epochs,
            lr_benchmark: pair(lr.benchmark),
            lr_mimic: pair(lr.mimic),
            lr_explore_decoder: pair(lr.explore_decoder),
            lr_explore_encoder: pair(lr.explore_encoder),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // Name the offending key when toml reports one.
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
                .unwrap_or("config")
                .to_string();
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Checks every section so that no command starts work on a bad file.
    pub fn validate(&self) -> Result<(), Error> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        self.channel_config()?.validate()?;
        if self.data.n_train == 0 {
            return Err(Error::config("n_train", "must be at least 1"));
        }
        if self.data.n_test == 0 {
            return Err(Error::config("n_test", "must be at least 1"));
        }
        self.codeword_size()?;
        self.train_plan(Pipeline::Plain, self.seeds[0])?.validate()?;
        self.train_plan(Pipeline::CodewordMimic, self.seeds[0])?.validate()?;
        if self.train.teacher_epochs == Some(0) {
            log::warn!("teacher_epochs = 0 leaves the teacher untrained");
        }
        Ok(())
    }

    pub fn dims(&self) -> CsiDims {
        CsiDims { nc: self.channel.nc, nt: self.channel.nt }
    }

    pub fn channel_config(&self) -> Result<ChannelConfig, Error> {
        let c = &self.channel;
        let mut cfg = ChannelConfig::new(c.scenario);
        if let Some(b) = c.bandwidth_hz {
            cfg.bandwidth_hz = b;
        }
        cfg = cfg.with_dims(c.subcarriers, c.nc, c.nt);
        if let Some(p) = c.paths {
            cfg.paths = p;
        }
        if let Some(k) = c.clusters {
            cfg.clusters = k;
        }
        if let Some(d) = c.delay_spread_s {
            cfg.delay_spread_s = d;
        }
        if let Some(f) = c.carrier_hz {
            cfg.carrier_hz = f;
        }
        cfg.seed = c.seed;
        Ok(cfg)
    }

    pub fn codeword_size(&self) -> Result<usize, Error> {
        let real = self.dims().real_len();
        let m = match (self.model.compression, self.model.codeword_size) {
            (Some(_), Some(_)) => {
                return Err(Error::config("codeword_size", "give either compression or codeword_size, not both"))
            }
            (Some(0), None) => return Err(Error::config("compression", "must be positive")),
            (Some(k), None) => {
                if real % k != 0 {
                    return Err(Error::config("compression", format!("1/{k} of {real} is not an integer")));
                }
                real / k
            }
            (None, Some(m)) => m,
            (None, None) => real / 4,
        };
        if m == 0 || m >= real {
            return Err(Error::config("codeword_size", format!("M = {m} must lie in 1..{real}")));
        }
        Ok(m)
    }

    pub fn lr_settings(&self) -> LrSettings {
        let t = &self.train;
        let a = |p: [f64; 2]| Anneal::new(p[0], p[1]);
        LrSettings {
            benchmark: a(t.lr_benchmark),
            warmup_epochs: t.warmup_epochs,
            mimic: a(t.lr_mimic),
            explore_decoder: a(t.lr_explore_decoder),
            explore_encoder: a(t.lr_explore_encoder),
        }
    }

    pub fn train_plan(&self, pipeline: Pipeline, seed: u64) -> Result<TrainPlan, Error> {
        let t = &self.train;
        let plan = TrainPlan {
            pipeline,
            epochs: t.epochs,
            mimic_epochs: t.mimic_epochs,
            batch_size: t.batch_size,
            alpha0: t.alpha0,
            alpha_scheduler: t.alpha_scheduler,
            kd_beta0: t.kd_beta0,
            lr: self.lr_settings(),
            adam: Default::default(),
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn teacher_plan(&self, seed: u64) -> Result<TrainPlan, Error> {
        let mut plan = self.train_plan(Pipeline::Plain, seed)?;
        plan.epochs = self.train.teacher_epochs.unwrap_or(self.train.epochs);
        plan.mimic_epochs = 0;
        Ok(plan)
    }

    pub fn scenario_name(&self) -> String {
        serde_json::to_value(self.channel.scenario)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_else(|| "unknown".into())
    }
}
