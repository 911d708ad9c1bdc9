//! The run configuration file.
//!
//! Every section has defaults, so `{}` is a valid config describing the
//! default 8-Gaussians run. Unknown keys are errors.

use dxmi_core::data::Dataset;
use dxmi_core::diffusion::InitKind;
use dxmi_core::energy::TimeCost;
use dxmi_core::trainer::{Algorithm, EvalConfig, ModelConfig, SamplerConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub sampler: SamplerSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub guidance: Guidance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
}

impl Default for Experiment {
    fn default() -> Self {
        Self { name: "dxmi-8gaussians".into(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Take the `T` levels from a longer linear schedule of this length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_steps: Option<usize>,
}

impl Default for Schedule {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self { kind: ScheduleKind::Linear, beta_start: s.beta_start, beta_end: s.beta_end, base_steps: s.base_steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Data dimension; must match the dataset.
    #[serde(rename = "D")]
    pub dim: usize,
    pub schedule: Schedule,
    pub init_kind: InitKind,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self { horizon: s.horizon, dim: 2, schedule: Schedule::default(), init_kind: s.init_kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lrs {
    pub sampler: f64,
    pub value: f64,
    pub energy: f64,
    pub log_sigma: f64,
    pub pretrain: f64,
}

impl Default for Lrs {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            sampler: t.lr_sampler,
            value: t.lr_value,
            energy: t.lr_energy,
            log_sigma: t.lr_log_sigma,
            pretrain: t.lr_pretrain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pretrain {
    pub enabled: bool,
    pub epochs: usize,
}

impl Default for Pretrain {
    fn default() -> Self {
        Self { enabled: false, epochs: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub dataset: Dataset,
    pub train_size: usize,
    pub epochs: usize,
    pub batch: usize,
    pub algorithm: Algorithm,
    pub lrs: Lrs,
    pub tau1: f64,
    pub tau2: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub avr: bool,
    pub time_cost: TimeCost,
    pub pretrain: Pretrain,
    /// Evaluate every this many epochs (and always after the last); 0 means only after the last.
    pub eval_every: usize,
    /// Write `checkpoints/epoch_XXXX.json` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dataset: t.dataset,
            train_size: t.train_size,
            epochs: t.epochs,
            batch: t.batch_size,
            algorithm: t.algorithm,
            lrs: Lrs::default(),
            tau1: t.tau1,
            tau2: t.tau2,
            gamma: t.gamma,
            alpha: t.alpha,
            avr: t.avr,
            time_cost: t.time_cost,
            pretrain: Pretrain::default(),
            eval_every: 10,
            checkpoint_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwSection {
    pub projections: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AucSection {
    pub noise_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub sw: SwSection,
    pub auc: AucSection,
}

impl Default for SwSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self { projections: e.projections, samples: e.samples }
    }
}

impl Default for AucSection {
    fn default() -> Self {
        Self { noise_samples: EvalConfig::default().noise_samples }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { sw: SwSection::default(), auc: AucSection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Guidance {
    pub lambda: f64,
}

impl RunConfig {
    /// Parses and validates. Errors name the offending JSON path.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let want = self.train.dataset.dim();
        if self.sampler.dim != want {
            return Err(CliError::Config(format!("sampler.D is {} but the dataset has dimension {want}", self.sampler.dim)));
        }
        if self.sampler.horizon == 0 {
            return Err(CliError::Config("sampler.T must be >= 1".into()));
        }
        if !(self.guidance.lambda >= 0.0) {
            return Err(CliError::Config(format!("guidance.lambda must be >= 0, got {}", self.guidance.lambda)));
        }
        let e = self.eval_config();
        if e.projections == 0 || e.samples == 0 || e.noise_samples == 0 {
            return Err(CliError::Config("eval sizes must be >= 1".into()));
        }
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            horizon: s.horizon,
            base_steps: s.schedule.base_steps,
            beta_start: s.schedule.beta_start,
            beta_end: s.schedule.beta_end,
            init_kind: s.init_kind,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            dataset: t.dataset,
            train_size: t.train_size,
            batch_size: t.batch,
            epochs: t.epochs,
            algorithm: t.algorithm,
            tau1: t.tau1,
            tau2: t.tau2,
            gamma: t.gamma,
            alpha: t.alpha,
            avr: t.avr,
            time_cost: t.time_cost,
            lr_sampler: t.lrs.sampler,
            lr_value: t.lrs.value,
            lr_energy: t.lrs.energy,
            lr_log_sigma: t.lrs.log_sigma,
            pretrain_epochs: if t.pretrain.enabled { t.pretrain.epochs } else { 0 },
            lr_pretrain: t.lrs.pretrain,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { projections: self.eval.sw.projections, samples: self.eval.sw.samples, noise_samples: self.eval.auc.noise_samples }
    }

    /// Whether `other` builds models of the same architecture on the same data.
    pub fn same_model(&self, other: &RunConfig) -> bool {
        self.sampler == other.sampler && self.model == other.model && self.train.dataset == other.train.dataset
    }
}
