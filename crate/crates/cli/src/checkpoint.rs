//! Bit-exact checkpoints.
//!
//! Every float is stored as the 16 hex digits of its IEEE-754 bits, so a
//! round trip never depends on decimal formatting. Architecture and data are
//! rebuilt from the config echo; the checkpoint then overwrites parameters,
//! optimizer moments, AVR scales, RNG positions and counters.

use std::collections::BTreeMap;
use std::path::Path;

use dxmi_core::nets::ParamBundle;
use dxmi_core::optim::Optimizer;
use dxmi_core::rng::{Rng, RngState};
use dxmi_core::trainer::TrainState;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<String>>,
    pub v: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngStates {
    pub data: RngState,
    pub rollout: RngState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    /// The config the run was built from, with the effective seed.
    pub config: RunConfig,
    pub params: BTreeMap<String, Vec<String>>,
    pub optimizer: BTreeMap<String, OptimizerState>,
    pub avr: Vec<String>,
    pub rng: RngStates,
    pub step: u64,
    pub epoch: u64,
}

pub fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub fn unhex(s: &str) -> Result<f64, CliError> {
    if s.len() != 16 {
        return Err(CliError::Checkpoint(format!("`{s}` is not 16 hex digits")));
    }
    u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|_| CliError::Checkpoint(format!("`{s}` is not hex")))
}

fn hex_all(xs: &[f64]) -> Vec<String> {
    xs.iter().map(|&v| hex(v)).collect()
}

fn unhex_into(dst: &mut [f64], src: &[String], what: &str) -> Result<(), CliError> {
    if dst.len() != src.len() {
        return Err(CliError::Checkpoint(format!("{what}: expected {} values, found {}", dst.len(), src.len())));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d = unhex(s)?;
    }
    Ok(())
}

fn put_bundle(map: &mut BTreeMap<String, Vec<String>>, prefix: &str, b: &ParamBundle) {
    for (name, t) in b.names.iter().zip(&b.tensors) {
        map.insert(format!("{prefix}/{name}"), hex_all(t.data()));
    }
}

fn take_bundle(map: &BTreeMap<String, Vec<String>>, prefix: &str, b: &mut ParamBundle) -> Result<(), CliError> {
    for (name, t) in b.names.iter().zip(b.tensors.iter_mut()) {
        let key = format!("{prefix}/{name}");
        let src = map.get(&key).ok_or_else(|| CliError::Checkpoint(format!("missing parameter `{key}`")))?;
        unhex_into(t.data_mut(), src, &key)?;
    }
    Ok(())
}

fn save_opt(o: &Optimizer) -> OptimizerState {
    OptimizerState {
        step: o.step,
        m: o.m.iter().map(|b| hex_all(b)).collect(),
        v: o.v.iter().map(|b| hex_all(b)).collect(),
    }
}

fn load_opt(o: &mut Optimizer, s: &OptimizerState, what: &str) -> Result<(), CliError> {
    if o.m.len() != s.m.len() || o.v.len() != s.v.len() {
        return Err(CliError::Checkpoint(format!("{what}: optimizer buffer count differs")));
    }
    for (d, src) in o.m.iter_mut().zip(&s.m) {
        unhex_into(d, src, what)?;
    }
    for (d, src) in o.v.iter_mut().zip(&s.v) {
        unhex_into(d, src, what)?;
    }
    o.step = s.step;
    Ok(())
}

impl Checkpoint {
    pub fn capture(state: &TrainState, config: &RunConfig) -> Self {
        let mut params = BTreeMap::new();
        put_bundle(&mut params, "mu", &state.sampler.mu);
        params.insert("log_sigma".into(), hex_all(&state.sampler.log_sigma));
        put_bundle(&mut params, "value", &state.ev.value);
        if let Some(e) = &state.ev.energy {
            put_bundle(&mut params, "energy", e);
        }
        let mut optimizer = BTreeMap::new();
        optimizer.insert("mu".into(), save_opt(&state.opt_mu));
        optimizer.insert("log_sigma".into(), save_opt(&state.opt_log_sigma));
        optimizer.insert("value".into(), save_opt(&state.opt_value));
        if let Some(o) = &state.opt_energy {
            optimizer.insert("energy".into(), save_opt(o));
        }
        Self {
            version: VERSION,
            config: config.clone(),
            params,
            optimizer,
            avr: hex_all(&state.avr.s_sq),
            rng: RngStates { data: state.data_rng.state(), rollout: state.rollout_rng.state() },
            step: state.step,
            epoch: state.epoch,
        }
    }

    /// Rebuilds the training state under `config`, which must describe the
    /// same architecture as the echo. Learning rates and other training
    /// knobs come from `config`.
    pub fn restore_with(&self, config: &RunConfig) -> Result<TrainState, CliError> {
        if !config.same_model(&self.config) {
            return Err(CliError::Config("config does not match the checkpoint's model, sampler or dataset".into()));
        }
        if config.experiment.seed != self.config.experiment.seed {
            return Err(CliError::Config(format!(
                "seed {} differs from the checkpoint's seed {}",
                config.experiment.seed, self.config.experiment.seed
            )));
        }
        let mut s = TrainState::new(
            config.experiment.seed,
            &config.sampler_config(),
            &config.model,
            &config.train_config(),
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        let p = &self.params;
        take_bundle(p, "mu", &mut s.sampler.mu)?;
        let ls = p.get("log_sigma").ok_or_else(|| CliError::Checkpoint("missing parameter `log_sigma`".into()))?;
        unhex_into(&mut s.sampler.log_sigma, ls, "log_sigma")?;
        take_bundle(p, "value", &mut s.ev.value)?;
        if let Some(e) = s.ev.energy.as_mut() {
            take_bundle(p, "energy", e)?;
        }
        let opt = |k: &str| self.optimizer.get(k).ok_or_else(|| CliError::Checkpoint(format!("missing optimizer `{k}`")));
        load_opt(&mut s.opt_mu, opt("mu")?, "mu")?;
        load_opt(&mut s.opt_log_sigma, opt("log_sigma")?, "log_sigma")?;
        load_opt(&mut s.opt_value, opt("value")?, "value")?;
        if let Some(o) = s.opt_energy.as_mut() {
            load_opt(o, opt("energy")?, "energy")?;
        }
        unhex_into(&mut s.avr.s_sq, &self.avr, "avr")?;
        let rng = |st: &RngState| Rng::from_state(st).map_err(|e| CliError::Checkpoint(e.to_string()));
        s.data_rng = rng(&self.rng.data)?;
        s.rollout_rng = rng(&self.rng.rollout)?;
        s.step = self.step;
        s.epoch = self.epoch;
        Ok(s)
    }

    pub fn restore(&self) -> Result<TrainState, CliError> {
        self.restore_with(&self.config)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let c: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Checkpoint(format!("at `{}`: {}", e.path(), e.inner())))?;
        if c.version != VERSION {
            return Err(CliError::Checkpoint(format!("unsupported version {}", c.version)));
        }
        c.config.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        crate::write_file(path, self.to_json().as_bytes())
    }
}
