//! The minimax training loop.
//!
//! Per minibatch: roll out the sampler, take one energy step against the
//! detached terminal states, sweep the value functions from `t = T-1` down to
//! `0`, take one sampler step at a uniformly drawn `t`, then refresh the
//! velocity-regularizer scales `s_t²`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::{
    self, conditional_entropy_on_tape, draw_noise, step_on_tape, InitKind, NoiseSchedule, SamplerParams, SamplerSpec,
    SamplerVars, Trajectory,
};
use crate::energy::{ebm_loss, running_costs, td_residual_loss, EnergyValue, EvVars, TimeCost, ValueMode};
use crate::error::{Error, Result};
use crate::eval::{auc, sliced_wasserstein2, Projections, ScoredSet};
use crate::nets::{Activation, MlpSpec, ParamBundle, TimeConditionedNet};
use crate::optim::Optimizer;
use crate::rng::{Rng, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Width of the sinusoidal time embedding; 0 makes the net time-independent.
    pub embed_dim: usize,
    pub final_layer_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden: vec![128, 128], activation: Activation::Silu, embed_dim: 64, final_layer_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mu_net: NetConfig,
    pub value_net: NetConfig,
    /// Only used in separate mode; `embed_dim` is ignored.
    pub energy_net: NetConfig,
    pub mode: ValueMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mu_net: NetConfig { final_layer_scale: 1e-3, ..NetConfig::default() },
            value_net: NetConfig::default(),
            energy_net: NetConfig { embed_dim: 0, ..NetConfig::default() },
            mode: ValueMode::Shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Length of a longer linear base schedule to take the `T` levels
    /// from; unset means the `T`-point linear grid itself.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_steps: Option<usize>,
    pub beta_start: f64,
    pub beta_end: f64,
    pub init_kind: InitKind,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { horizon: 5, base_steps: None, beta_start: 1e-4, beta_end: 0.2, init_kind: InitKind::StandardNormal }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Value targets carry the entropy and velocity running costs.
    RunningCost,
    /// Value targets carry a fixed time cost `R(t)`.
    TimeCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dataset: Dataset,
    pub train_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub algorithm: Algorithm,
    /// Entropy temperature.
    pub tau1: f64,
    /// Velocity temperature.
    pub tau2: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// When false, `s_t` stays at its initial value `σ_t`.
    pub avr: bool,
    pub time_cost: TimeCost,
    pub lr_sampler: f64,
    pub lr_value: f64,
    pub lr_energy: f64,
    pub lr_log_sigma: f64,
    pub pretrain_epochs: usize,
    pub lr_pretrain: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: Dataset::EightGaussians,
            train_size: 10_000,
            batch_size: 256,
            epochs: 100,
            algorithm: Algorithm::RunningCost,
            tau1: 0.1,
            tau2: 0.1,
            gamma: 1.0,
            alpha: 0.99,
            avr: true,
            time_cost: TimeCost::Linear { c: 0.05 },
            lr_sampler: 3e-4,
            lr_value: 3e-3,
            lr_energy: 3e-3,
            lr_log_sigma: 3e-2,
            pretrain_epochs: 0,
            lr_pretrain: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("gamma", self.gamma),
            ("lr_sampler", self.lr_sampler),
            ("lr_value", self.lr_value),
            ("lr_energy", self.lr_energy),
            ("lr_log_sigma", self.lr_log_sigma),
            ("lr_pretrain", self.lr_pretrain),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Auxiliary Gaussian scales `s_t²`, maintained as an exponential moving
/// average of the per-dimension squared step length.
#[derive(Debug, Clone, PartialEq)]
pub struct AvrState {
    pub s_sq: Vec<f64>,
    pub alpha: f64,
}

impl AvrState {
    /// `s_t ← σ_t`.
    pub fn init(params: &SamplerParams, alpha: f64) -> Self {
        Self { s_sq: params.log_sigma.iter().map(|ls| (2.0 * ls).exp()).collect(), alpha }
    }

    /// `s_t² ← α s_t² + (1 − α) mean‖x_{t+1} − x_t‖² / D`.
    pub fn update(&mut self, traj: &Trajectory) {
        for t in 0..self.s_sq.len() {
            self.update_step(t, traj.mean_sq_disp_per_dim(t));
        }
    }

    pub fn update_step(&mut self, t: usize, mean_sq_disp_per_dim: f64) {
        self.s_sq[t] = self.alpha * self.s_sq[t] + (1.0 - self.alpha) * mean_sq_disp_per_dim;
    }
}

/// One-step policy improvement objective at step `t`:
///
/// `mean V^{t+1}(x_{t+1}(φ)) − τ₁ H_t(σ_t) + τ₂/(2 s_t²) mean ‖x_{t+1}(φ) − x_t‖²`
///
/// with `x_{t+1}(φ)` reparametrized through `eps` and `x_t` a constant. The
/// entropy is the closed form, i.e. `−E[log π]`.
#[allow(clippy::too_many_arguments)]
pub fn policy_improvement_loss(
    tape: &mut Tape,
    spec: &SamplerSpec,
    sampler: &SamplerParams,
    svars: &SamplerVars,
    ev: &EnergyValue,
    evvars: &EvVars,
    x_t: &Tensor,
    t: usize,
    eps: &Tensor,
    s_sq: f64,
    tau1: f64,
    tau2: f64,
) -> Result<Var> {
    if !(s_sq > 0.0) {
        return Err(Error::Invalid(format!("s_t² must be positive, got {s_sq}")));
    }
    let x = tape.constant(x_t.clone());
    let next = step_on_tape(tape, spec, sampler, svars, x, t, eps)?;
    let v = ev.value_on_tape(tape, evvars, next, t + 1)?;
    let mv = tape.mean(v);
    let ls = tape.index(svars.log_sigma, t)?;
    let h = conditional_entropy_on_tape(tape, ls, spec.dim);
    let ent = tape.scale(h, -tau1);
    let d = tape.sub(next, x)?;
    let d2 = tape.square(d);
    let rs = tape.row_sum(d2);
    let vel = tape.mean(rs);
    let vel = tape.scale(vel, tau2 / (2.0 * s_sq));
    let a = tape.add(mv, ent)?;
    let loss = tape.add(a, vel)?;
    if !tape.value(loss).is_finite() {
        return Err(Error::NonFinite("policy improvement loss".into()));
    }
    Ok(loss)
}

/// What happened inside one minibatch, in order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Rollout,
    EnergyUpdate,
    /// `cost` is the batch-mean per-step cost used in the TD target.
    ValueUpdate { t: usize, cost: f64 },
    SamplerUpdate(usize),
    AvrUpdate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: u64,
    pub energy_data: f64,
    pub energy_neg: f64,
    pub ebm_loss: f64,
    pub td_loss: f64,
    pub policy_loss: f64,
    pub mean_logsigma: f64,
    pub sw: Option<f64>,
    pub auc: Option<f64>,
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub spec: SamplerSpec,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerParams,
    pub ev: EnergyValue,
    pub opt_mu: Optimizer,
    pub opt_log_sigma: Optimizer,
    pub opt_value: Optimizer,
    /// Present in separate mode only.
    pub opt_energy: Option<Optimizer>,
    pub avr: AvrState,
    pub data_rng: Rng,
    pub rollout_rng: Rng,
    pub train_data: Tensor,
    pub step: u64,
    pub epoch: u64,
}

fn build_net(dim: usize, horizon: usize, cfg: &NetConfig, output_dim: usize) -> Result<TimeConditionedNet> {
    TimeConditionedNet::new(dim, cfg.embed_dim, horizon, cfg.hidden.clone(), output_dim, cfg.activation, cfg.final_layer_scale)
}

impl TrainState {
    /// Fresh models and optimizers for a run with the given seed.
    pub fn new(seed: u64, sampler_cfg: &SamplerConfig, model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        train.validate()?;
        let dim = train.dataset.dim();
        let horizon = sampler_cfg.horizon;
        let base = sampler_cfg.base_steps.unwrap_or(horizon);
        let schedule = NoiseSchedule::subsampled(base, sampler_cfg.beta_start, sampler_cfg.beta_end, horizon)?;
        let (spec, log_sigma) = SamplerSpec::from_schedule(&schedule, dim, sampler_cfg.init_kind)?;

        let mu_net = build_net(dim, horizon, &model.mu_net, dim)?;
        let mu = mu_net.init(seed)?;
        let sampler = SamplerParams { net: mu_net, mu, log_sigma };

        let value_net = build_net(dim, horizon, &model.value_net, 1)?;
        let value = value_net.init(seed.wrapping_add(1))?;
        let ev = match model.mode {
            ValueMode::Shared => EnergyValue::shared(value_net, value)?,
            ValueMode::Separate => {
                let espec = MlpSpec {
                    input_dim: dim,
                    hidden_dims: model.energy_net.hidden.clone(),
                    output_dim: 1,
                    activation: model.energy_net.activation,
                    final_layer_scale: model.energy_net.final_layer_scale,
                };
                let e = espec.init(seed.wrapping_add(2))?;
                EnergyValue::separate(value_net, value, espec, e)?
            }
        };

        let opt_mu = Optimizer::adam(train.lr_sampler, &sampler.mu.tensors);
        let opt_log_sigma = Optimizer::adam(train.lr_log_sigma, &[sampler.log_sigma_tensor()]);
        let opt_value = Optimizer::adam(train.lr_value, &ev.value.tensors);
        let opt_energy = ev.energy.as_ref().map(|e| Optimizer::adam(train.lr_energy, &e.tensors));
        let avr = AvrState::init(&sampler, train.alpha);
        let train_data = train.dataset.sample(train.train_size, &mut Rng::stream(seed, Stream::Data, 0));

        Ok(Self {
            spec,
            schedule,
            sampler,
            ev,
            opt_mu,
            opt_log_sigma,
            opt_value,
            opt_energy,
            avr,
            data_rng: Rng::stream(seed, Stream::Data, 1),
            rollout_rng: Rng::stream(seed, Stream::Rollout, 0),
            train_data,
            step: 0,
            epoch: 0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn mean_log_sigma(&self) -> f64 {
        self.sampler.log_sigma.iter().sum::<f64>() / self.sampler.log_sigma.len() as f64
    }

    /// Shuffled minibatch index lists for one pass over the training set.
    /// A trailing partial batch is dropped.
    fn epoch_batches(&mut self, batch: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.train_data.rows()).collect();
        self.data_rng.shuffle(&mut idx);
        idx.chunks_exact(batch).map(<[usize]>::to_vec).collect()
    }

    pub fn rollout(&mut self, batch: usize, data: Option<&Tensor>) -> Result<Trajectory> {
        diffusion::sample_trajectory(&self.spec, &self.sampler, batch, &mut self.rollout_rng, data)
    }

    /// One step on the energy objective; `x_neg` is treated as a constant.
    pub fn energy_update(&mut self, x_data: &Tensor, x_neg: &Tensor, gamma: f64) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let vars = self.ev.bind(&mut tape, true);
        let terms = ebm_loss(&mut tape, &self.ev, &vars, x_data, x_neg, gamma)?;
        let loss = tape.value(terms.loss).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite("energy loss".into()));
        }
        let grads = tape.backward(terms.loss)?;
        let evars = self.ev.energy_vars(&vars);
        let g = grads.wrt_all(&evars);
        match self.ev.mode {
            ValueMode::Shared => self.opt_value.step(&mut self.ev.value.tensors, &g)?,
            ValueMode::Separate => {
                let opt = self.opt_energy.as_mut().expect("separate mode has an energy optimizer");
                opt.step(&mut self.ev.energy.as_mut().unwrap().tensors, &g)?
            }
        }
        Ok((loss, terms.energy_data, terms.energy_neg))
    }

    /// Per-row cost entering the TD target at step `t`.
    pub fn td_costs(&self, traj: &Trajectory, t: usize, cfg: &TrainConfig) -> Result<Vec<f64>> {
        Ok(match cfg.algorithm {
            Algorithm::RunningCost => running_costs(traj, t, self.avr.s_sq[t], cfg.tau1, cfg.tau2),
            Algorithm::TimeCost => vec![cfg.time_cost.at(t, self.horizon())?; traj.batch()],
        })
    }

    /// One TD step for `V^t`. Returns the loss before the step and the
    /// batch-mean cost.
    pub fn value_update(&mut self, traj: &Trajectory, t: usize, cfg: &TrainConfig) -> Result<(f64, f64)> {
        let cost = self.td_costs(traj, t, cfg)?;
        let mut tape = Tape::new();
        let vars = self.ev.bind(&mut tape, true);
        let loss = td_residual_loss(&mut tape, &self.ev, &vars, &traj.states[t], &traj.states[t + 1], t, &cost, true)?;
        let l = tape.value(loss).item();
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("TD loss at t = {t}")));
        }
        let g = tape.backward(loss)?.wrt_all(&vars.value);
        self.opt_value.step(&mut self.ev.value.tensors, &g)?;
        let mean = match cfg.algorithm {
            // Constant across the batch; report it without rounding.
            Algorithm::TimeCost => cost[0],
            Algorithm::RunningCost => cost.iter().sum::<f64>() / cost.len() as f64,
        };
        Ok((l, mean))
    }

    /// One policy-improvement step at step `t` from detached states `x_t`.
    pub fn sampler_update(&mut self, x_t: &Tensor, t: usize, cfg: &TrainConfig) -> Result<f64> {
        let eps = draw_noise(&mut self.rollout_rng, x_t.rows(), self.spec.dim);
        let mut tape = Tape::new();
        let svars = SamplerVars::bind(&self.sampler, &mut tape, true);
        let evvars = self.ev.bind(&mut tape, false);
        let loss = policy_improvement_loss(
            &mut tape,
            &self.spec,
            &self.sampler,
            &svars,
            &self.ev,
            &evvars,
            x_t,
            t,
            &eps,
            self.avr.s_sq[t],
            cfg.tau1,
            cfg.tau2,
        )?;
        let l = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let gmu = grads.wrt_all(&svars.mu);
        let gls = grads.wrt(svars.log_sigma);
        self.opt_mu.step(&mut self.sampler.mu.tensors, &gmu)?;
        let mut ls = [self.sampler.log_sigma_tensor()];
        self.opt_log_sigma.step(&mut ls, &[gls])?;
        self.sampler.log_sigma = ls[0].data().to_vec();
        if self.sampler.log_sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("log sigma".into()));
        }
        Ok(l)
    }

    /// Rollout → energy → value sweep (t descending) → sampler at random t → AVR.
    pub fn train_minibatch(&mut self, x_data: &Tensor, cfg: &TrainConfig, events: &mut Vec<Event>) -> Result<MetricsRow> {
        let batch = x_data.rows();
        let horizon = self.horizon();
        let init_data = matches!(self.spec.init, InitKind::DataPlusNoise { .. }).then_some(x_data);
        let traj = self.rollout(batch, init_data)?;
        events.push(Event::Rollout);

        let (ebm, e_data, e_neg) = self.energy_update(x_data, traj.terminal(), cfg.gamma)?;
        events.push(Event::EnergyUpdate);

        let mut td = 0.0;
        for t in (0..horizon).rev() {
            let (l, cost) = self.value_update(&traj, t, cfg)?;
            td += l;
            events.push(Event::ValueUpdate { t, cost });
        }

        let t = self.rollout_rng.below(horizon);
        let policy = self.sampler_update(&traj.states[t], t, cfg)?;
        events.push(Event::SamplerUpdate(t));

        if cfg.avr {
            self.avr.update(&traj);
        }
        events.push(Event::AvrUpdate);

        self.step += 1;
        Ok(MetricsRow {
            step: self.step,
            epoch: self.epoch,
            energy_data: e_data,
            energy_neg: e_neg,
            ebm_loss: ebm,
            td_loss: td / horizon as f64,
            policy_loss: policy,
            mean_logsigma: self.mean_log_sigma(),
            sw: None,
            auc: None,
        })
    }

    /// One pass over the training set. Rows are appended to `rows` as they
    /// are produced, so they survive a divergence error.
    pub fn train_epoch(&mut self, cfg: &TrainConfig, rows: &mut Vec<MetricsRow>, events: Option<&mut Vec<Vec<Event>>>) -> Result<()> {
        let batches = self.epoch_batches(cfg.batch_size);
        let mut log = events;
        for idx in batches {
            let x = self.train_data.gather_rows(&idx);
            let mut ev = Vec::with_capacity(self.horizon() + 4);
            let row = self.train_minibatch(&x, cfg, &mut ev).map_err(|e| Error::Divergence {
                step: self.step + 1,
                reason: e.to_string(),
            })?;
            rows.push(row);
            if let Some(log) = log.as_deref_mut() {
                log.push(ev);
            }
        }
        self.epoch += 1;
        Ok(())
    }

    /// Denoising pretraining of the drift network; `σ_t` is left alone.
    /// Returns the mean loss of each epoch.
    pub fn pretrain_ddpm(&mut self, epochs: usize, lr: f64, batch: usize, seed: u64) -> Result<Vec<f64>> {
        let mut opt = Optimizer::adam(lr, &self.sampler.mu.tensors);
        let mut rng = Rng::stream(seed, Stream::Init, 7);
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut idx: Vec<usize> = (0..self.train_data.rows()).collect();
            rng.shuffle(&mut idx);
            let mut total = 0.0;
            let mut count = 0;
            for chunk in idx.chunks_exact(batch) {
                let x = self.train_data.gather_rows(chunk);
                let mut tape = Tape::new();
                let vars = self.sampler.mu.bind(&mut tape, true);
                let loss = diffusion::ddpm_pretrain_loss(&mut tape, &self.spec, &self.schedule, &self.sampler, &vars, &x, &mut rng)?;
                let l = tape.value(loss).item();
                if !l.is_finite() {
                    return Err(Error::Divergence { step: count as u64, reason: "pretraining loss is not finite".into() });
                }
                let g = tape.backward(loss)?.wrt_all(&vars);
                opt.step(&mut self.sampler.mu.tensors, &g)?;
                total += l;
                count += 1;
            }
            losses.push(if count > 0 { total / count as f64 } else { 0.0 });
        }
        Ok(losses)
    }

    /// `n` terminal samples.
    pub fn generate(&self, n: usize, rng: &mut Rng, init_data: Option<&Tensor>) -> Result<Tensor> {
        let traj = diffusion::sample_trajectory(&self.spec, &self.sampler, n, rng, init_data)?;
        Ok(traj.terminal().clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub projections: usize,
    pub samples: usize,
    pub noise_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { projections: 1000, samples: 10_000, noise_samples: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub sw: f64,
    pub auc: f64,
}

/// Sliced Wasserstein of generated vs held-out data (coordinates divided by
/// the dataset scale) and energy AUC of held-out data vs uniform noise.
///
/// Projections and held-out data come from `seed`; fresh samples and noise
/// from `(seed, index)`, so different evaluations of one run share their
/// projection set.
pub fn evaluate(state: &TrainState, dataset: Dataset, cfg: &EvalConfig, seed: u64, index: u64) -> Result<EvalResult> {
    let sw = sample_sw(state, dataset, cfg, seed, index)?;
    let auc = energy_auc(|x| state.ev.energy_eval(x), dataset, cfg, seed, index)?;
    Ok(EvalResult { sw, auc })
}

fn held_out(dataset: Dataset, cfg: &EvalConfig, seed: u64) -> Tensor {
    dataset.sample(cfg.samples, &mut Rng::stream(seed, Stream::HeldOut, 0))
}

/// The SW half of [`evaluate`].
pub fn sample_sw(state: &TrainState, dataset: Dataset, cfg: &EvalConfig, seed: u64, index: u64) -> Result<f64> {
    let data = held_out(dataset, cfg, seed);
    let mut rng = Rng::stream(seed, Stream::Eval, index);
    let init_data = matches!(state.spec.init, InitKind::DataPlusNoise { .. }).then_some(&data);
    let gen = state.generate(cfg.samples, &mut rng, init_data)?;
    let scale = dataset.scale();
    let proj = Projections::new(cfg.projections, dataset.dim(), seed)?;
    sliced_wasserstein2(&gen.map(|v| v / scale), &data.map(|v| v / scale), &proj)
}

/// The AUC half of [`evaluate`] for any energy: held-out data against
/// uniform noise on the dataset's domain, lower energy meaning more data-like.
pub fn energy_auc(
    energy: impl Fn(&Tensor) -> Result<Vec<f64>>,
    dataset: Dataset,
    cfg: &EvalConfig,
    seed: u64,
    index: u64,
) -> Result<f64> {
    let data = held_out(dataset, cfg, seed);
    let noise = dataset.domain().sample(cfg.noise_samples, &mut Rng::stream(seed, Stream::Noise, index));
    auc(&ScoredSet::from_energies(&energy(&data)?, &energy(&noise)?))
}

/// Parameter bundle for the sampler's `log σ` vector, keyed like the nets.
pub fn log_sigma_bundle(params: &SamplerParams) -> ParamBundle {
    ParamBundle::new(vec!["log_sigma".into()], vec![params.log_sigma_tensor()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> (SamplerConfig, ModelConfig, TrainConfig) {
        let net = NetConfig { hidden: vec![16], activation: Activation::Silu, embed_dim: 8, final_layer_scale: 1.0 };
        let model = ModelConfig {
            mu_net: NetConfig { final_layer_scale: 1e-3, ..net.clone() },
            value_net: net.clone(),
            energy_net: NetConfig { embed_dim: 0, ..net },
            mode: ValueMode::Shared,
        };
        let train = TrainConfig { train_size: 64, batch_size: 16, epochs: 1, ..TrainConfig::default() };
        (SamplerConfig::default(), model, train)
    }

    #[test]
    fn avr_init_and_fixed_point() {
        let (s, m, t) = small_cfg();
        let mut st = TrainState::new(0, &s, &m, &t).unwrap();
        st.sampler.log_sigma = vec![0.1f64.ln(), 0.2f64.ln()];
        let mut avr = AvrState::init(&st.sampler, 0.99);
        assert!((avr.s_sq[0] - 0.01).abs() < 1e-15 && (avr.s_sq[1] - 0.04).abs() < 1e-15);
        avr.s_sq = vec![1.0, 1.0];
        avr.update_step(0, 1.0);
        assert_eq!(avr.s_sq[0], 1.0);
    }

    #[test]
    fn event_order_per_minibatch() {
        let (s, m, t) = small_cfg();
        let mut st = TrainState::new(1, &s, &m, &t).unwrap();
        let mut rows = vec![];
        let mut log = vec![];
        st.train_epoch(&t, &mut rows, Some(&mut log)).unwrap();
        assert_eq!(rows.len(), 4);
        for ev in &log {
            assert_eq!(ev[0], Event::Rollout);
            assert_eq!(ev[1], Event::EnergyUpdate);
            let ts: Vec<usize> = ev[2..7]
                .iter()
                .map(|e| match e {
                    Event::ValueUpdate { t, .. } => *t,
                    other => panic!("unexpected {other:?}"),
                })
                .collect();
            assert_eq!(ts, vec![4, 3, 2, 1, 0]);
            assert!(matches!(ev[7], Event::SamplerUpdate(t) if t < 5));
            assert_eq!(ev[8], Event::AvrUpdate);
            assert_eq!(ev.len(), 9);
        }
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig { alpha: 1.5, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { lr_value: -1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
