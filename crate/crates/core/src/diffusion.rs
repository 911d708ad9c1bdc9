//! The T-step Gaussian sampler
//!
//! ```text
//! x_{t+1} = a_t · x_t + μ(x_t, t) + σ_t · ε_t,    ε_t ~ N(0, I)
//! ```
//!
//! Time runs from noise (`t = 0`) to sample (`t = T`). The drift is a scaled
//! network output, `μ(x, t) = m_t · net(x, t)`, and `σ_t = exp(log_sigma_t)`
//! is learned. [`SamplerSpec::from_schedule`] picks `a_t = √(1-β)`,
//! `σ_t = √β` and a drift scale under which the DDPM posterior mean is
//! reachable, so the same network supports denoising pretraining.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{ParamBundle, TimeConditionedNet};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitKind {
    StandardNormal,
    /// A data point plus isotropic Gaussian noise of the given scale.
    DataPlusNoise { std: f64 },
}

/// Forward-noising variances in DDPM order: index 0 is the least noisy step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `steps` variances spaced linearly on `[beta_start, beta_end]`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Invalid(format!("bad beta range [{beta_start}, {beta_end}]")));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_end]
        } else {
            (0..steps).map(|k| beta_start + (beta_end - beta_start) * k as f64 / (steps - 1) as f64).collect()
        };
        let mut alphas_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alphas_bar.push(acc);
        }
        Ok(Self { betas, alphas_bar })
    }

    /// A `base_steps` linear schedule cut down to `steps` levels: level `k`
    /// keeps the base `ᾱ` at index `⌈(k+1)·N/T⌉ − 1` (so the last level is
    /// the end of the base chain) and `β_k = 1 − ᾱ_k / ᾱ_{k-1}`.
    pub fn subsampled(base_steps: usize, beta_start: f64, beta_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || base_steps < steps {
            return Err(Error::Invalid(format!("cannot subsample {base_steps} steps to {steps}")));
        }
        let base = Self::linear(base_steps, beta_start, beta_end)?;
        let mut betas = Vec::with_capacity(steps);
        let mut alphas_bar = Vec::with_capacity(steps);
        let mut prev = 1.0;
        for k in 0..steps {
            let ab = base.alphas_bar[((k + 1) * base_steps).div_ceil(steps) - 1];
            betas.push(1.0 - ab / prev);
            alphas_bar.push(ab);
            prev = ab;
        }
        Ok(Self { betas, alphas_bar })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    pub horizon: usize,
    pub dim: usize,
    /// `a_t`, one per step.
    pub a: Vec<f64>,
    /// `m_t`, the fixed output scale of the drift network.
    pub mu_scale: Vec<f64>,
    pub init: InitKind,
}

impl SamplerSpec {
    pub fn new(horizon: usize, dim: usize, a: Vec<f64>, mu_scale: Vec<f64>, init: InitKind) -> Result<Self> {
        if horizon == 0 || dim == 0 {
            return Err(Error::Invalid("sampler needs T >= 1 and D >= 1".into()));
        }
        if a.len() != horizon || mu_scale.len() != horizon {
            return Err(Error::Invalid(format!("expected {horizon} coefficients per step")));
        }
        Ok(Self { horizon, dim, a, mu_scale, init })
    }

    /// Step `t` reverses schedule level `k = T-1-t` with `a_t = √α_k`,
    /// `σ_t = √β_k` (returned as `log σ`) and `m_t = β_k / √α_k`. The DDPM
    /// posterior mean `(x − β_k ε̂ / √(1-ᾱ_k)) / √α_k` is then reached by
    /// `net = x − ε̂ / √(1-ᾱ_k)`, while a zero network keeps unit variance.
    pub fn from_schedule(schedule: &NoiseSchedule, dim: usize, init: InitKind) -> Result<(Self, Vec<f64>)> {
        let horizon = schedule.len();
        let mut a = vec![0.0; horizon];
        let mut mu_scale = vec![0.0; horizon];
        let mut log_sigma = vec![0.0; horizon];
        for t in 0..horizon {
            let k = horizon - 1 - t;
            let beta = schedule.betas[k];
            let alpha = 1.0 - beta;
            a[t] = alpha.sqrt();
            mu_scale[t] = beta / alpha.sqrt();
            log_sigma[t] = 0.5 * beta.ln();
        }
        Ok((Self::new(horizon, dim, a, mu_scale, init)?, log_sigma))
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.horizon {
            return Err(Error::TimeOutOfRange { t, max: self.horizon - 1 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerParams {
    pub net: TimeConditionedNet,
    pub mu: ParamBundle,
    pub log_sigma: Vec<f64>,
}

impl SamplerParams {
    pub fn sigma(&self, t: usize) -> f64 {
        self.log_sigma[t].exp()
    }

    pub fn log_sigma_tensor(&self) -> Tensor {
        Tensor::vector(self.log_sigma.clone())
    }
}

/// Sampler parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct SamplerVars {
    pub mu: Vec<Var>,
    pub log_sigma: Var,
}

impl SamplerVars {
    pub fn bind(params: &SamplerParams, tape: &mut Tape, trainable: bool) -> Self {
        let mu = params.mu.bind(tape, trainable);
        let ls = params.log_sigma_tensor();
        let log_sigma = if trainable { tape.leaf(ls) } else { tape.constant(ls) };
        Self { mu, log_sigma }
    }
}

/// One rollout with the statistics the trainer consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0 … x_T`, each `[batch, D]`.
    pub states: Vec<Tensor>,
    /// `ε_0 … ε_{T-1}`.
    pub noises: Vec<Tensor>,
    /// `log π(x_{t+1} | x_t)` per step and row.
    pub logprob: Vec<Vec<f64>>,
    /// `‖x_{t+1} − x_t‖²` per step and row.
    pub sq_disp: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.noises.len()
    }

    pub fn batch(&self) -> usize {
        self.states[0].rows()
    }

    pub fn terminal(&self) -> &Tensor {
        self.states.last().expect("non-empty trajectory")
    }

    /// Batch mean of `‖x_{t+1} − x_t‖² / D`.
    pub fn mean_sq_disp_per_dim(&self, t: usize) -> f64 {
        let d = self.states[0].cols() as f64;
        self.sq_disp[t].iter().sum::<f64>() / (self.sq_disp[t].len() as f64 * d)
    }
}

/// One step on a tape: `a_t x + m_t net(x, t) + exp(log_sigma[t]) ε`.
pub fn step_on_tape(
    tape: &mut Tape,
    spec: &SamplerSpec,
    params: &SamplerParams,
    vars: &SamplerVars,
    x: Var,
    t: usize,
    eps: &Tensor,
) -> Result<Var> {
    let mean = mean_on_tape(tape, spec, params, vars, x, t)?;
    let ls = tape.index(vars.log_sigma, t)?;
    let sigma = tape.exp(ls);
    let e = tape.constant(eps.clone());
    let noise = tape.mul_scalar(e, sigma)?;
    tape.add(mean, noise)
}

pub fn mean_on_tape(
    tape: &mut Tape,
    spec: &SamplerSpec,
    params: &SamplerParams,
    vars: &SamplerVars,
    x: Var,
    t: usize,
) -> Result<Var> {
    spec.check_t(t)?;
    let out = params.net.forward(tape, &vars.mu, x, t)?;
    let drift = tape.scale(out, spec.mu_scale[t]);
    let ax = tape.scale(x, spec.a[t]);
    tape.add(ax, drift)
}

/// Conditional mean `a_t x + μ(x, t)` without gradient recording.
pub fn mean(spec: &SamplerSpec, params: &SamplerParams, x: &Tensor, t: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = SamplerVars::bind(params, &mut tape, false);
    let xv = tape.constant(x.clone());
    let m = mean_on_tape(&mut tape, spec, params, &vars, xv, t)?;
    Ok(tape.value(m).clone())
}

/// `x_{t+1}` from `x_t` given the noise draw.
pub fn step_with_noise(spec: &SamplerSpec, params: &SamplerParams, x: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = SamplerVars::bind(params, &mut tape, false);
    let xv = tape.constant(x.clone());
    let next = step_on_tape(&mut tape, spec, params, &vars, xv, t, eps)?;
    let out = tape.value(next).clone();
    if !out.is_finite() {
        return Err(Error::NonFinite(format!("sampler state at step {}", t + 1)));
    }
    Ok(out)
}

pub fn draw_noise(rng: &mut Rng, rows: usize, dim: usize) -> Tensor {
    Tensor::matrix(rows, dim, rng.normals(rows * dim))
}

/// One unguided step drawing its noise from `rng`.
pub fn sample_step(spec: &SamplerSpec, params: &SamplerParams, x: &Tensor, t: usize, rng: &mut Rng) -> Result<Tensor> {
    let eps = draw_noise(rng, x.rows(), spec.dim);
    step_with_noise(spec, params, x, t, &eps)
}

/// Initial states `x_0`. `data` is required for [`InitKind::DataPlusNoise`]
/// and must hold exactly `batch` rows.
pub fn sample_initial(spec: &SamplerSpec, batch: usize, rng: &mut Rng, data: Option<&Tensor>) -> Result<Tensor> {
    if batch == 0 {
        return Err(Error::Invalid("batch must be >= 1".into()));
    }
    match spec.init {
        InitKind::StandardNormal => Ok(draw_noise(rng, batch, spec.dim)),
        InitKind::DataPlusNoise { std } => {
            let data = data.ok_or_else(|| Error::Invalid("data-plus-noise init needs a data batch".into()))?;
            data.expect_shape(&[batch, spec.dim])?;
            let z = draw_noise(rng, batch, spec.dim);
            data.zip_map(&z, |x, z| x + std * z)
        }
    }
}

/// Rolls the chain forward from `x0`, recording noises, log-probabilities and
/// squared displacements.
pub fn sample_trajectory_from(spec: &SamplerSpec, params: &SamplerParams, x0: Tensor, rng: &mut Rng) -> Result<Trajectory> {
    x0.expect_shape(&[x0.rows(), spec.dim])?;
    let mut states = vec![x0];
    let mut noises = Vec::with_capacity(spec.horizon);
    let mut logprob = Vec::with_capacity(spec.horizon);
    let mut sq_disp = Vec::with_capacity(spec.horizon);
    for t in 0..spec.horizon {
        let x = states.last().unwrap();
        let eps = draw_noise(rng, x.rows(), spec.dim);
        let next = step_with_noise(spec, params, x, t, &eps)?;
        // ‖x_{t+1} − mean‖² = σ_t² ‖ε‖², so the log-density follows from ε directly.
        let ls = params.log_sigma[t];
        let d = spec.dim as f64;
        let lp: Vec<f64> = (0..eps.rows())
            .map(|i| -0.5 * eps.row(i).iter().map(|e| e * e).sum::<f64>() - d * ls - 0.5 * d * (2.0 * PI).ln())
            .collect();
        let disp: Vec<f64> = (0..x.rows())
            .map(|i| x.row(i).iter().zip(next.row(i)).map(|(a, b)| (b - a) * (b - a)).sum())
            .collect();
        logprob.push(lp);
        sq_disp.push(disp);
        noises.push(eps);
        states.push(next);
    }
    Ok(Trajectory { states, noises, logprob, sq_disp })
}

pub fn sample_trajectory(
    spec: &SamplerSpec,
    params: &SamplerParams,
    batch: usize,
    rng: &mut Rng,
    data: Option<&Tensor>,
) -> Result<Trajectory> {
    let x0 = sample_initial(spec, batch, rng, data)?;
    sample_trajectory_from(spec, params, x0, rng)
}

/// Differentiable rollout: every state is a node on `tape`, so `x_T` can be
/// back-propagated to the drift network and `log_sigma`.
pub fn rollout_on_tape(
    tape: &mut Tape,
    spec: &SamplerSpec,
    params: &SamplerParams,
    vars: &SamplerVars,
    x0: &Tensor,
    noises: &[Tensor],
) -> Result<Vec<Var>> {
    if noises.len() != spec.horizon {
        return Err(Error::Invalid(format!("need {} noise tensors", spec.horizon)));
    }
    let mut states = vec![tape.constant(x0.clone())];
    for (t, eps) in noises.iter().enumerate() {
        let x = *states.last().unwrap();
        states.push(step_on_tape(tape, spec, params, vars, x, t, eps)?);
    }
    Ok(states)
}

/// Exact Gaussian `log π(x_{t+1} | x_t)` per row.
pub fn conditional_logprob(
    spec: &SamplerSpec,
    params: &SamplerParams,
    x_t: &Tensor,
    x_next: &Tensor,
    t: usize,
) -> Result<Vec<f64>> {
    x_next.expect_shape(x_t.shape())?;
    let m = mean(spec, params, x_t, t)?;
    let ls = params.log_sigma[t];
    let var = (2.0 * ls).exp();
    let d = spec.dim as f64;
    Ok((0..x_t.rows())
        .map(|i| {
            let r2: f64 = x_next.row(i).iter().zip(m.row(i)).map(|(x, m)| (x - m) * (x - m)).sum();
            -r2 / (2.0 * var) - d * ls - 0.5 * d * (2.0 * PI).ln()
        })
        .collect())
}

/// Differential entropy of `N(·, σ² I_D)`: `D log σ + (D/2)(1 + log 2π)`.
pub fn conditional_entropy(log_sigma: f64, dim: usize) -> f64 {
    let d = dim as f64;
    d * log_sigma + 0.5 * d * (1.0 + (2.0 * PI).ln())
}

/// The entropy without its `D/2` additive constant, `D log σ + (D/2) log 2π`.
/// Differs from [`conditional_entropy`] by a constant only.
pub fn conditional_entropy_reduced(log_sigma: f64, dim: usize) -> f64 {
    let d = dim as f64;
    d * log_sigma + 0.5 * d * (2.0 * PI).ln()
}

/// [`conditional_entropy`] as a tape node, differentiable in `log_sigma`.
pub fn conditional_entropy_on_tape(tape: &mut Tape, log_sigma: Var, dim: usize) -> Var {
    let d = dim as f64;
    let scaled = tape.scale(log_sigma, d);
    tape.add_const(scaled, 0.5 * d * (1.0 + (2.0 * PI).ln()))
}

/// Source of `∇_x V^t(x)` for guided sampling.
pub trait ValueField {
    /// Row-wise gradient of the value at step `t` (`0 ≤ t ≤ T`).
    fn value_grad(&self, x: &Tensor, t: usize) -> Result<Tensor>;
}

/// A sampler step followed by the drift `x_{t+1} ← x_{t+1} − λ σ_t ∇V^{t+1}(x_{t+1})`.
/// Draws its noise exactly like [`sample_step`].
pub fn value_guided_step(
    spec: &SamplerSpec,
    params: &SamplerParams,
    value: &dyn ValueField,
    x: &Tensor,
    t: usize,
    lambda: f64,
    rng: &mut Rng,
) -> Result<Tensor> {
    if !(lambda >= 0.0) {
        return Err(Error::Invalid(format!("guidance lambda must be >= 0, got {lambda}")));
    }
    let next = sample_step(spec, params, x, t, rng)?;
    apply_guidance(params, value, next, t, lambda)
}

/// The guidance drift alone, applied to an already drawn `x_{t+1}`.
/// `λ = 0` returns `next` untouched.
pub fn apply_guidance(params: &SamplerParams, value: &dyn ValueField, next: Tensor, t: usize, lambda: f64) -> Result<Tensor> {
    if !(lambda >= 0.0) {
        return Err(Error::Invalid(format!("guidance lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(next);
    }
    let g = value.value_grad(&next, t + 1)?;
    if !g.is_finite() {
        return Err(Error::NonFinite("value gradient during guidance".into()));
    }
    let c = lambda * params.sigma(t);
    next.zip_map(&g, |x, g| x - c * g)
}

/// Denoising loss in ε form: for each row draw a step, noise the data to
/// that level, read the implied noise estimate `ε̂ = √(1-ᾱ)(x_k − net)` off
/// the network and regress it onto the injected noise. Mean over rows and
/// coordinates.
pub fn ddpm_pretrain_loss(
    tape: &mut Tape,
    spec: &SamplerSpec,
    schedule: &NoiseSchedule,
    params: &SamplerParams,
    mu_vars: &[Var],
    x0: &Tensor,
    rng: &mut Rng,
) -> Result<Var> {
    if schedule.len() != spec.horizon {
        return Err(Error::Invalid("schedule length differs from sampler horizon".into()));
    }
    x0.expect_shape(&[x0.rows(), spec.dim])?;
    let rows = x0.rows();
    let ts: Vec<usize> = (0..rows).map(|_| rng.below(spec.horizon)).collect();
    let eps = draw_noise(rng, rows, spec.dim);
    let mut noisy = Vec::with_capacity(rows * spec.dim);
    let mut scale = Vec::with_capacity(rows * spec.dim);
    for i in 0..rows {
        let ab = schedule.alphas_bar[spec.horizon - 1 - ts[i]];
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        noisy.extend(x0.row(i).iter().zip(eps.row(i)).map(|(x, e)| s * x + n * e));
        scale.extend(std::iter::repeat_n(n, spec.dim));
    }
    let xk = tape.constant(Tensor::matrix(rows, spec.dim, noisy));
    let out = params.net.forward_rows(tape, mu_vars, xk, &ts)?;
    let resid = tape.sub(xk, out)?;
    let c = tape.constant(Tensor::matrix(rows, spec.dim, scale));
    let pred = tape.mul(c, resid)?;
    let target = tape.constant(eps);
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;
    use crate::rng::Stream;

    fn zero_sampler(horizon: usize, dim: usize, a: f64, log_sigma: f64) -> (SamplerSpec, SamplerParams) {
        let spec = SamplerSpec::new(horizon, dim, vec![a; horizon], vec![1.0; horizon], InitKind::StandardNormal).unwrap();
        let net = TimeConditionedNet::new(dim, 4, horizon, vec![8], dim, Activation::Silu, 0.0).unwrap();
        let mu = net.init(0).unwrap();
        (spec, SamplerParams { net, mu, log_sigma: vec![log_sigma; horizon] })
    }

    #[test]
    fn near_zero_sigma_is_deterministic() {
        let (spec, params) = zero_sampler(1, 2, 1.0, -30.0);
        let mut rng = Rng::from_seed(0);
        let tr = sample_trajectory(&spec, &params, 16, &mut rng, None).unwrap();
        for (a, b) in tr.states[0].data().iter().zip(tr.states[1].data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn logprob_at_mode_and_one_sigma() {
        let (spec, params) = zero_sampler(1, 2, 1.0, 0.0);
        let x = Tensor::matrix(1, 2, vec![0.3, -0.7]);
        let lp = conditional_logprob(&spec, &params, &x, &x, 0).unwrap();
        assert!((lp[0] + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((lp[0] - -1.8378770664093453).abs() < 1e-9);

        let (spec, params) = zero_sampler(1, 1, 1.0, 0.0);
        let x = Tensor::matrix(1, 1, vec![2.0]);
        let y = Tensor::matrix(1, 1, vec![3.0]);
        let lp = conditional_logprob(&spec, &params, &x, &y, 0).unwrap();
        assert!((lp[0] - (-0.5 - 0.9189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn recorded_statistics_are_consistent() {
        let net = TimeConditionedNet::new(2, 4, 3, vec![8], 2, Activation::Tanh, 1.0).unwrap();
        let mu = net.init(5).unwrap();
        let spec = SamplerSpec::new(3, 2, vec![0.9, 1.0, 1.1], vec![0.5, -0.3, 1.0], InitKind::StandardNormal).unwrap();
        let params = SamplerParams { net, mu, log_sigma: vec![-0.5, 0.1, -1.0] };
        let mut rng = Rng::stream(1, Stream::Rollout, 0);
        let tr = sample_trajectory(&spec, &params, 32, &mut rng, None).unwrap();
        for t in 0..3 {
            let m = mean(&spec, &params, &tr.states[t], t).unwrap();
            let s = params.sigma(t);
            for i in 0..32 {
                for j in 0..2 {
                    let want = m.row(i)[j] + s * tr.noises[t].row(i)[j];
                    assert!((tr.states[t + 1].row(i)[j] - want).abs() <= 1e-12);
                }
                let d2: f64 = tr.states[t].row(i).iter().zip(tr.states[t + 1].row(i)).map(|(a, b)| (a - b).powi(2)).sum();
                assert!((tr.sq_disp[t][i] - d2).abs() <= 1e-12);
            }
            let lp = conditional_logprob(&spec, &params, &tr.states[t], &tr.states[t + 1], t).unwrap();
            for i in 0..32 {
                assert!((lp[i] - tr.logprob[t][i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn entropy_closed_forms() {
        assert!((conditional_entropy_reduced(0.0, 2) - 1.8378770664093453).abs() < 1e-12);
        assert!((conditional_entropy_reduced(0.0, 1) - 0.9189385332046727).abs() < 1e-12);
        assert!((conditional_entropy(0.0, 2) - (1.8378770664093453 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn entropy_derivative_is_dimension() {
        for d in [1, 2, 7] {
            let mut tape = Tape::new();
            let ls = tape.leaf(Tensor::scalar(-0.3));
            let h = conditional_entropy_on_tape(&mut tape, ls, d);
            assert!((tape.value(h).item() - conditional_entropy(-0.3, d)).abs() < 1e-12);
            let g = tape.backward(h).unwrap();
            assert!((g.wrt(ls).item() - d as f64).abs() <= 1e-10);
        }
    }

    struct Quadratic;
    impl ValueField for Quadratic {
        fn value_grad(&self, x: &Tensor, _t: usize) -> Result<Tensor> {
            Ok(x.clone())
        }
    }

    struct Flat;
    impl ValueField for Flat {
        fn value_grad(&self, x: &Tensor, _t: usize) -> Result<Tensor> {
            Ok(Tensor::zeros(x.shape()))
        }
    }

    #[test]
    fn guidance_identities() {
        let (spec, params) = zero_sampler(2, 2, 0.9, -0.4);
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, -3.0, 0.5]);
        let plain = sample_step(&spec, &params, &x, 0, &mut Rng::from_seed(4)).unwrap();
        let g0 = value_guided_step(&spec, &params, &Quadratic, &x, 0, 0.0, &mut Rng::from_seed(4)).unwrap();
        assert_eq!(plain, g0);
        let flat = value_guided_step(&spec, &params, &Flat, &x, 0, 0.7, &mut Rng::from_seed(4)).unwrap();
        assert_eq!(plain, flat);
        let lam = 0.3;
        let q = value_guided_step(&spec, &params, &Quadratic, &x, 0, lam, &mut Rng::from_seed(4)).unwrap();
        let s = params.sigma(0);
        for (a, b) in q.data().iter().zip(plain.data()) {
            assert!((a - (b - lam * s * b)).abs() <= 1e-12);
        }
        assert!(value_guided_step(&spec, &params, &Flat, &x, 0, -1.0, &mut Rng::from_seed(4)).is_err());
    }

    #[test]
    fn ddpm_coefficients() {
        let sched = NoiseSchedule::linear(5, 1e-4, 0.2).unwrap();
        assert!((sched.betas[0] - 1e-4).abs() < 1e-18 && (sched.betas[4] - 0.2).abs() < 1e-15);
        let (spec, ls) = SamplerSpec::from_schedule(&sched, 2, InitKind::StandardNormal).unwrap();
        // t = 0 reverses the noisiest level.
        assert!((spec.a[0] - 0.8f64.sqrt()).abs() < 1e-12);
        assert!((ls[0].exp() - 0.2f64.sqrt()).abs() < 1e-12);
        assert!((spec.mu_scale[0] - 0.2 / 0.8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn subsampling_keeps_endpoint_and_identity() {
        let base = NoiseSchedule::linear(100, 1e-4, 0.2).unwrap();
        let sub = NoiseSchedule::subsampled(100, 1e-4, 0.2, 5).unwrap();
        assert_eq!(sub.alphas_bar[4], base.alphas_bar[99]);
        assert_eq!(sub.alphas_bar[0], base.alphas_bar[19]);
        let same = NoiseSchedule::subsampled(7, 1e-4, 0.2, 7).unwrap();
        let lin = NoiseSchedule::linear(7, 1e-4, 0.2).unwrap();
        for k in 0..7 {
            assert!((same.betas[k] - lin.betas[k]).abs() < 1e-15);
        }
        assert!(NoiseSchedule::subsampled(3, 1e-4, 0.2, 5).is_err());
    }

    #[test]
    fn ddpm_loss_perfect_predictor_and_nonnegative() {
        // With ᾱ = 0 the noised input is the noise itself, so a zero network
        // predicts ε exactly.
        let sched = NoiseSchedule { betas: vec![1.0], alphas_bar: vec![0.0] };
        let spec = SamplerSpec::new(1, 1, vec![0.0], vec![1.0], InitKind::StandardNormal).unwrap();
        let net = TimeConditionedNet::new(1, 0, 1, vec![], 1, Activation::Identity, 1.0).unwrap();
        let mu = ParamBundle::new(
            vec!["w".into(), "b".into()],
            vec![Tensor::matrix(1, 1, vec![0.0]), Tensor::vector(vec![0.0])],
        );
        let params = SamplerParams { net, mu, log_sigma: vec![0.0] };
        let mut tape = Tape::new();
        let vars = params.mu.bind(&mut tape, true);
        let x0 = Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let l = ddpm_pretrain_loss(&mut tape, &spec, &sched, &params, &vars, &x0, &mut Rng::from_seed(0)).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn data_plus_noise_requires_data() {
        let (mut spec, params) = zero_sampler(1, 2, 1.0, 0.0);
        spec.init = InitKind::DataPlusNoise { std: 0.1 };
        let mut rng = Rng::from_seed(0);
        assert!(sample_trajectory(&spec, &params, 3, &mut rng, None).is_err());
        let data = Tensor::matrix(3, 2, vec![5.0; 6]);
        let tr = sample_trajectory(&spec, &params, 3, &mut rng, Some(&data)).unwrap();
        assert!(tr.states[0].data().iter().all(|v| (v - 5.0).abs() < 1.0));
    }
}
