//! Energy function, value functions and their losses.
//!
//! In [`ValueMode::Shared`] one time-conditioned network provides every
//! `V^t`, and its output at `t = T` *is* the energy. In
//! [`ValueMode::Separate`] the energy is its own MLP and `V^T := E`.

use serde::{Deserialize, Serialize};

use crate::diffusion::{Trajectory, ValueField};
use crate::error::{Error, Result};
use crate::nets::{MlpSpec, ParamBundle, TimeConditionedNet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    Shared,
    Separate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyValue {
    pub mode: ValueMode,
    pub horizon: usize,
    pub value_net: TimeConditionedNet,
    pub value: ParamBundle,
    pub energy_net: Option<MlpSpec>,
    pub energy: Option<ParamBundle>,
}

/// [`EnergyValue`] parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct EvVars {
    pub value: Vec<Var>,
    pub energy: Option<Vec<Var>>,
}

impl EnergyValue {
    pub fn shared(value_net: TimeConditionedNet, value: ParamBundle) -> Result<Self> {
        if value_net.mlp.output_dim != 1 {
            return Err(Error::Invalid("value network must have a scalar output".into()));
        }
        let horizon = value_net.horizon;
        Ok(Self { mode: ValueMode::Shared, horizon, value_net, value, energy_net: None, energy: None })
    }

    pub fn separate(value_net: TimeConditionedNet, value: ParamBundle, energy_net: MlpSpec, energy: ParamBundle) -> Result<Self> {
        if value_net.mlp.output_dim != 1 || energy_net.output_dim != 1 {
            return Err(Error::Invalid("value and energy networks must have scalar outputs".into()));
        }
        if energy_net.input_dim != value_net.x_dim {
            return Err(Error::Invalid("energy input dimension differs from value input".into()));
        }
        let horizon = value_net.horizon;
        Ok(Self {
            mode: ValueMode::Separate,
            horizon,
            value_net,
            value,
            energy_net: Some(energy_net),
            energy: Some(energy),
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> EvVars {
        EvVars {
            value: self.value.bind(tape, trainable),
            energy: self.energy.as_ref().map(|e| e.bind(tape, trainable)),
        }
    }

    /// `E(x)` as a `[rows, 1]` node.
    pub fn energy_on_tape(&self, tape: &mut Tape, vars: &EvVars, x: Var) -> Result<Var> {
        match self.mode {
            ValueMode::Shared => self.value_net.forward(tape, &vars.value, x, self.horizon),
            ValueMode::Separate => {
                let spec = self.energy_net.as_ref().expect("separate mode has an energy net");
                let ev = vars.energy.as_ref().expect("energy vars bound");
                spec.forward(tape, ev, x)
            }
        }
    }

    /// `V^t(x)` as a `[rows, 1]` node; `V^T = E`.
    pub fn value_on_tape(&self, tape: &mut Tape, vars: &EvVars, x: Var, t: usize) -> Result<Var> {
        if t > self.horizon {
            return Err(Error::TimeOutOfRange { t, max: self.horizon });
        }
        if t == self.horizon {
            return self.energy_on_tape(tape, vars, x);
        }
        self.value_net.forward(tape, &vars.value, x, t)
    }

    pub fn energy_eval(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let e = self.energy_on_tape(&mut tape, &vars, xv)?;
        finite(tape.value(e).data().to_vec(), "energy")
    }

    pub fn value_eval(&self, x: &Tensor, t: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let v = self.value_on_tape(&mut tape, &vars, xv, t)?;
        finite(tape.value(v).data().to_vec(), "value")
    }

    /// Parameter groups the energy update touches.
    pub fn energy_params_mut(&mut self) -> &mut ParamBundle {
        match self.mode {
            ValueMode::Shared => &mut self.value,
            ValueMode::Separate => self.energy.as_mut().expect("separate mode has energy params"),
        }
    }

    pub fn energy_vars(&self, vars: &EvVars) -> Vec<Var> {
        match self.mode {
            ValueMode::Shared => vars.value.clone(),
            ValueMode::Separate => vars.energy.clone().expect("energy vars bound"),
        }
    }

    /// Combined fingerprint of every parameter in this module.
    pub fn checksum(&self) -> u64 {
        self.value.checksum() ^ self.energy.as_ref().map_or(0, |e| e.checksum().rotate_left(17))
    }
}

fn finite(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

impl ValueField for EnergyValue {
    fn value_grad(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.leaf(x.clone());
        let v = self.value_on_tape(&mut tape, &vars, xv, t)?;
        let s = tape.sum(v);
        Ok(tape.backward(s)?.wrt(xv))
    }
}

/// Contrastive energy loss with the square-energy regularizer.
#[derive(Debug, Clone, Copy)]
pub struct EbmTerms {
    pub loss: Var,
    pub energy_data: f64,
    pub energy_neg: f64,
}

/// `mean E(x_data) − mean E(x_neg) + γ (mean E(x_data)² + mean E(x_neg)²)`.
/// Both batches enter as constants, so only the energy parameters receive gradient.
pub fn ebm_loss(
    tape: &mut Tape,
    ev: &EnergyValue,
    vars: &EvVars,
    x_data: &Tensor,
    x_neg: &Tensor,
    gamma: f64,
) -> Result<EbmTerms> {
    if x_data.rows() == 0 || x_neg.rows() == 0 {
        return Err(Error::Invalid("ebm_loss needs non-empty batches".into()));
    }
    let xd = tape.constant(x_data.clone());
    let xn = tape.constant(x_neg.clone());
    let ed = ev.energy_on_tape(tape, vars, xd)?;
    let en = ev.energy_on_tape(tape, vars, xn)?;
    let md = tape.mean(ed);
    let mn = tape.mean(en);
    let gap = tape.sub(md, mn)?;
    let sd = tape.square(ed);
    let sn = tape.square(en);
    let msd = tape.mean(sd);
    let msn = tape.mean(sn);
    let reg = tape.add(msd, msn)?;
    let reg = tape.scale(reg, gamma);
    let loss = tape.add(gap, reg)?;
    Ok(EbmTerms { loss, energy_data: tape.value(md).item(), energy_neg: tape.value(mn).item() })
}

/// Per-row running cost `τ₁ log π(x_{t+1}|x_t) + τ₂ ‖x_{t+1} − x_t‖² / (2 s_t²)`.
pub fn running_costs(traj: &Trajectory, t: usize, s_sq: f64, tau1: f64, tau2: f64) -> Vec<f64> {
    traj.logprob[t]
        .iter()
        .zip(&traj.sq_disp[t])
        .map(|(lp, d2)| tau1 * lp + tau2 * d2 / (2.0 * s_sq))
        .collect()
}

/// `mean (target(V^{t+1}(x_{t+1})) + cost − V^t(x_t))²`, where the target is
/// wrapped in a stop-gradient when `stop_target` is set.
pub fn td_residual_loss(
    tape: &mut Tape,
    ev: &EnergyValue,
    vars: &EvVars,
    x_t: &Tensor,
    x_next: &Tensor,
    t: usize,
    cost: &[f64],
    stop_target: bool,
) -> Result<Var> {
    if t >= ev.horizon {
        return Err(Error::TimeOutOfRange { t, max: ev.horizon - 1 });
    }
    if cost.len() != x_t.rows() || x_next.rows() != x_t.rows() {
        return Err(Error::Shape("TD batch sizes disagree".into()));
    }
    let xn = tape.constant(x_next.clone());
    let target = ev.value_on_tape(tape, vars, xn, t + 1)?;
    let target = if stop_target { tape.stop_gradient(target) } else { target };
    let c = tape.constant(Tensor::matrix(cost.len(), 1, cost.to_vec()));
    let xc = tape.constant(x_t.clone());
    let current = ev.value_on_tape(tape, vars, xc, t)?;
    let tc = tape.add(target, c)?;
    let r = tape.sub(tc, current)?;
    let r2 = tape.square(r);
    Ok(tape.mean(r2))
}

/// Bellman residual with entropy and velocity running costs; gradient
/// reaches `V^t` only.
pub fn td_loss_runningcost(
    tape: &mut Tape,
    ev: &EnergyValue,
    vars: &EvVars,
    traj: &Trajectory,
    t: usize,
    s_sq: f64,
    tau1: f64,
    tau2: f64,
) -> Result<Var> {
    if !(s_sq > 0.0) {
        return Err(Error::Invalid(format!("s_t² must be positive, got {s_sq}")));
    }
    let cost = running_costs(traj, t, s_sq, tau1, tau2);
    td_residual_loss(tape, ev, vars, &traj.states[t], &traj.states[t + 1], t, &cost, true)
}

/// Bellman residual with a fixed time cost `R(t)` in place of the running costs.
pub fn td_loss_timecost(
    tape: &mut Tape,
    ev: &EnergyValue,
    vars: &EvVars,
    traj: &Trajectory,
    t: usize,
    cost: TimeCost,
) -> Result<Var> {
    let r = cost.at(t, ev.horizon)?;
    let rows = traj.batch();
    td_residual_loss(tape, ev, vars, &traj.states[t], &traj.states[t + 1], t, &vec![r; rows], true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TimeCost {
    None,
    Linear { c: f64 },
    Sigmoid,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl TimeCost {
    /// `R(t)` for `0 ≤ t < T`.
    pub fn at(self, t: usize, horizon: usize) -> Result<f64> {
        if t >= horizon {
            return Err(Error::TimeOutOfRange { t, max: horizon.saturating_sub(1) });
        }
        let half = horizon as f64 / 2.0;
        let t = t as f64;
        Ok(match self {
            TimeCost::None => 0.0,
            TimeCost::Linear { c } => c,
            // σ(a) − σ(a − 1) = σ(a) σ(1 − a) (1 − e⁻¹), which does not cancel for large a.
            TimeCost::Sigmoid => {
                let a = -t + half;
                logistic(a) * logistic(1.0 - a) * (1.0 - (-1.0f64).exp())
            }
        })
    }
}

pub fn time_cost(kind: TimeCost, t: usize, horizon: usize) -> Result<f64> {
    kind.at(t, horizon)
}
