//! Central-difference checks of every training loss over random configurations.

use dxmi_core::diffusion::{sample_trajectory, InitKind, SamplerParams, SamplerSpec, SamplerVars, Trajectory};
use dxmi_core::energy::{ebm_loss, running_costs, td_loss_runningcost, td_loss_timecost, EnergyValue, TimeCost};
use dxmi_core::nets::{Activation, MlpSpec, ParamBundle, TimeConditionedNet};
use dxmi_core::rng::Rng;
use dxmi_core::trainer::policy_improvement_loss;
use dxmi_core::{Tape, Tensor};

const H: f64 = 1e-5;
const CONFIGS: u64 = 100;
const TOL: f64 = 1e-4;

fn rel_err(an: f64, fd: f64) -> f64 {
    (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3)
}

fn activation(rng: &mut Rng) -> Activation {
    [Activation::Tanh, Activation::Silu, Activation::Softplus][rng.below(3)]
}

fn hidden(rng: &mut Rng) -> Vec<usize> {
    (0..1 + rng.below(2)).map(|_| 2 + rng.below(7)).collect()
}

fn random_ev(rng: &mut Rng, dim: usize, horizon: usize) -> EnergyValue {
    let net = TimeConditionedNet::new(dim, 2 * (1 + rng.below(3)), horizon, hidden(rng), 1, activation(rng), 1.0).unwrap();
    let value = net.init(rng.below(1000) as u64).unwrap();
    if rng.below(2) == 0 {
        EnergyValue::shared(net, value).unwrap()
    } else {
        let espec = MlpSpec { input_dim: dim, hidden_dims: hidden(rng), output_dim: 1, activation: activation(rng), final_layer_scale: 1.0 };
        let e = espec.init(rng.below(1000) as u64).unwrap();
        EnergyValue::separate(net, value, espec, e).unwrap()
    }
}

fn random_sampler(rng: &mut Rng, dim: usize, horizon: usize) -> (SamplerSpec, SamplerParams) {
    let a = (0..horizon).map(|_| rng.uniform_in(0.8, 1.2)).collect();
    let m = (0..horizon).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
    let spec = SamplerSpec::new(horizon, dim, a, m, InitKind::StandardNormal).unwrap();
    let net = TimeConditionedNet::new(dim, 4, horizon, hidden(rng), dim, activation(rng), 1.0).unwrap();
    let mu = net.init(rng.below(1000) as u64).unwrap();
    let log_sigma = (0..horizon).map(|_| rng.uniform_in(-2.0, 0.5)).collect();
    (spec, SamplerParams { net, mu, log_sigma })
}

fn random_rows(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.uniform_in(-2.0, 2.0)).collect())
}

/// A few random `(tensor, entry)` coordinates of a bundle.
fn coords(rng: &mut Rng, b: &ParamBundle, k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .map(|_| {
            let i = rng.below(b.tensors.len());
            (i, rng.below(b.tensors[i].numel()))
        })
        .collect()
}

/// Central difference of `f` in one entry of `bundle`.
fn fd_entry<T: Clone>(base: &T, bundle: impl Fn(&mut T) -> &mut ParamBundle, (i, j): (usize, usize), f: &dyn Fn(&T) -> f64) -> f64 {
    let mut up = base.clone();
    bundle(&mut up).tensors[i].data_mut()[j] += H;
    let mut dn = base.clone();
    bundle(&mut dn).tensors[i].data_mut()[j] -= H;
    (f(&up) - f(&dn)) / (2.0 * H)
}

#[test]
fn ebm_loss_gradcheck() {
    let mut rng = Rng::from_seed(100);
    let mut worst: f64 = 0.0;
    for _ in 0..CONFIGS {
        let dim = 1 + rng.below(3);
        let horizon = 1 + rng.below(4);
        let ev = random_ev(&mut rng, dim, horizon);
        let (nd, nn) = (3 + rng.below(6), 3 + rng.below(6));
        let xd = random_rows(&mut rng, nd, dim);
        let xn = random_rows(&mut rng, nn, dim);
        let gamma = rng.uniform_in(0.0, 2.0);
        let loss = |ev: &EnergyValue| {
            let mut tape = Tape::new();
            let vars = ev.bind(&mut tape, false);
            let l = ebm_loss(&mut tape, ev, &vars, &xd, &xn, gamma).unwrap().loss;
            tape.value(l).item()
        };
        let mut tape = Tape::new();
        let vars = ev.bind(&mut tape, true);
        let l = ebm_loss(&mut tape, &ev, &vars, &xd, &xn, gamma).unwrap().loss;
        let g = tape.backward(l).unwrap().wrt_all(&ev.energy_vars(&vars));
        let bundle = ev.energy.as_ref().unwrap_or(&ev.value);
        for c in coords(&mut rng, bundle, 8) {
            let fd = fd_entry(&ev, |e: &mut EnergyValue| e.energy_params_mut(), c, &loss);
            worst = worst.max(rel_err(g[c.0].data()[c.1], fd));
        }
    }
    assert!(worst <= TOL, "worst relative error {worst}");
}

/// The TD target is frozen at the current parameters; the oracle perturbs
/// the `V^t` branch only.
fn td_gradcheck(use_time_cost: bool, seed: u64) -> f64 {
    let mut rng = Rng::from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..CONFIGS {
        let dim = 1 + rng.below(3);
        let horizon = 1 + rng.below(4);
        let ev = random_ev(&mut rng, dim, horizon);
        let (spec, sp) = random_sampler(&mut rng, dim, horizon);
        let batch = 3 + rng.below(8);
        let traj: Trajectory = sample_trajectory(&spec, &sp, batch, &mut rng, None).unwrap();
        let t = rng.below(horizon);
        let (s_sq, tau1, tau2) = (rng.uniform_in(0.1, 2.0), rng.uniform_in(0.0, 1.0), rng.uniform_in(0.0, 1.0));
        let kind = [TimeCost::Linear { c: rng.uniform_in(0.0, 0.2) }, TimeCost::Sigmoid, TimeCost::None][rng.below(3)];

        let cost = if use_time_cost {
            vec![kind.at(t, horizon).unwrap(); batch]
        } else {
            running_costs(&traj, t, s_sq, tau1, tau2)
        };
        let target = ev.value_eval(&traj.states[t + 1], t + 1).unwrap();
        let loss = |e: &EnergyValue| {
            let cur = e.value_eval(&traj.states[t], t).unwrap();
            (0..batch).map(|i| (target[i] + cost[i] - cur[i]).powi(2)).sum::<f64>() / batch as f64
        };

        let mut tape = Tape::new();
        let vars = ev.bind(&mut tape, true);
        let l = if use_time_cost {
            td_loss_timecost(&mut tape, &ev, &vars, &traj, t, kind).unwrap()
        } else {
            td_loss_runningcost(&mut tape, &ev, &vars, &traj, t, s_sq, tau1, tau2).unwrap()
        };
        assert!((tape.value(l).item() - loss(&ev)).abs() <= 1e-12 * (1.0 + loss(&ev)));
        let g = tape.backward(l).unwrap().wrt_all(&vars.value);
        for c in coords(&mut rng, &ev.value, 8) {
            let fd = fd_entry(&ev, |e: &mut EnergyValue| &mut e.value, c, &loss);
            worst = worst.max(rel_err(g[c.0].data()[c.1], fd));
        }
    }
    worst
}

#[test]
fn td_loss_runningcost_gradcheck() {
    let worst = td_gradcheck(false, 200);
    assert!(worst <= TOL, "worst relative error {worst}");
}

#[test]
fn td_loss_timecost_gradcheck() {
    let worst = td_gradcheck(true, 300);
    assert!(worst <= TOL, "worst relative error {worst}");
}

#[test]
fn policy_improvement_loss_gradcheck() {
    let mut rng = Rng::from_seed(400);
    let mut worst: f64 = 0.0;
    for _ in 0..CONFIGS {
        let dim = 1 + rng.below(3);
        let horizon = 1 + rng.below(4);
        let ev = random_ev(&mut rng, dim, horizon);
        let (spec, sp) = random_sampler(&mut rng, dim, horizon);
        let batch = 2 + rng.below(8);
        let x = random_rows(&mut rng, batch, dim);
        let eps = random_rows(&mut rng, batch, dim);
        let t = rng.below(horizon);
        let (s_sq, tau1, tau2) = (rng.uniform_in(0.1, 2.0), rng.uniform_in(0.0, 1.0), rng.uniform_in(0.0, 1.0));
        let loss = |p: &SamplerParams| {
            let mut tape = Tape::new();
            let sv = SamplerVars::bind(p, &mut tape, false);
            let evv = ev.bind(&mut tape, false);
            let l = policy_improvement_loss(&mut tape, &spec, p, &sv, &ev, &evv, &x, t, &eps, s_sq, tau1, tau2).unwrap();
            tape.value(l).item()
        };

        let mut tape = Tape::new();
        let sv = SamplerVars::bind(&sp, &mut tape, true);
        let evv = ev.bind(&mut tape, false);
        let l = policy_improvement_loss(&mut tape, &spec, &sp, &sv, &ev, &evv, &x, t, &eps, s_sq, tau1, tau2).unwrap();
        let grads = tape.backward(l).unwrap();
        let gmu = grads.wrt_all(&sv.mu);
        let gls = grads.wrt(sv.log_sigma);
        for c in coords(&mut rng, &sp.mu, 8) {
            let fd = fd_entry(&sp, |p: &mut SamplerParams| &mut p.mu, c, &loss);
            worst = worst.max(rel_err(gmu[c.0].data()[c.1], fd));
        }
        for k in 0..horizon {
            let mut up = sp.clone();
            up.log_sigma[k] += H;
            let mut dn = sp.clone();
            dn.log_sigma[k] -= H;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * H);
            worst = worst.max(rel_err(gls.data()[k], fd));
        }
    }
    assert!(worst <= TOL, "worst relative error {worst}");
}
