//! The subcommands, callable in-process.

use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use dxmi_core::diffusion::{apply_guidance, draw_noise, sample_initial, step_with_noise, InitKind};
use dxmi_core::eval::bayes_auc;
use dxmi_core::rng::{Rng, Stream};
use dxmi_core::trainer::{evaluate, sample_sw, EvalResult, MetricsRow, TrainState};
use dxmi_core::Tensor;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::metrics::{self, HEADER};
use crate::render::energy_grid;
use crate::{write_file, CliError};

/// Samples per side for the Bayes-optimal AUC reference.
pub const BAYES_SAMPLES: usize = 100_000;
/// Temperatures swept by `ablate`; each run uses `tau1 = tau2 = τ`.
pub const ABLATION_TAUS: [f64; 4] = [0.0, 0.01, 0.1, 1.0];

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Config from `--config`, else the checkpoint echo, else defaults; then the seed override.
pub fn resolve_config(path: Option<&Path>, ckpt: Option<&Checkpoint>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match (path, ckpt) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(c)) => c.config.clone(),
        (None, None) => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.experiment.seed = s;
    }
    Ok(cfg)
}

pub fn fresh_state(cfg: &RunConfig) -> Result<TrainState, CliError> {
    TrainState::new(cfg.experiment.seed, &cfg.sampler_config(), &cfg.model, &cfg.train_config())
        .map_err(|e| CliError::Config(e.to_string()))
}

fn pretrain(state: &mut TrainState, cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let t = &cfg.train;
    Ok(state.pretrain_ddpm(t.pretrain.epochs, t.lrs.pretrain, t.batch, cfg.experiment.seed)?)
}

/// Denoising pretraining only. Writes `pretrain.csv` (epoch, loss) and
/// `pretrained.json` into `out`.
pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let mut state = fresh_state(cfg)?;
    let losses = pretrain(&mut state, cfg)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    write_file(&out.join("pretrain.csv"), csv.as_bytes())?;
    let path = out.join("pretrained.json");
    Checkpoint::capture(&state, cfg).save(&path)?;
    Ok(path)
}

#[derive(Debug)]
pub struct TrainReport {
    pub state: TrainState,
    /// Last evaluation, if any epoch ran.
    pub eval: Option<EvalResult>,
    pub final_checkpoint: PathBuf,
}

fn eval_due(epoch: u64, cfg: &RunConfig) -> bool {
    let every = cfg.train.eval_every as u64;
    epoch == cfg.train.epochs as u64 || (every > 0 && epoch % every == 0)
}

/// Trains to `cfg.train.epochs`, starting fresh or from `resume`.
///
/// Writes `metrics.csv`, `checkpoints/epoch_XXXX.json` and
/// `checkpoints/final.json` under `out`. When resuming into a directory that
/// already has metrics, rows up to the checkpoint's step are kept and new
/// rows appended, so the file matches an uninterrupted run.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Checkpoint>, out: &Path) -> Result<TrainReport, CliError> {
    let mut state = match resume {
        Some(c) => c.restore_with(cfg)?,
        None => {
            let mut s = fresh_state(cfg)?;
            if cfg.train.pretrain.enabled {
                pretrain(&mut s, cfg)?;
            }
            s
        }
    };
    let tc = cfg.train_config();
    let ec = cfg.eval_config();
    let seed = cfg.experiment.seed;

    let metrics_path = out.join("metrics.csv");
    let kept = match resume {
        Some(c) if metrics_path.exists() => {
            metrics::lines_up_to(&std::fs::read_to_string(&metrics_path).map_err(io(&metrics_path))?, c.step)?
        }
        _ => vec![],
    };
    let mut recent: VecDeque<MetricsRow> = VecDeque::new();
    for l in &kept {
        push_recent(&mut recent, metrics::parse_row(l)?);
    }
    let mut body = String::from(HEADER);
    body.push('\n');
    kept.iter().for_each(|l| {
        body.push_str(l);
        body.push('\n');
    });
    write_file(&metrics_path, body.as_bytes())?;
    let mut file = OpenOptions::new().append(true).open(&metrics_path).map_err(io(&metrics_path))?;

    let mut last_eval = None;
    while state.epoch < cfg.train.epochs as u64 {
        let mut rows = Vec::new();
        let result = state.train_epoch(&tc, &mut rows, None);
        if let Err(e) = result {
            file.write_all(metrics::format_rows(&rows).as_bytes()).map_err(io(&metrics_path))?;
            rows.into_iter().for_each(|r| push_recent(&mut recent, r));
            return Err(report_divergence(e.into(), &recent, out));
        }
        let epoch = state.epoch;
        if eval_due(epoch, cfg) && !rows.is_empty() {
            let r = evaluate(&state, tc.dataset, &ec, seed, epoch)
                .map_err(|e| CliError::Divergence { step: state.step, reason: format!("evaluation failed: {e}") });
            let r = match r {
                Ok(r) => r,
                Err(e) => return Err(report_divergence(e, &recent, out)),
            };
            let last = rows.last_mut().unwrap();
            last.sw = Some(r.sw);
            last.auc = Some(r.auc);
            last_eval = Some(r);
        }
        file.write_all(metrics::format_rows(&rows).as_bytes()).map_err(io(&metrics_path))?;
        rows.into_iter().for_each(|r| push_recent(&mut recent, r));
        let every = cfg.train.checkpoint_every as u64;
        if every > 0 && epoch % every == 0 {
            Checkpoint::capture(&state, cfg).save(&out.join(format!("checkpoints/epoch_{epoch:04}.json")))?;
        }
    }
    let final_checkpoint = out.join("checkpoints/final.json");
    Checkpoint::capture(&state, cfg).save(&final_checkpoint)?;
    Ok(TrainReport { state, eval: last_eval, final_checkpoint })
}

fn push_recent(q: &mut VecDeque<MetricsRow>, r: MetricsRow) {
    if q.len() == 10 {
        q.pop_front();
    }
    q.push_back(r);
}

/// Dumps the last rows to stderr and `divergence.csv`, passing the error through.
fn report_divergence(err: CliError, recent: &VecDeque<MetricsRow>, out: &Path) -> CliError {
    let rows: Vec<MetricsRow> = recent.iter().cloned().collect();
    let dump = format!("{HEADER}\n{}", metrics::format_rows(&rows));
    eprintln!("{err}\nlast {} metric rows:\n{dump}", rows.len());
    if let Err(e) = write_file(&out.join("divergence.csv"), dump.as_bytes()) {
        eprintln!("{e}");
    }
    err
}

/// Every state of a (possibly guided) chain and the noises that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub states: Vec<Tensor>,
    pub noises: Vec<Tensor>,
}

/// `n` chains from the `Sample` stream of `seed`. Draws the same numbers as
/// unguided sampling, so `λ = 0` reproduces it exactly.
pub fn sample_chain(state: &TrainState, dataset: dxmi_core::data::Dataset, n: usize, lambda: f64, seed: u64) -> Result<Chain, CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    if !(lambda >= 0.0) {
        return Err(CliError::Usage(format!("--lambda must be >= 0, got {lambda}")));
    }
    let spec = &state.spec;
    let data = matches!(spec.init, InitKind::DataPlusNoise { .. })
        .then(|| dataset.sample(n, &mut Rng::stream(seed, Stream::HeldOut, 1)));
    let mut rng = Rng::stream(seed, Stream::Sample, 0);
    let mut states = vec![sample_initial(spec, n, &mut rng, data.as_ref())?];
    let mut noises = Vec::with_capacity(spec.horizon);
    for t in 0..spec.horizon {
        let eps = draw_noise(&mut rng, n, spec.dim);
        let next = step_with_noise(spec, &state.sampler, states.last().unwrap(), t, &eps)?;
        states.push(apply_guidance(&state.sampler, &state.ev, next, t, lambda)?);
        noises.push(eps);
    }
    Ok(Chain { states, noises })
}

fn row_csv(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Samples CSV: one row of coordinates per sample, no header.
pub fn samples_csv(x: &Tensor) -> String {
    (0..x.rows()).map(|i| row_csv(x.row(i)) + "\n").collect()
}

/// Trajectory CSV, no header: `t,row,x...,eps...` with `eps` the noise that
/// moved the row from `t` to `t + 1` (empty fields at `t = T`).
pub fn trajectory_csv(c: &Chain) -> String {
    let dim = c.states[0].cols();
    let blank = vec![""; dim].join(",");
    let mut s = String::new();
    for (t, x) in c.states.iter().enumerate() {
        for i in 0..x.rows() {
            let eps = c.noises.get(t).map(|e| row_csv(e.row(i))).unwrap_or_else(|| blank.clone());
            s.push_str(&format!("{t},{i},{},{eps}\n", row_csv(x.row(i))));
        }
    }
    s
}

/// Where `--trajectory` writes, next to the samples file.
pub fn trajectory_path(out: &Path) -> PathBuf {
    out.with_extension("trajectory.csv")
}

pub fn cmd_sample(
    ckpt: &Checkpoint,
    n: usize,
    lambda: Option<f64>,
    out: &Path,
    trajectory: bool,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let state = ckpt.restore()?;
    let cfg = &ckpt.config;
    let chain = sample_chain(&state, cfg.train.dataset, n, lambda.unwrap_or(cfg.guidance.lambda), seed.unwrap_or(cfg.experiment.seed))?;
    write_file(out, samples_csv(chain.states.last().unwrap()).as_bytes())?;
    if trajectory {
        write_file(&trajectory_path(out), trajectory_csv(&chain).as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub sw: f64,
    pub auc: f64,
    /// Absent for datasets without a density.
    pub bayes_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sw_ddpm_baseline: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// SW and AUC of a checkpoint, the Bayes AUC of its dataset and, with a
/// baseline checkpoint, the baseline's SW under the same projections.
/// `config` only supplies eval settings and must match the checkpoint's model.
pub fn cmd_eval(
    ckpt: &Checkpoint,
    config: Option<&RunConfig>,
    seed: Option<u64>,
    baseline: Option<&Checkpoint>,
) -> Result<EvalReport, CliError> {
    if let Some(c) = config {
        if !c.same_model(&ckpt.config) {
            return Err(CliError::Config("config does not match the checkpoint's model, sampler or dataset".into()));
        }
    }
    let cfg = config.unwrap_or(&ckpt.config);
    let seed = seed.unwrap_or(cfg.experiment.seed);
    let ds = cfg.train.dataset;
    let ec = cfg.eval_config();
    let state = ckpt.restore()?;
    let r = evaluate(&state, ds, &ec, seed, 0)?;
    let bayes = match ds.mixture() {
        Some(m) => Some(bayes_auc(&m, &ds.domain(), BAYES_SAMPLES, &mut Rng::stream(seed, Stream::Eval, 1 << 39))?),
        None => None,
    };
    let sw_ddpm_baseline = match baseline {
        Some(b) => {
            if b.config.train.dataset != ds {
                return Err(CliError::Config("baseline checkpoint uses a different dataset".into()));
            }
            Some(sample_sw(&b.restore()?, ds, &ec, seed, 0)?)
        }
        None => None,
    };
    Ok(EvalReport { sw: r.sw, auc: r.auc, bayes_auc: bayes, sw_ddpm_baseline })
}

/// `energy.csv` and `energy.ppm` under `out`.
pub fn cmd_render(ckpt: &Checkpoint, grid: usize, out: &Path) -> Result<(), CliError> {
    let state = ckpt.restore()?;
    let g = energy_grid(&ckpt.config.train.dataset.domain(), grid, |x| state.ev.energy_eval(x))?;
    write_file(&out.join("energy.csv"), g.to_csv().as_bytes())?;
    write_file(&out.join("energy.ppm"), &g.to_ppm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub tau: f64,
    pub eval: Option<EvalResult>,
    pub diverged: bool,
}

/// The temperature sweep, one training run per `τ` under `out/tau_<τ>`,
/// summarized in `out/ablation.csv` (`tau,sw,auc,status`).
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationRow>, CliError> {
    let mut rows = vec![];
    for tau in ABLATION_TAUS {
        let mut c = cfg.clone();
        c.train.tau1 = tau;
        c.train.tau2 = tau;
        c.experiment.name = format!("{}-tau{tau}", cfg.experiment.name);
        match cmd_train(&c, None, &out.join(format!("tau_{tau}"))) {
            Ok(r) => rows.push(AblationRow { tau, eval: r.eval, diverged: false }),
            Err(CliError::Divergence { .. }) => rows.push(AblationRow { tau, eval: None, diverged: true }),
            Err(e) => return Err(e),
        }
    }
    let mut csv = String::from("tau,sw,auc,status\n");
    for r in &rows {
        let (sw, auc) = r.eval.map(|e| (e.sw.to_string(), e.auc.to_string())).unwrap_or_default();
        let status = if r.diverged { "diverged" } else { "ok" };
        csv.push_str(&format!("{},{sw},{auc},{status}\n", r.tau));
    }
    write_file(&out.join("ablation.csv"), csv.as_bytes())?;
    Ok(rows)
}
