//! Training loops: winner-only supervised fine-tuning on the diffusion
//! loss, the preference logit built from policy-vs-reference noise-prediction
//! errors, and the polynomial preference objective applied on top of it with
//! a frozen reference model.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{PreferenceDataset, PreferencePair};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{dm_loss, forward_corrupt};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::loss::{poly_dpo_gradient, poly_dpo_loss, preference_probability, LogitValue};
use crate::optim::Adam;
use crate::rng::{component_rng, derive_seed};
use crate::schedule::{NoiseSchedule, ScheduleKind, WeightMode};
use crate::task::{SamplePoint, TaskDescriptor};

/// What the supervised fine-tuning stage trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SftMode {
    WinnerOnly,
    WinnerAndLoser,
    None,
}

/// Hyperparameters shared by the SFT and preference-training stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Scale applied to the implicit-reward difference inside the logit.
    pub beta: f64,
    /// Polynomial coefficient of the added (1 − p) term; 0 recovers the
    /// plain preference loss.
    pub alpha: f64,
    pub learning_rate: f64,
    pub n_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub weight_mode: WeightMode,
    pub sft_mode: SftMode,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            beta: 500.0,
            alpha: 0.0,
            learning_rate: 1e-3,
            n_steps: 500,
            batch_size: 32,
            seed: 0,
            schedule: ScheduleKind::Cosine,
            weight_mode: WeightMode::Constant,
            sft_mode: SftMode::WinnerOnly,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("alpha must be finite".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step training telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total_loss: f64,
    pub mean_logit: f64,
    pub mean_preference_prob: f64,
    /// Fraction of pairs whose logit is strictly positive.
    pub mean_implicit_acc: f64,
    pub gradient_norm: f64,
}

/// The (t, ε) draw shared by a pair's winner and loser corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDraw {
    pub t: f64,
    pub eps: Vec<f64>,
}

/// Draws the per-pair (t, ε) stream for one training step: for each pair in
/// batch order, one uniform t followed by `dim` standard normals.
pub fn draw_pair_noise(seed: u64, step_index: usize, n_pairs: usize, dim: usize) -> Vec<PairDraw> {
    let mut rng = component_rng(seed, "pair-draws", &[step_index as u64]);
    (0..n_pairs)
        .map(|_| {
            let t: f64 = rng.random();
            let eps = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            PairDraw { t, eps }
        })
        .collect()
}

/// The preference logit for one pair at a shared (t, ε):
///
/// −β·w_t·[(‖ε_θ(x_t^w)−ε‖² − ‖ε_ref(x_t^w)−ε‖²) − (‖ε_θ(x_t^l)−ε‖² − ‖ε_ref(x_t^l)−ε‖²)]
///
/// The reference model contributes values only; no gradient flows through it.
pub fn dpo_logit(
    policy: &Denoiser,
    reference: &Denoiser,
    pair: &PreferencePair,
    t: f64,
    eps: &[f64],
    cfg: &TrainerConfig,
) -> Result<LogitValue> {
    let schedule = NoiseSchedule::new(cfg.schedule);
    let w = schedule.loss_weight(t, cfg.weight_mode);
    let x_w = forward_corrupt(&schedule, &pair.winner.coords, t, eps)?;
    let x_l = forward_corrupt(&schedule, &pair.loser.coords, t, eps)?;
    let sq_err = |pred: &[f64]| -> f64 {
        pred.iter().zip(eps).map(|(p, e)| (p - e) * (p - e)).sum()
    };
    let e_pol_w = sq_err(&policy.forward(&x_w, pair.condition, t)?);
    let e_ref_w = sq_err(&reference.forward(&x_w, pair.condition, t)?);
    let e_pol_l = sq_err(&policy.forward(&x_l, pair.condition, t)?);
    let e_ref_l = sq_err(&reference.forward(&x_l, pair.condition, t)?);
    let inner = (e_pol_w - e_ref_w) - (e_pol_l - e_ref_l);
    LogitValue::new(-cfg.beta * w * inner)
}

/// Mean polynomial preference loss over a batch at explicit per-pair draws,
/// together with its gradient with respect to every policy parameter.
///
/// This is the differentiable core of [`preference_step`], exposed
/// separately so the full network → logit → loss composition can be checked
/// against finite differences.
pub fn preference_loss_and_grad(
    policy: &Denoiser,
    reference: &Denoiser,
    pairs: &[&PreferencePair],
    draws: &[PairDraw],
    cfg: &TrainerConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Precondition("preference batch is empty".into()));
    }
    if pairs.len() != draws.len() {
        return Err(Error::Precondition(format!(
            "{} pairs but {} draws",
            pairs.len(),
            draws.len()
        )));
    }
    let dim = policy.config().dim;
    for pair in pairs {
        if pair.winner.coords.len() != dim || pair.loser.coords.len() != dim {
            return Err(Error::Precondition(format!(
                "pair dimension does not match the model dimension {dim}"
            )));
        }
    }
    let schedule = NoiseSchedule::new(cfg.schedule);
    let b = pairs.len() as f64;
    let mut grads = vec![0.0; policy.n_params()];
    let mut loss_sum = 0.0;
    let mut logit_sum = 0.0;
    let mut prob_sum = 0.0;
    let mut acc_count = 0usize;
    for (pair, draw) in pairs.iter().zip(draws) {
        let w = schedule.loss_weight(draw.t, cfg.weight_mode);
        let x_w = forward_corrupt(&schedule, &pair.winner.coords, draw.t, &draw.eps)?;
        let x_l = forward_corrupt(&schedule, &pair.loser.coords, draw.t, &draw.eps)?;
        let (pred_w, cache_w) = policy.forward_cached(&x_w, pair.condition, draw.t)?;
        let (pred_l, cache_l) = policy.forward_cached(&x_l, pair.condition, draw.t)?;
        let ref_w = reference.forward(&x_w, pair.condition, draw.t)?;
        let ref_l = reference.forward(&x_l, pair.condition, draw.t)?;
        let sq_err = |pred: &[f64]| -> f64 {
            pred.iter().zip(&draw.eps).map(|(p, e)| (p - e) * (p - e)).sum()
        };
        let inner = (sq_err(&pred_w) - sq_err(&ref_w)) - (sq_err(&pred_l) - sq_err(&ref_l));
        let z = LogitValue::new(-cfg.beta * w * inner)?;
        loss_sum += poly_dpo_loss(z, cfg.alpha)?;
        logit_sum += z.value();
        prob_sum += preference_probability(z);
        if z.value() > 0.0 {
            acc_count += 1;
        }
        let dl_dz = poly_dpo_gradient(z, cfg.alpha)? / b;
        // z depends on the policy through the two squared errors:
        // ∂z/∂pred_w[j] = −2βw(pred_w[j] − ε[j]), ∂z/∂pred_l[j] = +2βw(pred_l[j] − ε[j]).
        let dl_dpred_w: Vec<f64> = pred_w
            .iter()
            .zip(&draw.eps)
            .map(|(p, e)| dl_dz * (-2.0 * cfg.beta * w * (p - e)))
            .collect();
        let dl_dpred_l: Vec<f64> = pred_l
            .iter()
            .zip(&draw.eps)
            .map(|(p, e)| dl_dz * (2.0 * cfg.beta * w * (p - e)))
            .collect();
        policy.backward(&cache_w, &dl_dpred_w, &mut grads);
        policy.backward(&cache_l, &dl_dpred_l, &mut grads);
    }
    let breakdown = LossBreakdown {
        total_loss: loss_sum / b,
        mean_logit: logit_sum / b,
        mean_preference_prob: prob_sum / b,
        mean_implicit_acc: acc_count as f64 / b,
        gradient_norm: grads.iter().map(|g| g * g).sum::<f64>().sqrt(),
    };
    Ok((breakdown, grads))
}

/// One preference-training step: draws the (t, ε) stream for `step_index`,
/// computes the batch loss and gradient, and applies one optimizer update to
/// the policy. Any non-finite value raises a training abort carrying the
/// step index.
pub fn preference_step(
    policy: &mut Denoiser,
    reference: &Denoiser,
    opt: &mut Adam,
    batch: &[&PreferencePair],
    cfg: &TrainerConfig,
    step_index: usize,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Precondition("preference batch is empty".into()));
    }
    let dim = policy.config().dim;
    let draws = draw_pair_noise(cfg.seed, step_index, batch.len(), dim);
    let abort = |detail: String| Error::TrainingAborted { step: step_index, detail };
    let (breakdown, grads) = preference_loss_and_grad(policy, reference, batch, &draws, cfg)
        .map_err(|e| abort(e.to_string()))?;
    if !breakdown.total_loss.is_finite() || !breakdown.gradient_norm.is_finite() {
        return Err(abort(format!(
            "non-finite loss {} or gradient norm {}",
            breakdown.total_loss, breakdown.gradient_norm
        )));
    }
    opt.step(policy.params_mut(), &grads, cfg.learning_rate)
        .map_err(|e| abort(e.to_string()))?;
    if policy.params().iter().any(|p| !p.is_finite()) {
        return Err(abort("non-finite policy parameter after the optimizer step".into()));
    }
    Ok(breakdown)
}

/// Epoch-level batching: a seeded shuffle of the pair indices per epoch,
/// serving consecutive full batches and dropping each epoch's partial
/// remainder.
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
    batch_size: usize,
}

impl BatchStream {
    fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let mut stream = BatchStream {
            order: (0..n).collect(),
            pos: 0,
            epoch: 0,
            seed,
            batch_size,
        };
        stream.reshuffle();
        stream
    }

    fn reshuffle(&mut self) {
        let mut rng = component_rng(self.seed, "shuffle", &[self.epoch]);
        self.order.shuffle(&mut rng);
    }

    fn next_batch(&mut self) -> &[usize] {
        if self.pos + self.batch_size > self.order.len() {
            self.epoch += 1;
            self.reshuffle();
            self.pos = 0;
        }
        let start = self.pos;
        self.pos += self.batch_size;
        &self.order[start..start + self.batch_size]
    }
}

fn check_model_task(model_cfg: &DenoiserConfig, task: &TaskDescriptor) -> Result<()> {
    if model_cfg.dim != task.dim {
        return Err(Error::Precondition(format!(
            "model dimension {} does not match task dimension {}",
            model_cfg.dim, task.dim
        )));
    }
    if model_cfg.n_conditions < task.n_conditions {
        return Err(Error::Precondition(format!(
            "model supports {} conditions but the task declares {}",
            model_cfg.n_conditions, task.n_conditions
        )));
    }
    Ok(())
}

/// Result of an SFT stage: the tuned model, per-step diffusion losses, and
/// how many samples each step consumed.
#[derive(Debug, Clone)]
pub struct SftRun {
    pub model: Denoiser,
    pub history: Vec<f64>,
    pub samples_per_step: usize,
}

/// Supervised fine-tuning on the diffusion loss over a dataset's winners
/// (optionally winners and losers), with epoch-shuffled batches.
pub fn sft_run(model: &Denoiser, ds: &PreferenceDataset, cfg: &TrainerConfig) -> Result<SftRun> {
    cfg.validate()?;
    ds.validate()?;
    check_model_task(model.config(), &ds.task)?;
    if cfg.sft_mode == SftMode::None {
        return Err(Error::Precondition(
            "sft_run requires an sft_mode other than none".into(),
        ));
    }
    if cfg.batch_size > ds.pairs.len() {
        return Err(Error::Precondition(format!(
            "batch_size {} exceeds the dataset's {} pairs",
            cfg.batch_size,
            ds.pairs.len()
        )));
    }
    let schedule = NoiseSchedule::new(cfg.schedule);
    let mut tuned = model.clone();
    let mut opt = Adam::new(tuned.n_params());
    let mut stream = BatchStream::new(ds.pairs.len(), cfg.batch_size, cfg.seed);
    let samples_per_step = match cfg.sft_mode {
        SftMode::WinnerOnly => cfg.batch_size,
        SftMode::WinnerAndLoser => 2 * cfg.batch_size,
        SftMode::None => unreachable!(),
    };
    let mut history = Vec::with_capacity(cfg.n_steps);
    for step in 0..cfg.n_steps {
        let idxs = stream.next_batch();
        let mut samples: Vec<SamplePoint> =
            idxs.iter().map(|&i| ds.pairs[i].winner.clone()).collect();
        if cfg.sft_mode == SftMode::WinnerAndLoser {
            samples.extend(idxs.iter().map(|&i| ds.pairs[i].loser.clone()));
        }
        let step_seed = derive_seed(cfg.seed, "sft-step", &[step as u64]);
        let (loss, grads) = dm_loss(&tuned, &schedule, cfg.weight_mode, &samples, step_seed)?;
        if !loss.is_finite() {
            return Err(Error::TrainingAborted {
                step,
                detail: format!("non-finite diffusion loss {loss}"),
            });
        }
        opt.step(tuned.params_mut(), &grads, cfg.learning_rate)
            .map_err(|e| Error::TrainingAborted { step, detail: e.to_string() })?;
        if tuned.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingAborted {
                step,
                detail: "non-finite parameter after the optimizer step".into(),
            });
        }
        history.push(loss);
    }
    Ok(SftRun { model: tuned, history, samples_per_step })
}

/// Result of a preference-training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub history: Vec<LossBreakdown>,
}

/// Full preference-training run: clones the init checkpoint into a policy
/// and a frozen reference, iterates [`preference_step`] over epoch-shuffled
/// batches, and verifies by checksum that the reference never moved.
///
/// The configured schedule governs training and is recorded in the output
/// checkpoint.
pub fn train_run(
    ds: &PreferenceDataset,
    cfg: &TrainerConfig,
    init: &Checkpoint,
) -> Result<TrainRun> {
    cfg.validate()?;
    ds.validate()?;
    check_model_task(init.model.config(), &ds.task)?;
    if cfg.batch_size > ds.pairs.len() {
        return Err(Error::Precondition(format!(
            "batch_size {} exceeds the dataset's {} pairs",
            cfg.batch_size,
            ds.pairs.len()
        )));
    }
    let mut policy = init.model.clone();
    let reference = init.model.clone();
    let reference_checksum = reference.checksum();
    let mut opt = Adam::new(policy.n_params());
    let mut stream = BatchStream::new(ds.pairs.len(), cfg.batch_size, cfg.seed);
    let mut history = Vec::with_capacity(cfg.n_steps);
    for step in 0..cfg.n_steps {
        let idxs = stream.next_batch();
        let batch: Vec<&PreferencePair> = idxs.iter().map(|&i| &ds.pairs[i]).collect();
        history.push(preference_step(&mut policy, &reference, &mut opt, &batch, cfg, step)?);
    }
    if reference.checksum() != reference_checksum {
        return Err(Error::Internal(
            "reference model parameters changed during training".into(),
        ));
    }
    Ok(TrainRun {
        checkpoint: Checkpoint::new(cfg.schedule, policy),
        history,
    })
}

const METRICS_HEADER: &str =
    "step,total_loss,mean_logit,mean_preference_prob,mean_implicit_acc,gradient_norm";

/// Writes a preference-training history as a CSV with one row per step.
pub fn write_metrics(path: &Path, history: &[LossBreakdown]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (step, b) in history.iter().enumerate() {
        out.push_str(&format!(
            "{step},{},{},{},{},{}\n",
            b.total_loss, b.mean_logit, b.mean_preference_prob, b.mean_implicit_acc, b.gradient_norm
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a metrics CSV written by [`write_metrics`], checking the header and
/// the step numbering.
pub fn read_metrics(path: &Path) -> Result<Vec<LossBreakdown>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        Some((_, h)) => {
            return Err(Error::parse_at(1, format!("unexpected metrics header {h:?}")))
        }
        None => return Err(Error::parse("metrics file is empty")),
    }
    let mut history = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::parse_at(lineno, format!("expected 6 fields, got {}", fields.len())));
        }
        let step: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse_at(lineno, format!("bad step index {:?}", fields[0])))?;
        if step != history.len() {
            return Err(Error::parse_at(
                lineno,
                format!("step {step} out of order, expected {}", history.len()),
            ));
        }
        let mut nums = [0.0f64; 5];
        for (slot, raw) in nums.iter_mut().zip(&fields[1..]) {
            *slot = raw
                .parse()
                .map_err(|_| Error::parse_at(lineno, format!("bad numeric field {raw:?}")))?;
        }
        history.push(LossBreakdown {
            total_loss: nums[0],
            mean_logit: nums[1],
            mean_preference_prob: nums[2],
            mean_implicit_acc: nums[3],
            gradient_norm: nums[4],
        });
    }
    Ok(history)
}

/// Writes an SFT loss history as a two-column CSV.
pub fn write_sft_metrics(path: &Path, history: &[f64]) -> Result<()> {
    let mut out = String::from("step,dm_loss\n");
    for (step, loss) in history.iter().enumerate() {
        out.push_str(&format!("{step},{loss}\n"));
    }
    write_atomic(path, out.as_bytes())
}
