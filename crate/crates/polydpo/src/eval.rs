//! Policy evaluation against the task rewards, the α grid-search harness,
//! and the gradient-magnitude curve.
//!
//! The sweep uses a paired design: the training seed of a cell depends only
//! on its seed index (never on α), and every cell shares one evaluation
//! seed, so composites differ across α only through the objective itself.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::denoiser::Denoiser;
use crate::diffusion::sample;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::rng::derive_seed;
use crate::schedule::NoiseSchedule;
use crate::task::{ConditionId, SamplePoint, TaskDescriptor, REWARD_DIMS, REWARD_NAMES};
use crate::trainer::{train_run, TrainerConfig};
use crate::dataset::PreferenceDataset;

/// Ancestral-sampler step count used by every evaluation. Evaluation scores
/// are means, so a single runaway sampling trajectory can dominate a report;
/// 64 log-SNR-uniform steps keep per-step error amplification low enough
/// that a competently trained model produces none.
pub const EVAL_SAMPLE_STEPS: usize = 64;

/// The α grid used when none is configured.
pub const DEFAULT_ALPHA_GRID: [f64; 10] =
    [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0];

/// Default relative tolerance defining the sweep's flatness band.
pub const DEFAULT_FLATNESS_REL_TOL: f64 = 0.01;

/// Reward statistics of a set of generated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean raw reward per dimension, pooled over all samples.
    pub per_dimension_means: Vec<f64>,
    /// Mean of the per-dimension means after standardizing each dimension
    /// by the task's own reward mean/std.
    pub composite: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Scores an explicit list of samples; [`evaluate_policy`] generates the
/// samples and delegates here.
pub fn report_from_samples(
    task: &TaskDescriptor,
    samples: &[SamplePoint],
    seed: u64,
) -> Result<EvalReport> {
    task.validate()?;
    if samples.is_empty() {
        return Err(Error::Precondition("cannot score an empty sample set".into()));
    }
    let mut sums = vec![0.0; REWARD_DIMS];
    for (i, s) in samples.iter().enumerate() {
        if s.coords.len() != task.dim {
            return Err(Error::Precondition(format!(
                "sample {i} has {} coords, task dimension is {}",
                s.coords.len(),
                task.dim
            )));
        }
        if s.coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("sample {i} has non-finite coordinates")));
        }
        let rewards = task.rewards(&s.coords, s.condition)?;
        for (sum, r) in sums.iter_mut().zip(&rewards) {
            *sum += r;
        }
    }
    let n = samples.len() as f64;
    let per_dimension_means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let (task_means, task_stds) = task.reward_standardizer()?;
    let composite = per_dimension_means
        .iter()
        .zip(task_means.iter().zip(&task_stds))
        .map(|(m, (mu, sd))| (m - mu) / sd)
        .sum::<f64>()
        / REWARD_DIMS as f64;
    if !composite.is_finite() {
        return Err(Error::Domain("composite score is non-finite".into()));
    }
    Ok(EvalReport {
        per_dimension_means,
        composite,
        n_samples: samples.len(),
        seed,
    })
}

/// Samples `n_per_condition` points per condition with the fixed sampler
/// configuration and scores them on every reward dimension.
pub fn evaluate_policy(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    task: &TaskDescriptor,
    conditions: &[ConditionId],
    n_per_condition: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_per_condition == 0 {
        return Err(Error::Precondition("need at least one sample per condition".into()));
    }
    if conditions.is_empty() {
        return Err(Error::Precondition("need at least one condition".into()));
    }
    for &c in conditions {
        task.check_condition(c)?;
    }
    let mut samples = Vec::with_capacity(conditions.len() * n_per_condition);
    for &c in conditions {
        for i in 0..n_per_condition {
            let sample_seed = derive_seed(seed, "eval-sample", &[c.0 as u64, i as u64]);
            samples.push(sample(model, schedule, c, EVAL_SAMPLE_STEPS, sample_seed)?);
        }
    }
    report_from_samples(task, &samples, seed)
}

/// One (α, training-seed) sweep job and what came of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub seed_index: usize,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellOutcome {
    Report(EvalReport),
    Failed(String),
}

/// Seed-averaged results for one α value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub mean_composite: f64,
    pub mean_per_dimension: Vec<f64>,
    pub n_successful_seeds: usize,
}

/// Outcome of a grid search over α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    pub cells: Vec<SweepCell>,
    /// One summary per α that produced at least one successful seed.
    pub summaries: Vec<AlphaSummary>,
    pub best_alpha: f64,
    /// All α whose mean composite lies within the flatness tolerance of the
    /// best, sorted ascending; always contains `best_alpha`.
    pub flatness_band: Vec<f64>,
    pub rel_tol: f64,
}

/// Knobs of the sweep harness that are not part of the trainer config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub n_eval_per_condition: usize,
    pub rel_tol: f64,
    pub workers: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            n_eval_per_condition: 64,
            rel_tol: DEFAULT_FLATNESS_REL_TOL,
            workers: 1,
        }
    }
}

impl SweepOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_eval_per_condition == 0 {
            return Err(Error::Config("n_eval_per_condition must be at least 1".into()));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(Error::Config(format!(
                "flatness tolerance must be positive, got {}",
                self.rel_tol
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Trains and evaluates every (α, seed) cell from a shared init checkpoint
/// and aggregates the grid search.
///
/// Cell training seeds derive from the base seed and the seed index only, so
/// each seed index runs under identical stochasticity at every α; all cells
/// share one evaluation seed. Failed cells are recorded and skipped by the
/// aggregation; the sweep errors only if every cell fails.
pub fn alpha_sweep(
    ds: &PreferenceDataset,
    base_cfg: &TrainerConfig,
    grid: &[f64],
    n_seeds: usize,
    init: &Checkpoint,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    base_cfg.validate()?;
    ds.validate()?;
    opts.validate()?;
    if grid.is_empty() {
        return Err(Error::Precondition("alpha grid is empty".into()));
    }
    if grid.iter().any(|a| !a.is_finite()) {
        return Err(Error::Precondition("alpha grid has a non-finite entry".into()));
    }
    if n_seeds == 0 {
        return Err(Error::Precondition("need at least one training seed".into()));
    }
    let eval_seed = derive_seed(base_cfg.seed, "sweep-eval", &[]);
    let conditions: Vec<ConditionId> = (0..ds.task.n_conditions).map(ConditionId).collect();
    let n_jobs = grid.len() * n_seeds;
    let slots: Vec<Mutex<Option<SweepCell>>> = (0..n_jobs).map(|_| Mutex::new(None)).collect();
    let next_job = AtomicUsize::new(0);
    let n_workers = opts.workers.min(n_jobs);
    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            scope.spawn(|| loop {
                let job = next_job.fetch_add(1, Ordering::Relaxed);
                if job >= n_jobs {
                    break;
                }
                let alpha = grid[job / n_seeds];
                let seed_index = job % n_seeds;
                let cell_cfg = TrainerConfig {
                    alpha,
                    seed: derive_seed(base_cfg.seed, "sweep-cell", &[seed_index as u64]),
                    ..*base_cfg
                };
                let outcome = match train_run(ds, &cell_cfg, init) {
                    Ok(run) => {
                        let schedule = NoiseSchedule::new(cell_cfg.schedule);
                        match evaluate_policy(
                            &run.checkpoint.model,
                            &schedule,
                            &ds.task,
                            &conditions,
                            opts.n_eval_per_condition,
                            eval_seed,
                        ) {
                            Ok(report) => CellOutcome::Report(report),
                            Err(e) => CellOutcome::Failed(format!("evaluation failed: {e}")),
                        }
                    }
                    Err(e) => CellOutcome::Failed(format!("training failed: {e}")),
                };
                *slots[job].lock().expect("sweep slot poisoned") =
                    Some(SweepCell { alpha, seed_index, outcome });
            });
        }
    });
    let cells: Vec<SweepCell> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("sweep slot poisoned").expect("sweep job skipped"))
        .collect();
    summarize_sweep(grid, cells, opts.rel_tol)
}

/// Aggregates sweep cells into per-α summaries, the best α (ties resolved
/// toward smaller |α|, then smaller α), and the flatness band at
/// `rel_tol · max(|best composite|, 1)`.
pub fn summarize_sweep(grid: &[f64], cells: Vec<SweepCell>, rel_tol: f64) -> Result<SweepResult> {
    if !(rel_tol.is_finite() && rel_tol > 0.0) {
        return Err(Error::Config(format!(
            "flatness tolerance must be positive, got {rel_tol}"
        )));
    }
    let mut summaries = Vec::new();
    for &alpha in grid {
        let reports: Vec<&EvalReport> = cells
            .iter()
            .filter(|c| c.alpha == alpha)
            .filter_map(|c| match &c.outcome {
                CellOutcome::Report(r) => Some(r),
                CellOutcome::Failed(_) => None,
            })
            .collect();
        if reports.is_empty() {
            continue;
        }
        let n = reports.len() as f64;
        let mean_composite = reports.iter().map(|r| r.composite).sum::<f64>() / n;
        let mut mean_per_dimension = vec![0.0; REWARD_DIMS];
        for r in &reports {
            for (acc, m) in mean_per_dimension.iter_mut().zip(&r.per_dimension_means) {
                *acc += m;
            }
        }
        for m in &mut mean_per_dimension {
            *m /= n;
        }
        summaries.push(AlphaSummary {
            alpha,
            mean_composite,
            mean_per_dimension,
            n_successful_seeds: reports.len(),
        });
    }
    if summaries.is_empty() {
        let first_failure = cells
            .iter()
            .find_map(|c| match &c.outcome {
                CellOutcome::Failed(msg) => Some(msg.clone()),
                CellOutcome::Report(_) => None,
            })
            .unwrap_or_else(|| "no cells were run".into());
        return Err(Error::Generation(format!(
            "every sweep cell failed; first failure: {first_failure}"
        )));
    }
    let best = summaries
        .iter()
        .map(|s| (s.alpha, s.mean_composite))
        .reduce(|a, b| {
            // Higher composite wins; exact ties prefer the α closer to zero,
            // then the smaller α.
            if b.1 > a.1
                || (b.1 == a.1 && (b.0.abs() < a.0.abs() || (b.0.abs() == a.0.abs() && b.0 < a.0)))
            {
                b
            } else {
                a
            }
        })
        .expect("summaries checked non-empty");
    let (best_alpha, best_composite) = best;
    let tolerance = rel_tol * best_composite.abs().max(1.0);
    let mut flatness_band: Vec<f64> = summaries
        .iter()
        .filter(|s| s.mean_composite >= best_composite - tolerance)
        .map(|s| s.alpha)
        .collect();
    flatness_band.sort_by(|a, b| a.partial_cmp(b).expect("finite alphas"));
    Ok(SweepResult {
        grid: grid.to_vec(),
        cells,
        summaries,
        best_alpha,
        flatness_band,
        rel_tol,
    })
}

/// Writes the per-cell sweep table: one row per (α, seed) with the mean raw
/// reward per dimension and the composite. Failed cells carry NaN columns.
pub fn write_sweep_table(path: &Path, result: &SweepResult) -> Result<()> {
    let mut out = String::from("alpha,seed");
    for name in REWARD_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",composite\n");
    for cell in &result.cells {
        out.push_str(&format!("{},{}", cell.alpha, cell.seed_index));
        match &cell.outcome {
            CellOutcome::Report(r) => {
                for m in &r.per_dimension_means {
                    out.push_str(&format!(",{m}"));
                }
                out.push_str(&format!(",{}\n", r.composite));
            }
            CellOutcome::Failed(_) => {
                for _ in 0..=REWARD_DIMS {
                    out.push_str(",NaN");
                }
                out.push('\n');
            }
        }
    }
    write_atomic(path, out.as_bytes())
}

/// One row of the gradient-magnitude curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub p: f64,
    pub alpha: f64,
    pub magnitude: f64,
}

/// Evaluates |−(1 − p)(1 + αp)| on the open uniform grid
/// p_i = i/(n_points + 1), i = 1..=n_points, for each α in order.
pub fn gradient_curve(alphas: &[f64], n_points: usize) -> Result<Vec<CurveRow>> {
    if alphas.is_empty() {
        return Err(Error::Precondition("need at least one alpha".into()));
    }
    if alphas.iter().any(|a| !a.is_finite()) {
        return Err(Error::Precondition("alpha values must be finite".into()));
    }
    if n_points < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 curve points, got {n_points}"
        )));
    }
    let mut rows = Vec::with_capacity(alphas.len() * n_points);
    for &alpha in alphas {
        for i in 1..=n_points {
            let p = i as f64 / (n_points + 1) as f64;
            let magnitude = (-(1.0 - p) * (1.0 + alpha * p)).abs();
            rows.push(CurveRow { p, alpha, magnitude });
        }
    }
    Ok(rows)
}

/// Writes gradient-curve rows as a three-column table.
pub fn write_curve_table(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut out = String::from("p,alpha,magnitude\n");
    for row in rows {
        out.push_str(&format!("{},{},{}\n", row.p, row.alpha, row.magnitude));
    }
    write_atomic(path, out.as_bytes())
}
