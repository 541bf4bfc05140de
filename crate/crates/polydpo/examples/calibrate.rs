//! Exploration harness behind the constants frozen into the test suite.
//!
//! Runs the three preference-data regimes end to end — generate → SFT →
//! preference training → evaluation — at adjustable desk-scale settings and
//! prints the tables the defaults were read off from. This is not a test:
//! the numbers move with the knobs; the suite pins one calibrated
//! configuration and asserts its qualitative properties.
//!
//! Usage:
//!
//! ```text
//! cargo run --example calibrate -- <probe|sweep|sft-gap|stability|all> [key=value ...]
//! ```
//!
//! Knobs (defaults in parentheses are the frozen configuration the
//! acceptance suite asserts): `seed` (0), `n_pairs` (600), `sft_steps`
//! (10000), `sft_lr` (2e-3), `dpo_steps` (400), `dpo_lr` (2e-4), `beta`
//! (500), `alpha` (0, the base config; sweeps ignore it), `batch` (32),
//! `n_seeds` (3), `n_eval` (128), `workers` (1), `os_batch` (8).

use std::time::Instant;

use polydpo::checkpoint::Checkpoint;
use polydpo::dataset::{
    draw_winners, gen_clean, gen_conflicting, gen_oversimple, PreferenceDataset, Regime,
};
use polydpo::denoiser::{Denoiser, DenoiserConfig};
use polydpo::eval::{alpha_sweep, evaluate_policy, SweepOptions, DEFAULT_ALPHA_GRID};
use polydpo::rng::derive_seed;
use polydpo::schedule::{NoiseSchedule, ScheduleKind, WeightMode};
use polydpo::task::{ConditionId, TaskDescriptor};
use polydpo::trainer::{sft_run, train_run, SftMode, TrainerConfig};

#[derive(Debug, Clone)]
struct Knobs {
    seed: u64,
    n_pairs: usize,
    sft_steps: usize,
    sft_lr: f64,
    dpo_steps: usize,
    dpo_lr: f64,
    beta: f64,
    alpha: f64,
    batch: usize,
    n_seeds: usize,
    n_eval: usize,
    workers: usize,
    os_batch: usize,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            seed: 0,
            n_pairs: 600,
            sft_steps: 10_000,
            sft_lr: 2e-3,
            dpo_steps: 400,
            dpo_lr: 2e-4,
            beta: 500.0,
            alpha: 0.0,
            batch: 32,
            n_seeds: 3,
            n_eval: 128,
            workers: 1,
            os_batch: 8,
        }
    }
}

impl Knobs {
    fn parse(args: &[String]) -> Result<Self, String> {
        let mut k = Knobs::default();
        for arg in args {
            let (key, value) = arg
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {arg:?}"))?;
            let bad = |e: std::num::ParseFloatError| format!("{key}: {e}");
            let bad_int = |e: std::num::ParseIntError| format!("{key}: {e}");
            match key {
                "seed" => k.seed = value.parse().map_err(bad_int)?,
                "n_pairs" => k.n_pairs = value.parse().map_err(bad_int)?,
                "sft_steps" => k.sft_steps = value.parse().map_err(bad_int)?,
                "sft_lr" => k.sft_lr = value.parse().map_err(bad)?,
                "dpo_steps" => k.dpo_steps = value.parse().map_err(bad_int)?,
                "dpo_lr" => k.dpo_lr = value.parse().map_err(bad)?,
                "beta" => k.beta = value.parse().map_err(bad)?,
                "alpha" => k.alpha = value.parse().map_err(bad)?,
                "batch" => k.batch = value.parse().map_err(bad_int)?,
                "n_seeds" => k.n_seeds = value.parse().map_err(bad_int)?,
                "n_eval" => k.n_eval = value.parse().map_err(bad_int)?,
                "workers" => k.workers = value.parse().map_err(bad_int)?,
                "os_batch" => k.os_batch = value.parse().map_err(bad_int)?,
                _ => return Err(format!("unknown knob {key:?}")),
            }
        }
        Ok(k)
    }

    fn base_cfg(&self) -> TrainerConfig {
        TrainerConfig {
            beta: self.beta,
            alpha: self.alpha,
            learning_rate: self.dpo_lr,
            n_steps: self.dpo_steps,
            batch_size: self.batch,
            seed: self.seed,
            schedule: ScheduleKind::Cosine,
            weight_mode: WeightMode::Constant,
            sft_mode: SftMode::WinnerOnly,
        }
    }
}

const REGIMES: [Regime; 3] = [Regime::Clean, Regime::Conflicting, Regime::Oversimple];

fn regime_dataset(
    task: &TaskDescriptor,
    regime: Regime,
    k: &Knobs,
) -> Result<PreferenceDataset, polydpo::Error> {
    let seed = derive_seed(k.seed, "calib-data", &[regime as u64]);
    match regime {
        Regime::Clean => gen_clean(task, k.n_pairs, seed),
        Regime::Conflicting => gen_conflicting(task, k.n_pairs, seed, 0.21),
        Regime::Oversimple => {
            let winners = draw_winners(task, k.n_pairs, seed)?;
            gen_oversimple(task, &winners, k.os_batch, seed)
        }
    }
}

/// Generates a regime's dataset and SFT-tunes a fresh model on its winners.
fn pipeline_init(
    task: &TaskDescriptor,
    regime: Regime,
    k: &Knobs,
) -> Result<(PreferenceDataset, Checkpoint), polydpo::Error> {
    let ds = regime_dataset(task, regime, k)?;
    let model = Denoiser::random(
        DenoiserConfig::default(),
        derive_seed(k.seed, "calib-init", &[]),
    )?;
    let sft_cfg = TrainerConfig {
        learning_rate: k.sft_lr,
        n_steps: k.sft_steps,
        seed: derive_seed(k.seed, "calib-sft", &[regime as u64]),
        ..k.base_cfg()
    };
    let sft = sft_run(&model, &ds, &sft_cfg)?;
    println!(
        "  [{:?}] SFT {} steps: dm_loss {:.4} -> {:.4}",
        regime,
        k.sft_steps,
        mean(&sft.history[..20.min(sft.history.len())]),
        mean(&sft.history[sft.history.len().saturating_sub(20)..]),
    );
    Ok((ds, Checkpoint::new(ScheduleKind::Cosine, sft.model)))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn composite_of(
    model: &Denoiser,
    task: &TaskDescriptor,
    k: &Knobs,
    eval_seed: u64,
) -> Result<f64, polydpo::Error> {
    let conditions: Vec<ConditionId> = (0..task.n_conditions).map(ConditionId).collect();
    let schedule = NoiseSchedule::new(ScheduleKind::Cosine);
    let report = evaluate_policy(model, &schedule, task, &conditions, k.n_eval, eval_seed)?;
    Ok(report.composite)
}

/// Trains a handful of α values per regime and prints loss/probability/
/// accuracy trajectories plus the final composite — the raw picture the
/// sweep criteria compress.
fn probe(k: &Knobs) -> Result<(), polydpo::Error> {
    let task = TaskDescriptor::default();
    let eval_seed = derive_seed(k.seed, "calib-eval", &[]);
    for regime in REGIMES {
        let t0 = Instant::now();
        let (ds, init) = pipeline_init(&task, regime, k)?;
        let base = composite_of(&init.model, &task, k, eval_seed)?;
        println!("  [{:?}] SFT-model composite {:.4}", regime, base);
        for alpha in [-1.0, 0.0, 2.0, 10.0] {
            let cfg = TrainerConfig {
                alpha,
                seed: derive_seed(k.seed, "calib-probe", &[]),
                ..k.base_cfg()
            };
            let run = train_run(&ds, &cfg, &init)?;
            let h = &run.history;
            let marks = [0, h.len() / 4, h.len() / 2, 3 * h.len() / 4, h.len() - 1];
            print!("    alpha {alpha:>5}: p/acc");
            for &i in &marks {
                print!(" {:.3}/{:.2}", h[i].mean_preference_prob, h[i].mean_implicit_acc);
            }
            let composite = composite_of(&run.checkpoint.model, &task, k, eval_seed)?;
            println!("  composite {composite:.4}");
        }
        println!("  [{:?}] probe took {:.1?}", regime, t0.elapsed());
    }
    Ok(())
}

/// Full grid sweep per regime, printing the per-α summary table and the
/// qualitative calls the acceptance criteria make.
fn sweep(k: &Knobs) -> Result<(), polydpo::Error> {
    let task = TaskDescriptor::default();
    let opts = SweepOptions {
        n_eval_per_condition: k.n_eval,
        workers: k.workers,
        ..SweepOptions::default()
    };
    for regime in REGIMES {
        let t0 = Instant::now();
        let (ds, init) = pipeline_init(&task, regime, k)?;
        let result = alpha_sweep(&ds, &k.base_cfg(), &DEFAULT_ALPHA_GRID, k.n_seeds, &init, &opts)?;
        println!("  [{:?}] alpha  mean_composite  (n_seeds ok)", regime);
        for s in &result.summaries {
            println!(
                "    {:>5}  {:>14.4}  ({})",
                s.alpha, s.mean_composite, s.n_successful_seeds
            );
        }
        println!(
            "  [{:?}] best_alpha {} band {:?}  ({:.1?})",
            regime,
            result.best_alpha,
            result.flatness_band,
            t0.elapsed()
        );
        match regime {
            Regime::Clean => println!(
                "    clean call: 0 in band = {}, |best| <= 1 = {}",
                result.flatness_band.contains(&0.0),
                result.best_alpha.abs() <= 1.0
            ),
            Regime::Conflicting => {
                println!("    conflicting call: best > 0 = {}", result.best_alpha > 0.0)
            }
            Regime::Oversimple => {
                println!("    over-simple call: best < 0 = {}", result.best_alpha < 0.0)
            }
        }
    }
    Ok(())
}

/// Sampler-quality diagnostic: where do the SFT model's samples land, as a
/// function of sampler step count? Prints the fraction within 3 mode
/// standard deviations of the conditioned center — the backbone's smoke-test
/// bar is 90% — plus distance quantiles.
fn samples(k: &Knobs) -> Result<(), polydpo::Error> {
    use polydpo::diffusion::sample;
    use polydpo::eval::report_from_samples;
    let task = TaskDescriptor::default();
    let schedule = NoiseSchedule::new(ScheduleKind::Cosine);
    for regime in [Regime::Clean, Regime::Oversimple] {
        let (_, init) = pipeline_init(&task, regime, k)?;
        for n_steps in [8, 16, 32, 64] {
            let n = 500;
            let mut dists = Vec::with_capacity(n);
            let mut points = Vec::with_capacity(n);
            for i in 0..n {
                let c = ConditionId(i % task.n_conditions);
                let center = task.mode_center(c)?;
                let seed = derive_seed(k.seed, "calib-samples", &[n_steps as u64, i as u64]);
                let pt = sample(&init.model, &schedule, c, n_steps, seed)?;
                let d2: f64 = pt
                    .coords
                    .iter()
                    .zip(&center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dists.push(d2.sqrt());
                points.push(pt);
            }
            let composite = report_from_samples(&task, &points, 0)?.composite;
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let within = dists.iter().filter(|&&d| d <= 3.0 * task.mode_std).count();
            println!(
                "  [{:?}] {:2} steps: within-3σ {:.3}  d50 {:.3}  d90 {:.3}  d99 {:.3}  max {:.2}  composite {:.3}",
                regime,
                n_steps,
                within as f64 / n as f64,
                dists[n / 2],
                dists[9 * n / 10],
                dists[99 * n / 100],
                dists[n - 1],
                composite
            );
        }
    }
    Ok(())
}

/// Head-to-head of preference training from an SFT init vs. from the raw
/// random init, per seed.
fn sft_gap(k: &Knobs) -> Result<(), polydpo::Error> {
    let task = TaskDescriptor::default();
    let eval_seed = derive_seed(k.seed, "calib-eval", &[]);
    let (ds, sft_init) = pipeline_init(&task, Regime::Clean, k)?;
    let raw = Denoiser::random(
        DenoiserConfig::default(),
        derive_seed(k.seed, "calib-init", &[]),
    )?;
    let raw_init = Checkpoint::new(ScheduleKind::Cosine, raw);
    let mut strict = 0;
    let (mut sum_with, mut sum_without) = (0.0, 0.0);
    for s in 0..k.n_seeds {
        let cfg = TrainerConfig {
            seed: derive_seed(k.seed, "calib-gap", &[s as u64]),
            ..k.base_cfg()
        };
        let with_sft = train_run(&ds, &cfg, &sft_init)?;
        let without = train_run(&ds, &cfg, &raw_init)?;
        let cw = composite_of(&with_sft.checkpoint.model, &task, k, eval_seed)?;
        let co = composite_of(&without.checkpoint.model, &task, k, eval_seed)?;
        println!("  seed {s}: with SFT {cw:.4}  without {co:.4}");
        if cw > co {
            strict += 1;
        }
        sum_with += cw;
        sum_without += co;
    }
    println!(
        "  means: with SFT {:.4}  without {:.4}  strict {} / {}",
        sum_with / k.n_seeds as f64,
        sum_without / k.n_seeds as f64,
        strict,
        k.n_seeds
    );
    Ok(())
}

/// Long clean-regime run: probability bounds and the implicit-accuracy drift
/// between the first and final tenth of training.
fn stability(k: &Knobs) -> Result<(), polydpo::Error> {
    let task = TaskDescriptor::default();
    let t0 = Instant::now();
    let (ds, init) = pipeline_init(&task, Regime::Clean, k)?;
    let cfg = TrainerConfig {
        n_steps: 2000,
        seed: derive_seed(k.seed, "calib-stability", &[]),
        ..k.base_cfg()
    };
    let run = train_run(&ds, &cfg, &init)?;
    let h = &run.history;
    let tenth = h.len() / 10;
    let p_min = h.iter().map(|b| b.mean_preference_prob).fold(f64::INFINITY, f64::min);
    let p_max = h.iter().map(|b| b.mean_preference_prob).fold(f64::NEG_INFINITY, f64::max);
    let finite = h.iter().all(|b| b.total_loss.is_finite());
    let acc_first = mean(&h[..tenth].iter().map(|b| b.mean_implicit_acc).collect::<Vec<_>>());
    let acc_last = mean(
        &h[h.len() - tenth..]
            .iter()
            .map(|b| b.mean_implicit_acc)
            .collect::<Vec<_>>(),
    );
    println!(
        "  2000 steps in {:.1?}: loss finite {}, p in [{:.6}, {:.6}], acc first 10% {:.3} vs final 10% {:.3}",
        t0.elapsed(),
        finite,
        p_min,
        p_max,
        acc_first,
        acc_last
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("all");
    let k = Knobs::parse(&args[1.min(args.len())..])?;
    println!("knobs: {k:?}");
    let t0 = Instant::now();
    match mode {
        "probe" => probe(&k)?,
        "samples" => samples(&k)?,
        "sweep" => sweep(&k)?,
        "sft-gap" => sft_gap(&k)?,
        "stability" => stability(&k)?,
        "all" => {
            probe(&k)?;
            sweep(&k)?;
            sft_gap(&k)?;
            stability(&k)?;
        }
        other => return Err(format!("unknown mode {other:?}").into()),
    }
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
