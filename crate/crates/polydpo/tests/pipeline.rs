//! End-to-end backbone checks: data → SFT → sampling/evaluation →
//! preference training, on an independent seed path from the acceptance
//! suite's frozen configuration.

use std::sync::OnceLock;

use polydpo::checkpoint::Checkpoint;
use polydpo::dataset::{gen_clean, PreferenceDataset};
use polydpo::denoiser::{Denoiser, DenoiserConfig};
use polydpo::diffusion::sample;
use polydpo::eval::{evaluate_policy, EVAL_SAMPLE_STEPS};
use polydpo::rng::derive_seed;
use polydpo::schedule::{NoiseSchedule, ScheduleKind, WeightMode};
use polydpo::task::{ConditionId, TaskDescriptor};
use polydpo::trainer::{sft_run, train_run, SftMode, TrainerConfig};

const ROOT_SEED: u64 = 7;

fn base_cfg() -> TrainerConfig {
    TrainerConfig {
        beta: 500.0,
        alpha: 0.0,
        learning_rate: 2e-4,
        n_steps: 400,
        batch_size: 32,
        seed: ROOT_SEED,
        schedule: ScheduleKind::Cosine,
        weight_mode: WeightMode::Constant,
        sft_mode: SftMode::WinnerOnly,
    }
}

/// Clean dataset plus an SFT-tuned model, shared by all tests in this file.
fn sft_pipeline() -> &'static (PreferenceDataset, Checkpoint) {
    static PIPE: OnceLock<(PreferenceDataset, Checkpoint)> = OnceLock::new();
    PIPE.get_or_init(|| {
        let task = TaskDescriptor::default();
        let ds = gen_clean(&task, 600, derive_seed(ROOT_SEED, "pipe-data", &[])).unwrap();
        let model = Denoiser::random(
            DenoiserConfig::default(),
            derive_seed(ROOT_SEED, "pipe-init", &[]),
        )
        .unwrap();
        let sft_cfg = TrainerConfig {
            learning_rate: 2e-3,
            n_steps: 10_000,
            seed: derive_seed(ROOT_SEED, "pipe-sft", &[]),
            ..base_cfg()
        };
        let sft = sft_run(&model, &ds, &sft_cfg).unwrap();
        (ds, Checkpoint::new(ScheduleKind::Cosine, sft.model))
    })
}

fn composite_of(model: &Denoiser, task: &TaskDescriptor, eval_seed: u64) -> f64 {
    let conditions: Vec<ConditionId> = (0..task.n_conditions).map(ConditionId).collect();
    let schedule = NoiseSchedule::new(ScheduleKind::Cosine);
    evaluate_policy(model, &schedule, task, &conditions, 128, eval_seed).unwrap().composite
}

/// After SFT on clean winners, ancestral samples land on the conditioned
/// mode: at least 90% within three mode standard deviations of the center
/// the condition asks for.
#[test]
fn sft_model_samples_concentrate_on_their_conditioned_modes() {
    let task = TaskDescriptor::default();
    let (_, init) = sft_pipeline();
    let schedule = NoiseSchedule::new(ScheduleKind::Cosine);
    let n = 500;
    let mut within = 0usize;
    for i in 0..n {
        let c = ConditionId(i % task.n_conditions);
        let center = task.mode_center(c).unwrap();
        let pt = sample(
            &init.model,
            &schedule,
            c,
            EVAL_SAMPLE_STEPS,
            derive_seed(ROOT_SEED, "pipe-samples", &[i as u64]),
        )
        .unwrap();
        let dist = pt
            .coords
            .iter()
            .zip(&center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist <= 3.0 * task.mode_std {
            within += 1;
        }
    }
    let frac = within as f64 / n as f64;
    assert!(
        frac >= 0.9,
        "only {frac} of samples landed within 3 mode standard deviations of their \
         conditioned center"
    );
}

/// SFT moves the composite score strictly above the all-zeros model (whose
/// samples are unshaped noise), under the same evaluation seed.
#[test]
fn sft_improves_composite_over_untrained_model() {
    let task = TaskDescriptor::default();
    let (_, init) = sft_pipeline();
    let eval_seed = derive_seed(ROOT_SEED, "pipe-eval", &[]);
    let tuned = composite_of(&init.model, &task, eval_seed);
    let zeros = Denoiser::zeros(DenoiserConfig::default()).unwrap();
    let untrained = composite_of(&zeros, &task, eval_seed);
    assert!(
        tuned > untrained,
        "SFT composite {tuned} did not beat the untrained composite {untrained}"
    );
}

/// Preference training on clean dominance labels, launched from the SFT
/// checkpoint, separates winners from losers: implicit accuracy over the
/// final fifth of training stays high, and the mean preference probability
/// ends well above its 0.5 starting point.
#[test]
fn preference_training_reaches_high_implicit_accuracy_on_clean_labels() {
    let (ds, init) = sft_pipeline();
    let cfg = TrainerConfig { seed: derive_seed(ROOT_SEED, "pipe-train", &[]), ..base_cfg() };
    let run = train_run(ds, &cfg, init).unwrap();
    let h = &run.history;
    assert!(h[0].mean_preference_prob == 0.5, "training did not start from a neutral policy");
    let fifth = h.len() / 5;
    let tail = &h[h.len() - fifth..];
    let acc = tail.iter().map(|b| b.mean_implicit_acc).sum::<f64>() / fifth as f64;
    let prob = tail.iter().map(|b| b.mean_preference_prob).sum::<f64>() / fifth as f64;
    assert!(acc >= 0.8, "final-fifth implicit accuracy {acc} is below 0.8");
    assert!(prob >= 0.7, "final-fifth mean preference probability {prob} is below 0.7");
    println!("final-fifth implicit accuracy {acc:.3}, preference probability {prob:.3}");
}
