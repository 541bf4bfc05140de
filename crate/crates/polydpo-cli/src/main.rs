//! `polydpo` — drives the desk-scale pipeline from a single configuration:
//! generate preference data, analyze label consistency, SFT a model, run
//! preference training, sweep the polynomial coefficient α, and tabulate
//! loss-gradient curves.
//!
//! Every subcommand reads the same TOML configuration (`--config`, or the
//! built-in defaults) and derives its stage seed from the root `seed`, so
//! a pipeline is reproducible end to end from one file. Flags override
//! file values. All writes go through an atomic temp-file-and-rename, so
//! re-running a command replaces artifacts without ever exposing partial
//! files.

mod config;

use std::env;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_regime, regime_name, RunConfig};
use polydpo::checkpoint::Checkpoint;
use polydpo::dataset::{
    consistency_analysis, draw_winners, gen_clean, gen_conflicting, gen_oversimple,
    PreferenceDataset, Regime,
};
use polydpo::denoiser::Denoiser;
use polydpo::eval::{alpha_sweep, gradient_curve, write_curve_table, write_sweep_table};
use polydpo::io_util::write_atomic;
use polydpo::rng::derive_seed;
use polydpo::task::REWARD_NAMES;
use polydpo::trainer::{sft_run, train_run, write_metrics, write_sft_metrics, TrainerConfig};
use polydpo::{Error, Result};

#[derive(Parser)]
#[command(
    name = "polydpo",
    version,
    about = "Desk-scale preference-optimization laboratory for toy diffusion models"
)]
struct Cli {
    /// TOML run configuration; missing keys fall back to defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed, overriding the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a preference dataset and report its label consistency.
    GenData(GenDataArgs),
    /// Print (and optionally save) consistency statistics for a dataset.
    Analyze(AnalyzeArgs),
    /// Supervised fine-tuning of a fresh model on a dataset's winners.
    Sft(SftArgs),
    /// Preference training from an SFT checkpoint.
    Train(TrainArgs),
    /// Train across an α grid with repeated seeds and write the sweep table.
    Sweep(SweepArgs),
    /// Tabulate |dL/dz| against the preference probability for given α.
    GradCurve(GradCurveArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Regime: clean, conflicting, or oversimple.
    #[arg(long)]
    regime: Option<String>,
    /// Number of pairs to generate.
    #[arg(long)]
    n_pairs: Option<usize>,
    /// Consistency target (conflicting regime only).
    #[arg(long)]
    target_consistency: Option<f64>,
    /// Within-batch shuffle size (over-simple regime only).
    #[arg(long)]
    shuffle_batch: Option<usize>,
    /// Output path; defaults to <output.dir>/<regime>.pairs.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Dataset to analyze.
    dataset: PathBuf,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SftArgs {
    /// Dataset to tune on; defaults to the configured regime's default path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint output; defaults to <output.dir>/sft.ckpt. Per-step
    /// diffusion losses land next to it as <stem>.metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset to train on; defaults to the configured regime's default path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Starting checkpoint; defaults to <output.dir>/sft.ckpt.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Checkpoint output; defaults to <output.dir>/policy.ckpt. Per-step
    /// metrics land next to it as <stem>.metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Polynomial coefficient override.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "diffusion_dpo")]
    alpha: Option<f64>,
    /// Regularization strength override.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Train with the plain Diffusion-DPO objective; identical to --alpha 0.
    #[arg(long)]
    diffusion_dpo: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset to sweep on; defaults to the configured regime's default path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Starting checkpoint; defaults to <output.dir>/sft.ckpt.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Comma-separated α values overriding the configured grid.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Training repetitions per α.
    #[arg(long)]
    n_seeds: Option<usize>,
    /// Sweep table output; defaults to <output.dir>/sweep.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCurveArgs {
    /// Comma-separated α values; defaults to the configured sweep grid.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Number of interior preference-probability points.
    #[arg(long, default_value_t = 99)]
    points: usize,
    /// Curve table output; defaults to <output.dir>/gradient-curve.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenData(args) => cmd_gen_data(&cfg, args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sft(args) => cmd_sft(&cfg, args),
        Command::Train(args) => cmd_train(&cfg, args),
        Command::Sweep(args) => cmd_sweep(&cfg, args),
        Command::GradCurve(args) => cmd_grad_curve(&cfg, args),
    }
}

fn cmd_gen_data(cfg: &RunConfig, args: GenDataArgs) -> Result<()> {
    let regime = match &args.regime {
        Some(s) => parse_regime(s)?,
        None => cfg.data.regime,
    };
    let n_pairs = args.n_pairs.unwrap_or(cfg.data.n_pairs);
    let target = args.target_consistency.unwrap_or(cfg.data.target_consistency);
    let shuffle_batch = args.shuffle_batch.unwrap_or(cfg.data.shuffle_batch);
    let seed = derive_seed(cfg.seed, "cli-data", &[regime as u64]);
    let ds = match regime {
        Regime::Clean => gen_clean(&cfg.task, n_pairs, seed)?,
        Regime::Conflicting => gen_conflicting(&cfg.task, n_pairs, seed, target)?,
        Regime::Oversimple => {
            let winners = draw_winners(&cfg.task, n_pairs, seed)?;
            gen_oversimple(&cfg.task, &winners, shuffle_batch, seed)?
        }
    };
    let out = args.out.unwrap_or_else(|| dataset_default_path(cfg, regime));
    ensure_parent(&out)?;
    ds.save(&out)?;
    let report = consistency_analysis(&ds)?;
    println!(
        "wrote {} {} pairs to {} (consistency {:.4})",
        ds.pairs.len(),
        regime_name(regime),
        out.display(),
        report.consistency_rate
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let report = consistency_analysis(&ds)?;
    println!(
        "{}: {} {} pairs, {} unanimous, consistency {:.4}",
        args.dataset.display(),
        report.n_pairs,
        regime_name(ds.regime),
        report.unanimous_count,
        report.consistency_rate
    );
    println!("reward-dimension sign agreement:");
    for (name, row) in REWARD_NAMES.iter().zip(&report.agreement) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("  {name:<12} {}", cells.join("  "));
    }
    if let Some(out) = &args.out {
        ensure_parent(out)?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Internal(e.to_string()))?;
        write_atomic(out, json.as_bytes())?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn cmd_sft(cfg: &RunConfig, args: SftArgs) -> Result<()> {
    let ds_path = args.dataset.unwrap_or_else(|| dataset_default_path(cfg, cfg.data.regime));
    let ds = load_dataset(&ds_path)?;
    let model = Denoiser::random(cfg.model.clone(), derive_seed(cfg.seed, "cli-init", &[]))?;
    let sft_cfg = TrainerConfig {
        learning_rate: cfg.sft.learning_rate,
        n_steps: cfg.sft.n_steps,
        seed: derive_seed(cfg.seed, "cli-sft", &[]),
        ..cfg.trainer.to_config(0)
    };
    let run = sft_run(&model, &ds, &sft_cfg)?;
    let out = args.out.unwrap_or_else(|| cfg.output.dir.join("sft.ckpt"));
    ensure_parent(&out)?;
    Checkpoint::new(sft_cfg.schedule, run.model).save(&out)?;
    let metrics = metrics_sibling(&out);
    write_sft_metrics(&metrics, &run.history)?;
    println!(
        "SFT {} steps on {} pairs: diffusion loss {:.4} -> {:.4}; checkpoint {}, metrics {}",
        sft_cfg.n_steps,
        ds.pairs.len(),
        run.history.first().copied().unwrap_or(f64::NAN),
        run.history.last().copied().unwrap_or(f64::NAN),
        out.display(),
        metrics.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, args: TrainArgs) -> Result<()> {
    let ds_path = args.dataset.unwrap_or_else(|| dataset_default_path(cfg, cfg.data.regime));
    let ds = load_dataset(&ds_path)?;
    let init_path = args.init.unwrap_or_else(|| cfg.output.dir.join("sft.ckpt"));
    let init = load_checkpoint(&init_path)?;
    let mut tc = cfg.trainer.to_config(derive_seed(cfg.seed, "cli-train", &[]));
    if args.diffusion_dpo {
        tc.alpha = 0.0;
    } else if let Some(alpha) = args.alpha {
        tc.alpha = alpha;
    }
    if let Some(beta) = args.beta {
        tc.beta = beta;
    }
    let run = train_run(&ds, &tc, &init)?;
    let out = args.out.unwrap_or_else(|| cfg.output.dir.join("policy.ckpt"));
    ensure_parent(&out)?;
    run.checkpoint.save(&out)?;
    let metrics = metrics_sibling(&out);
    write_metrics(&metrics, &run.history)?;
    let last = run.history.last().expect("training ran at least one step");
    println!(
        "trained {} steps (alpha {}, beta {}): final loss {:.4}, preference probability \
         {:.4}, implicit accuracy {:.4}; checkpoint {}, metrics {}",
        tc.n_steps,
        tc.alpha,
        tc.beta,
        last.total_loss,
        last.mean_preference_prob,
        last.mean_implicit_acc,
        out.display(),
        metrics.display()
    );
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, args: SweepArgs) -> Result<()> {
    let ds_path = args.dataset.unwrap_or_else(|| dataset_default_path(cfg, cfg.data.regime));
    let ds = load_dataset(&ds_path)?;
    let init_path = args.init.unwrap_or_else(|| cfg.output.dir.join("sft.ckpt"));
    let init = load_checkpoint(&init_path)?;
    let grid = match &args.grid {
        Some(s) => parse_grid(s)?,
        None => cfg.sweep.grid.clone(),
    };
    let n_seeds = args.n_seeds.unwrap_or(cfg.sweep.n_seeds);
    let mut opts = cfg.sweep.options();
    if let Some(workers) = workers_from_env()? {
        opts.workers = workers;
    }
    let base = cfg.trainer.to_config(derive_seed(cfg.seed, "cli-sweep", &[]));
    let result = alpha_sweep(&ds, &base, &grid, n_seeds, &init, &opts)?;
    let out = args.out.unwrap_or_else(|| cfg.output.dir.join("sweep.csv"));
    ensure_parent(&out)?;
    write_sweep_table(&out, &result)?;
    println!("alpha  mean_composite  seeds_ok");
    for s in &result.summaries {
        println!("{:>5}  {:>14.4}  {}", s.alpha, s.mean_composite, s.n_successful_seeds);
    }
    println!(
        "best alpha {} (flatness band {:?} at relative tolerance {}); table {}",
        result.best_alpha,
        result.flatness_band,
        result.rel_tol,
        out.display()
    );
    Ok(())
}

fn cmd_grad_curve(cfg: &RunConfig, args: GradCurveArgs) -> Result<()> {
    let alphas = match &args.grid {
        Some(s) => parse_grid(s)?,
        None => cfg.sweep.grid.clone(),
    };
    let rows = gradient_curve(&alphas, args.points)?;
    let out = args.out.unwrap_or_else(|| cfg.output.dir.join("gradient-curve.csv"));
    ensure_parent(&out)?;
    write_curve_table(&out, &rows)?;
    println!(
        "wrote {} gradient-magnitude rows ({} alphas x {} points) to {}",
        rows.len(),
        alphas.len(),
        args.points,
        out.display()
    );
    Ok(())
}

/// `POLYDPO_WORKERS` overrides the configured sweep worker count.
fn workers_from_env() -> Result<Option<usize>> {
    match env::var("POLYDPO_WORKERS") {
        Ok(v) => {
            let n: usize = v.parse().map_err(|_| {
                Error::Config(format!("POLYDPO_WORKERS must be a positive integer, got {v:?}"))
            })?;
            if n == 0 {
                return Err(Error::Config("POLYDPO_WORKERS must be at least 1".into()));
            }
            Ok(Some(n))
        }
        Err(env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("POLYDPO_WORKERS: {e}"))),
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            let tok = tok.trim();
            tok.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Config(format!("bad grid entry {tok:?}; expected a finite number"))
            })
        })
        .collect()
}

fn dataset_default_path(cfg: &RunConfig, regime: Regime) -> PathBuf {
    cfg.output.dir.join(format!("{}.pairs.jsonl", regime_name(regime)))
}

fn metrics_sibling(out: &Path) -> PathBuf {
    out.with_extension("metrics.csv")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<PreferenceDataset> {
    PreferenceDataset::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}
