//! Preference-pair datasets in three regimes — clean (Pareto-dominant
//! winners), conflicting (single-dimension labels mixed with dominance
//! labels to hit a target consistency rate), and over-simple (losers are
//! other winners shuffled within a batch) — plus the cross-dimensional
//! consistency analysis and majority-vote labeling.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::rng::component_rng;
use crate::task::{ConditionId, SamplePoint, TaskDescriptor, REWARD_DIMS};

/// Version written into every dataset file header; loaders reject others.
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Maximum rejection-sampling attempts before a generator gives up on a pair.
pub const PAIR_REJECTION_BUDGET: usize = 10_000;

/// Number of simulated pairs used to calibrate the dominance-mixing weight.
pub const CALIBRATION_PAIRS: usize = 20_000;

/// Which of the three data-quality regimes a dataset was generated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Clean,
    Conflicting,
    Oversimple,
}

/// How a pair's winner/loser assignment was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Winner beats the loser on every reward dimension.
    Dominance,
    /// Winner beats the loser on one recorded dimension only.
    SingleDimension,
    /// Loser is another pair's winner, shuffled within a batch.
    Shuffle,
    /// Winner chosen by an odd panel of judges.
    MajorityVote,
}

/// One score per reward dimension, in the order of
/// [`crate::task::REWARD_NAMES`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardVector(pub Vec<f64>);

impl RewardVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        let v = RewardVector(scores);
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.len() != REWARD_DIMS {
            return Err(Error::Precondition(format!(
                "reward vector has {} entries, expected {REWARD_DIMS}",
                self.0.len()
            )));
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("reward vector has a non-finite entry".into()));
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A labeled comparison: under `condition`, `winner` was preferred to
/// `loser`. Both reward vectors are recorded at generation time; analyses
/// recompute them from coordinates rather than trusting these copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub condition: ConditionId,
    pub winner: SamplePoint,
    pub loser: SamplePoint,
    pub winner_rewards: RewardVector,
    pub loser_rewards: RewardVector,
    pub label_source: LabelSource,
    pub source_dimension: Option<usize>,
}

impl PreferencePair {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        condition: ConditionId,
        winner: SamplePoint,
        loser: SamplePoint,
        winner_rewards: RewardVector,
        loser_rewards: RewardVector,
        label_source: LabelSource,
        source_dimension: Option<usize>,
    ) -> Result<Self> {
        let pair = PreferencePair {
            condition,
            winner,
            loser,
            winner_rewards,
            loser_rewards,
            label_source,
            source_dimension,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Checks every structural invariant, including the label-source-specific
    /// reward constraints.
    pub fn validate(&self) -> Result<()> {
        if self.winner.condition != self.condition || self.loser.condition != self.condition {
            return Err(Error::Precondition(
                "winner and loser must be presented under the pair's condition".into(),
            ));
        }
        if self.winner.coords.len() != self.loser.coords.len() {
            return Err(Error::Precondition(format!(
                "winner has {} coords, loser has {}",
                self.winner.coords.len(),
                self.loser.coords.len()
            )));
        }
        let finite =
            |p: &SamplePoint| p.coords.iter().all(|v| v.is_finite());
        if !finite(&self.winner) || !finite(&self.loser) {
            return Err(Error::Domain("pair has non-finite coordinates".into()));
        }
        if self.winner.coords == self.loser.coords {
            return Err(Error::Precondition(
                "winner and loser coordinates must differ".into(),
            ));
        }
        self.winner_rewards.validate()?;
        self.loser_rewards.validate()?;
        let w = self.winner_rewards.as_slice();
        let l = self.loser_rewards.as_slice();
        match self.label_source {
            LabelSource::Dominance => {
                if self.source_dimension.is_some() {
                    return Err(Error::Precondition(
                        "dominance labels carry no source dimension".into(),
                    ));
                }
                let weakly = w.iter().zip(l).all(|(a, b)| a >= b);
                let somewhere_strict = w.iter().zip(l).any(|(a, b)| a > b);
                if !(weakly && somewhere_strict) {
                    return Err(Error::Precondition(
                        "dominance-labeled winner must beat the loser element-wise".into(),
                    ));
                }
            }
            LabelSource::SingleDimension => {
                let d = self.source_dimension.ok_or_else(|| {
                    Error::Precondition(
                        "single-dimension labels must record their dimension".into(),
                    )
                })?;
                if d >= w.len() {
                    return Err(Error::Precondition(format!(
                        "source dimension {d} out of range for {} rewards",
                        w.len()
                    )));
                }
                if w[d] <= l[d] {
                    return Err(Error::Precondition(format!(
                        "single-dimension winner must beat the loser on dim {d}"
                    )));
                }
            }
            LabelSource::Shuffle | LabelSource::MajorityVote => {
                if self.source_dimension.is_some() {
                    return Err(Error::Precondition(
                        "this label source carries no source dimension".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A set of preference pairs together with the task they were generated
/// under, the regime, and the generator seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub task: TaskDescriptor,
    pub regime: Regime,
    pub generator_seed: u64,
    pub pairs: Vec<PreferencePair>,
}

impl PreferenceDataset {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.pairs.is_empty() {
            return Err(Error::Precondition("dataset has no pairs".into()));
        }
        for (i, pair) in self.pairs.iter().enumerate() {
            pair.validate()
                .map_err(|e| Error::Precondition(format!("pair {i}: {e}")))?;
            if pair.winner.coords.len() != self.task.dim {
                return Err(Error::Precondition(format!(
                    "pair {i} has {}-dimensional points, task dimension is {}",
                    pair.winner.coords.len(),
                    self.task.dim
                )));
            }
            self.task
                .check_condition(pair.condition)
                .map_err(|e| Error::Precondition(format!("pair {i}: {e}")))?;
        }
        Ok(())
    }

    /// Writes the dataset as line-delimited JSON: one header line carrying
    /// the format version, task, regime, and seed, then one pair per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let header = DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            task: self.task.clone(),
            regime: self.regime,
            generator_seed: self.generator_seed,
        };
        let mut out = serde_json::to_string(&header).map_err(|e| Error::Internal(e.to_string()))?;
        out.push('\n');
        for pair in &self.pairs {
            out.push_str(
                &serde_json::to_string(pair).map_err(|e| Error::Internal(e.to_string()))?,
            );
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }

    /// Reads a dataset written by [`save`](Self::save), rejecting unknown
    /// format versions and reporting parse failures with 1-based line
    /// numbers.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header_line) = lines
            .next()
            .ok_or_else(|| Error::parse("dataset file is empty"))?;
        let header: DatasetHeader = serde_json::from_str(header_line)
            .map_err(|e| Error::parse_at(1, format!("bad header: {e}")))?;
        if header.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: header.format_version,
                supported: DATASET_FORMAT_VERSION,
            });
        }
        let mut pairs = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let pair: PreferencePair = serde_json::from_str(line)
                .map_err(|e| Error::parse_at(idx + 1, e.to_string()))?;
            pairs.push(pair);
        }
        let ds = PreferenceDataset {
            task: header.task,
            regime: header.regime,
            generator_seed: header.generator_seed,
            pairs,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    task: TaskDescriptor,
    regime: Regime,
    generator_seed: u64,
}

/// Consistency statistics for a dataset: how often the labeled winner beats
/// the loser on every reward dimension at once, and how often each pair of
/// dimensions agrees in sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub n_pairs: usize,
    pub unanimous_count: usize,
    pub consistency_rate: f64,
    /// `agreement[i][j]` = fraction of pairs where dimensions i and j give
    /// the same delta sign (ties count as their own sign).
    pub agreement: Vec<Vec<f64>>,
}

fn strictly_dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x > y)
}

/// Generates `n_pairs` pairs whose winners beat their losers on every reward
/// dimension, by rejection sampling per condition (round-robin).
pub fn gen_clean(task: &TaskDescriptor, n_pairs: usize, seed: u64) -> Result<PreferenceDataset> {
    task.validate()?;
    if n_pairs == 0 {
        return Err(Error::Precondition("need at least one pair".into()));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let c = ConditionId(i % task.n_conditions);
        let mut rng = component_rng(seed, "clean-pair", &[i as u64]);
        pairs.push(draw_dominant_pair(task, c, &mut rng).map_err(|e| {
            Error::Generation(format!("clean pair {i} (condition {}): {e}", c.0))
        })?);
    }
    Ok(PreferenceDataset {
        task: task.clone(),
        regime: Regime::Clean,
        generator_seed: seed,
        pairs,
    })
}

fn draw_dominant_pair(
    task: &TaskDescriptor,
    c: ConditionId,
    rng: &mut impl Rng,
) -> Result<PreferencePair> {
    for _ in 0..PAIR_REJECTION_BUDGET {
        let a = task.sample_point(c, rng)?;
        let b = task.sample_point(c, rng)?;
        let ra = task.rewards(&a.coords, c)?;
        let rb = task.rewards(&b.coords, c)?;
        let (w, l, rw, rl) = if strictly_dominates(&ra, &rb) {
            (a, b, ra, rb)
        } else if strictly_dominates(&rb, &ra) {
            (b, a, rb, ra)
        } else {
            continue;
        };
        return PreferencePair::new(
            c,
            w,
            l,
            RewardVector(rw),
            RewardVector(rl),
            LabelSource::Dominance,
            None,
        );
    }
    Err(Error::Generation(format!(
        "no dominant pair found in {PAIR_REJECTION_BUDGET} attempts"
    )))
}

/// Estimates how often a freshly drawn pair is unanimous across all reward
/// dimensions (in either direction) — the consistency rate that
/// single-dimension labeling achieves with no dominance mixing.
pub fn spontaneous_unanimity_rate(
    task: &TaskDescriptor,
    n_sim: usize,
    seed: u64,
) -> Result<f64> {
    task.validate()?;
    if n_sim == 0 {
        return Err(Error::Precondition("need at least one simulated pair".into()));
    }
    let mut rng = component_rng(seed, "calib", &[]);
    let mut unanimous = 0usize;
    for i in 0..n_sim {
        let c = ConditionId(i % task.n_conditions);
        let a = task.sample_point(c, &mut rng)?;
        let b = task.sample_point(c, &mut rng)?;
        let ra = task.rewards(&a.coords, c)?;
        let rb = task.rewards(&b.coords, c)?;
        if strictly_dominates(&ra, &rb) || strictly_dominates(&rb, &ra) {
            unanimous += 1;
        }
    }
    Ok(unanimous as f64 / n_sim as f64)
}

/// Generates pairs labeled by one randomly chosen reward dimension each,
/// mixing in dominance-labeled pairs at the rate needed for the realized
/// consistency rate to approach `target_consistency`.
///
/// The mixing weight is solved from a calibration simulation: if p₀ is the
/// spontaneous unanimity rate, a mixture weight m gives consistency
/// m + (1 − m)·p₀, so m = (target − p₀)/(1 − p₀). Targets below p₀ are
/// unreachable and produce a generation error.
pub fn gen_conflicting(
    task: &TaskDescriptor,
    n_pairs: usize,
    seed: u64,
    target_consistency: f64,
) -> Result<PreferenceDataset> {
    if !(target_consistency > 0.0 && target_consistency < 1.0) {
        return Err(Error::Precondition(format!(
            "target consistency must lie in (0, 1), got {target_consistency}"
        )));
    }
    let p0 = spontaneous_unanimity_rate(task, CALIBRATION_PAIRS, seed)?;
    if p0 >= 1.0 {
        return Err(Error::Generation(
            "task is degenerate: every simulated pair is unanimous".into(),
        ));
    }
    let mix = (target_consistency - p0) / (1.0 - p0);
    if mix < 0.0 {
        return Err(Error::Generation(format!(
            "target consistency {target_consistency} is unreachable: the task's \
             spontaneous unanimity rate is already {p0:.4}"
        )));
    }
    gen_conflicting_with_mix(task, n_pairs, seed, mix)
}

/// The conflicting-regime generator at an explicit dominance-mixing weight;
/// `gen_conflicting` calibrates the weight and delegates here. `mix = 0`
/// yields purely single-dimension-labeled pairs.
pub fn gen_conflicting_with_mix(
    task: &TaskDescriptor,
    n_pairs: usize,
    seed: u64,
    mix: f64,
) -> Result<PreferenceDataset> {
    task.validate()?;
    if n_pairs == 0 {
        return Err(Error::Precondition("need at least one pair".into()));
    }
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::Precondition(format!(
            "mixing weight must lie in [0, 1], got {mix}"
        )));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let c = ConditionId(i % task.n_conditions);
        let mut rng = component_rng(seed, "conflicting-pair", &[i as u64]);
        let forced = rng.random_bool(mix);
        let pair = if forced {
            draw_dominant_pair(task, c, &mut rng)
        } else {
            draw_single_dimension_pair(task, c, &mut rng)
        };
        pairs.push(pair.map_err(|e| {
            Error::Generation(format!("conflicting pair {i} (condition {}): {e}", c.0))
        })?);
    }
    Ok(PreferenceDataset {
        task: task.clone(),
        regime: Regime::Conflicting,
        generator_seed: seed,
        pairs,
    })
}

fn draw_single_dimension_pair(
    task: &TaskDescriptor,
    c: ConditionId,
    rng: &mut impl Rng,
) -> Result<PreferencePair> {
    for _ in 0..PAIR_REJECTION_BUDGET {
        let d = rng.random_range(0..REWARD_DIMS);
        let a = task.sample_point(c, rng)?;
        let b = task.sample_point(c, rng)?;
        let ra = task.rewards(&a.coords, c)?;
        let rb = task.rewards(&b.coords, c)?;
        let (w, l, rw, rl) = if ra[d] > rb[d] {
            (a, b, ra, rb)
        } else if rb[d] > ra[d] {
            (b, a, rb, ra)
        } else {
            // Exact tie on the labeling dimension: redraw.
            continue;
        };
        return PreferencePair::new(
            c,
            w,
            l,
            RewardVector(rw),
            RewardVector(rl),
            LabelSource::SingleDimension,
            Some(d),
        );
    }
    Err(Error::Generation(format!(
        "no tie-free pair found in {PAIR_REJECTION_BUDGET} attempts"
    )))
}

/// Draws a pool of winners straight from the task's data distribution,
/// round-robin over conditions. This is the canonical winner source for
/// [`gen_oversimple`]: the winners are genuine task samples, so only the
/// shuffled losers make the pairs trivially distinguishable.
pub fn draw_winners(task: &TaskDescriptor, n: usize, seed: u64) -> Result<Vec<SamplePoint>> {
    task.validate()?;
    if n == 0 {
        return Err(Error::Precondition("need at least one winner".into()));
    }
    let mut rng = component_rng(seed, "winners", &[]);
    (0..n)
        .map(|i| task.sample_point(ConditionId(i % task.n_conditions), &mut rng))
        .collect()
}

/// Builds the over-simple regime from a list of winners: within each batch
/// of `batch_size`, every winner is paired with another winner of the same
/// batch as its loser, via a rejection-sampled derangement (no winner is its
/// own loser). A trailing batch of one is dropped since it cannot be
/// deranged.
pub fn gen_oversimple(
    task: &TaskDescriptor,
    winners: &[SamplePoint],
    batch_size: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    task.validate()?;
    if batch_size < 2 {
        return Err(Error::Precondition(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    if winners.len() < batch_size {
        return Err(Error::Precondition(format!(
            "need at least batch_size = {batch_size} winners, got {}",
            winners.len()
        )));
    }
    for (i, w) in winners.iter().enumerate() {
        if w.coords.len() != task.dim {
            return Err(Error::Precondition(format!(
                "winner {i} has {} coords, task dimension is {}",
                w.coords.len(),
                task.dim
            )));
        }
        task.check_condition(w.condition)
            .map_err(|e| Error::Precondition(format!("winner {i}: {e}")))?;
    }
    let mut pairs = Vec::new();
    for (b, batch) in winners.chunks(batch_size).enumerate() {
        if batch.len() < 2 {
            // A final leftover of one winner cannot receive a distinct loser.
            continue;
        }
        let mut rng = component_rng(seed, "oversimple-batch", &[b as u64]);
        let perm = sample_derangement(batch.len(), &mut rng)?;
        for (i, &j) in perm.iter().enumerate() {
            let winner = batch[i].clone();
            let c = winner.condition;
            // The loser keeps the donor's coordinates but is judged under
            // this pair's condition.
            let loser = SamplePoint {
                coords: batch[j].coords.clone(),
                condition: c,
            };
            let rw = task.rewards(&winner.coords, c)?;
            let rl = task.rewards(&loser.coords, c)?;
            let pair = PreferencePair::new(
                c,
                winner,
                loser,
                RewardVector(rw),
                RewardVector(rl),
                LabelSource::Shuffle,
                None,
            )
            .map_err(|e| {
                Error::Generation(format!("batch {b}, winner {i}: {e}"))
            })?;
            pairs.push(pair);
        }
    }
    let ds = PreferenceDataset {
        task: task.clone(),
        regime: Regime::Oversimple,
        generator_seed: seed,
        pairs,
    };
    ds.validate()?;
    Ok(ds)
}

fn sample_derangement(n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    debug_assert!(n >= 2);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..PAIR_REJECTION_BUDGET {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
    // With n >= 2 a random permutation is a derangement with probability
    // >= 1/3, so exhausting the budget signals a broken RNG.
    Err(Error::Internal(format!(
        "no derangement of {n} elements found in {PAIR_REJECTION_BUDGET} shuffles"
    )))
}

/// Recomputes every reward delta from coordinates and reports how many pairs
/// are unanimous (winner strictly better on all dimensions) plus the K×K
/// sign-agreement matrix.
pub fn consistency_analysis(ds: &PreferenceDataset) -> Result<ConflictReport> {
    ds.validate()?;
    let n = ds.pairs.len();
    let mut unanimous = 0usize;
    let mut agree_counts = vec![vec![0usize; REWARD_DIMS]; REWARD_DIMS];
    for pair in &ds.pairs {
        let rw = ds.task.rewards(&pair.winner.coords, pair.condition)?;
        let rl = ds.task.rewards(&pair.loser.coords, pair.condition)?;
        let signs: Vec<i8> = rw
            .iter()
            .zip(&rl)
            .map(|(w, l)| {
                if w > l {
                    1
                } else if w < l {
                    -1
                } else {
                    0
                }
            })
            .collect();
        if signs.iter().all(|&s| s > 0) {
            unanimous += 1;
        }
        for i in 0..REWARD_DIMS {
            for j in 0..REWARD_DIMS {
                if signs[i] == signs[j] {
                    agree_counts[i][j] += 1;
                }
            }
        }
    }
    let agreement = agree_counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / n as f64).collect())
        .collect();
    Ok(ConflictReport {
        n_pairs: n,
        unanimous_count: unanimous,
        consistency_rate: unanimous as f64 / n as f64,
        agreement,
    })
}

/// Returns the winner index (0 or 1) chosen by more than half of an odd
/// panel of at least three judges.
pub fn majority_vote(judge_choices: &[usize]) -> Result<usize> {
    if judge_choices.len() < 3 || judge_choices.len() % 2 == 0 {
        return Err(Error::Precondition(format!(
            "majority vote needs an odd panel of at least 3 judges, got {}",
            judge_choices.len()
        )));
    }
    let mut ones = 0usize;
    for (i, &c) in judge_choices.iter().enumerate() {
        match c {
            0 => {}
            1 => ones += 1,
            other => {
                return Err(Error::Precondition(format!(
                    "judge {i} voted {other}; votes must be 0 or 1"
                )))
            }
        }
    }
    Ok(if 2 * ones > judge_choices.len() { 1 } else { 0 })
}
