//! The toy data domain: condition-indexed Gaussian mixtures in D dimensions
//! (default D = 2) plus the analytic reward dimensions used to score samples.
//!
//! Each condition ("prompt") c indexes a mixture mode centered on a circle in
//! the first two coordinates. Five closed-form reward dimensions stand in for
//! a panel of heterogeneous reward models; they are deliberately mutually
//! conflicting (a point cannot maximize all five at once), which is what makes
//! the preference-data regimes interesting:
//!
//! | dim | name        | formula                                  |
//! |-----|-------------|------------------------------------------|
//! | 0   | alignment   | −‖x − μ_c‖²                              |
//! | 1   | aesthetic   | log N(x; m, s²I) (global fixed Gaussian) |
//! | 2   | compactness | −‖x‖²                                    |
//! | 3   | axis        | x[0]                                     |
//! | 4   | ring        | −(‖x − μ_c‖ − r)²                        |
//!
//! The formulas are part of the crate's public contract: tests re-derive them
//! independently and datasets are re-scored from raw coordinates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::component_rng;

/// Number of reward dimensions. Fixed by the five closed forms above.
pub const REWARD_DIMS: usize = 5;

/// Reward-dimension names, in index order, used by table headers.
pub const REWARD_NAMES: [&str; REWARD_DIMS] =
    ["alignment", "aesthetic", "compactness", "axis", "ring"];

/// Sample count for the one-off standardization pass in [`TaskDescriptor::reward_standardizer`].
const STANDARDIZER_SAMPLES: usize = 20_000;
/// Fixed internal seed for the standardization pass: the constants are a
/// property of the task alone, shared by every run that evaluates against it.
const STANDARDIZER_SEED: u64 = 0x5EED_57A7;

/// Index of a discrete condition ("prompt"): a mixture component plus its
/// attribute bundle. Valid only below the task's `n_conditions`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionId(pub usize);

/// A point in sample space together with the condition it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub coords: Vec<f64>,
    pub condition: ConditionId,
}

/// The full description of a toy task: the mixture the data comes from and
/// the parameters of the reward formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskDescriptor {
    /// Sample-space dimensionality D.
    pub dim: usize,
    /// Number of conditions / mixture modes.
    pub n_conditions: usize,
    /// Modes are centered on a circle of this radius in the first two coords.
    pub mode_radius: f64,
    /// Isotropic standard deviation of each mixture mode.
    pub mode_std: f64,
    /// Mean of the global fixed Gaussian behind the "aesthetic" reward.
    pub aesthetic_mean: Vec<f64>,
    /// Standard deviation of that Gaussian.
    pub aesthetic_std: f64,
    /// Target radius of the "ring" reward around each mode center.
    pub ring_radius: f64,
}

impl Default for TaskDescriptor {
    fn default() -> Self {
        TaskDescriptor {
            dim: 2,
            n_conditions: 2,
            mode_radius: 2.0,
            mode_std: 0.5,
            aesthetic_mean: vec![0.5, 0.5],
            aesthetic_std: 2.0,
            ring_radius: 1.0,
        }
    }
}

impl TaskDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!(
                "task dim must be >= 2 (mode centers span two coords), got {}",
                self.dim
            )));
        }
        if self.n_conditions == 0 {
            return Err(Error::Config("task needs at least one condition".into()));
        }
        if self.aesthetic_mean.len() != self.dim {
            return Err(Error::Config(format!(
                "aesthetic_mean has {} entries, task dim is {}",
                self.aesthetic_mean.len(),
                self.dim
            )));
        }
        for (name, v) in [
            ("mode_radius", self.mode_radius),
            ("mode_std", self.mode_std),
            ("aesthetic_std", self.aesthetic_std),
            ("ring_radius", self.ring_radius),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("task field {name} must be finite")));
            }
        }
        if self.mode_std <= 0.0 || self.aesthetic_std <= 0.0 {
            return Err(Error::Config("task std fields must be positive".into()));
        }
        if self.aesthetic_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("aesthetic_mean must be finite".into()));
        }
        Ok(())
    }

    pub fn check_condition(&self, c: ConditionId) -> Result<()> {
        if c.0 < self.n_conditions {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "condition id {} out of range (task has {} conditions)",
                c.0, self.n_conditions
            )))
        }
    }

    /// Center μ_c of condition c's mixture mode.
    pub fn mode_center(&self, c: ConditionId) -> Result<Vec<f64>> {
        self.check_condition(c)?;
        let angle = 2.0 * std::f64::consts::PI * c.0 as f64 / self.n_conditions as f64;
        let mut center = vec![0.0; self.dim];
        center[0] = self.mode_radius * angle.cos();
        center[1] = self.mode_radius * angle.sin();
        Ok(center)
    }

    /// Draws one point from condition c's mode: x = μ_c + mode_std · z.
    pub fn sample_point(&self, c: ConditionId, rng: &mut impl Rng) -> Result<SamplePoint> {
        let mut coords = self.mode_center(c)?;
        for coord in coords.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *coord += self.mode_std * z;
        }
        Ok(SamplePoint {
            coords,
            condition: c,
        })
    }

    /// Evaluates reward dimension `dim` for point `x` under condition `c`.
    pub fn reward_eval(&self, x: &[f64], c: ConditionId, dim: usize) -> Result<f64> {
        self.check_condition(c)?;
        if x.len() != self.dim {
            return Err(Error::Precondition(format!(
                "point has {} coords, task dim is {}",
                x.len(),
                self.dim
            )));
        }
        match dim {
            // alignment: −‖x − μ_c‖²
            0 => Ok(-dist_sq(x, &self.mode_center(c)?)),
            // aesthetic: log-density of the global fixed Gaussian
            1 => {
                let s2 = self.aesthetic_std * self.aesthetic_std;
                let norm = self.dim as f64 / 2.0 * (2.0 * std::f64::consts::PI * s2).ln();
                Ok(-dist_sq(x, &self.aesthetic_mean) / (2.0 * s2) - norm)
            }
            // compactness: −‖x‖²
            2 => Ok(-x.iter().map(|v| v * v).sum::<f64>()),
            // axis: first coordinate
            3 => Ok(x[0]),
            // ring: −(‖x − μ_c‖ − r)²
            4 => {
                let d = dist_sq(x, &self.mode_center(c)?).sqrt();
                let off = d - self.ring_radius;
                Ok(-off * off)
            }
            _ => Err(Error::Precondition(format!(
                "reward dimension {dim} out of range (K = {REWARD_DIMS})"
            ))),
        }
    }

    /// All [`REWARD_DIMS`] rewards for `x` under `c`, in dimension order.
    pub fn rewards(&self, x: &[f64], c: ConditionId) -> Result<Vec<f64>> {
        (0..REWARD_DIMS).map(|d| self.reward_eval(x, c, d)).collect()
    }

    /// Per-dimension (mean, std) of the rewards under the task's own data
    /// distribution, estimated once from a large fixed-seed sample. These are
    /// the standardization constants behind composite evaluation scores; they
    /// depend only on the task, never on a particular run.
    pub fn reward_standardizer(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        let mut rng = component_rng(STANDARDIZER_SEED, "reward-standardizer", &[]);
        let mut sums = vec![0.0; REWARD_DIMS];
        let mut sq_sums = vec![0.0; REWARD_DIMS];
        for i in 0..STANDARDIZER_SAMPLES {
            let c = ConditionId(i % self.n_conditions);
            let point = self.sample_point(c, &mut rng)?;
            let rewards = self.rewards(&point.coords, c)?;
            for (d, r) in rewards.iter().enumerate() {
                sums[d] += r;
                sq_sums[d] += r * r;
            }
        }
        let n = STANDARDIZER_SAMPLES as f64;
        let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
        let stds: Vec<f64> = sq_sums
            .iter()
            .zip(&means)
            .map(|(sq, m)| {
                let var = (sq / n - m * m).max(0.0);
                // Guard against a degenerate (constant) dimension; none of the
                // current formulas are constant, but a std of 0 must not poison
                // the composite with a division by zero.
                let std = var.sqrt();
                if std > 1e-12 {
                    std
                } else {
                    1.0
                }
            })
            .collect();
        Ok((means, stds))
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
