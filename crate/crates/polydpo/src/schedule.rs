//! Variance-preserving noise schedules over continuous time t ∈ [0, 1].
//!
//! A schedule provides the corruption coefficients α_t (signal) and σ_t
//! (noise) with α_t² + σ_t² = 1, the log signal-to-noise ratio
//! λ_t = log(α_t²/σ_t²), its time derivative λ_t', and the loss weight used by
//! the diffusion and preference objectives.
//!
//! λ_t is singular at both endpoints, so every evaluator clamps t into
//! [`T_CLAMP_MIN`, `T_CLAMP_MAX`] first. Callers may pass any t in [0, 1];
//! values outside that range are a caller bug and are rejected where t enters
//! the public API (see `diffusion::forward_corrupt`).

use serde::{Deserialize, Serialize};

/// Evaluation floor for t: keeps λ_t finite at the clean-data end.
pub const T_CLAMP_MIN: f64 = 1e-3;
/// Evaluation ceiling for t: keeps λ_t finite at the pure-noise end.
pub const T_CLAMP_MAX: f64 = 1.0 - 1e-3;

/// Endpoint log-SNR values for the linear-logSNR schedule, chosen to roughly
/// match the cosine schedule's clamped range.
const LINEAR_LAMBDA_MAX: f64 = 10.0;
const LINEAR_LAMBDA_MIN: f64 = -10.0;

/// The supported schedule families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// α_t = cos(πt/2), σ_t = sin(πt/2).
    Cosine,
    /// λ_t linear in t between fixed endpoints, with α, σ recovered from the
    /// variance-preserving constraint.
    LinearLogSnr,
}

/// How the composite loss weight is chosen. The schedule-dependent factor
/// multiplying the squared noise-prediction error is folded into a single
/// weight: either the constant 1 (the default, absorbing schedule effects
/// into β) or −λ_t' (the schedule-derived alternative, positive because λ
/// decreases in t).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    Constant,
    ScheduleDerived,
}

/// A concrete variance-preserving schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind) -> Self {
        NoiseSchedule { kind }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// The clamped evaluation time actually used by every evaluator.
    pub fn clamp_t(&self, t: f64) -> f64 {
        t.clamp(T_CLAMP_MIN, T_CLAMP_MAX)
    }

    /// Signal coefficient α_t.
    pub fn alpha(&self, t: f64) -> f64 {
        let t = self.clamp_t(t);
        match self.kind {
            ScheduleKind::Cosine => (std::f64::consts::FRAC_PI_2 * t).cos(),
            ScheduleKind::LinearLogSnr => sigmoid(linear_lambda(t)).sqrt(),
        }
    }

    /// Noise coefficient σ_t.
    pub fn sigma(&self, t: f64) -> f64 {
        let t = self.clamp_t(t);
        match self.kind {
            ScheduleKind::Cosine => (std::f64::consts::FRAC_PI_2 * t).sin(),
            ScheduleKind::LinearLogSnr => sigmoid(-linear_lambda(t)).sqrt(),
        }
    }

    /// Log signal-to-noise ratio λ_t = log(α_t²/σ_t²).
    pub fn lambda(&self, t: f64) -> f64 {
        let t = self.clamp_t(t);
        match self.kind {
            ScheduleKind::Cosine => {
                let angle = std::f64::consts::FRAC_PI_2 * t;
                2.0 * (angle.cos().ln() - angle.sin().ln())
            }
            ScheduleKind::LinearLogSnr => linear_lambda(t),
        }
    }

    /// dλ/dt, negative everywhere (the SNR decays as noise is added).
    pub fn lambda_prime(&self, t: f64) -> f64 {
        let t = self.clamp_t(t);
        match self.kind {
            // d/dt [2 ln cot(πt/2)] = −2π / sin(πt).
            ScheduleKind::Cosine => -2.0 * std::f64::consts::PI / (std::f64::consts::PI * t).sin(),
            ScheduleKind::LinearLogSnr => LINEAR_LAMBDA_MIN - LINEAR_LAMBDA_MAX,
        }
    }

    /// The composite loss weight for timestep t under the given mode.
    pub fn loss_weight(&self, t: f64, mode: WeightMode) -> f64 {
        match mode {
            WeightMode::Constant => 1.0,
            WeightMode::ScheduleDerived => -self.lambda_prime(t),
        }
    }

    /// Inverse of [`NoiseSchedule::lambda`]: the clamped time at which the
    /// schedule attains log-SNR `lam`. Values outside the reachable range map
    /// to the corresponding clamp boundary. Used to lay out sampler grids
    /// uniformly in log-SNR.
    pub fn t_for_lambda(&self, lam: f64) -> f64 {
        let t = match self.kind {
            // λ = 2·ln(cot(πt/2))  ⇒  t = (2/π)·atan(e^{−λ/2}).
            ScheduleKind::Cosine => {
                std::f64::consts::FRAC_2_PI * (-lam / 2.0).exp().atan()
            }
            ScheduleKind::LinearLogSnr => {
                (LINEAR_LAMBDA_MAX - lam) / (LINEAR_LAMBDA_MAX - LINEAR_LAMBDA_MIN)
            }
        };
        self.clamp_t(t)
    }
}

fn linear_lambda(t: f64) -> f64 {
    LINEAR_LAMBDA_MAX + t * (LINEAR_LAMBDA_MIN - LINEAR_LAMBDA_MAX)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
