//! The diffusion process around the denoiser: forward corruption, the
//! weighted noise-prediction loss with gradients, and ancestral sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng::component_rng;
use crate::schedule::{NoiseSchedule, WeightMode, T_CLAMP_MAX, T_CLAMP_MIN};
use crate::task::{ConditionId, SamplePoint};

/// x_t = α_t·x + σ_t·ε.
///
/// `t` must lie in [0, 1]; the schedule clamps it into its evaluation range
/// internally (so t = 0 yields "almost no corruption" up to the clamp floor).
pub fn forward_corrupt(
    schedule: &NoiseSchedule,
    x: &[f64],
    t: f64,
    eps: &[f64],
) -> Result<Vec<f64>> {
    if !(t.is_finite() && (0.0..=1.0).contains(&t)) {
        return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    if x.len() != eps.len() {
        return Err(Error::Precondition(format!(
            "point has {} coords but noise has {}",
            x.len(),
            eps.len()
        )));
    }
    let a = schedule.alpha(t);
    let s = schedule.sigma(t);
    Ok(x.iter().zip(eps).map(|(xi, ei)| a * xi + s * ei).collect())
}

/// Mean weighted noise-prediction loss over a batch, with parameter gradients.
///
/// For each sample, draws t ~ U(0, 1) and ε ~ N(0, I) from a stream seeded by
/// `rng_seed`, corrupts the point, and accumulates
/// w_t·‖ε_θ(x_t; c, t) − ε‖² / batch_size together with its gradient with
/// respect to every model parameter.
pub fn dm_loss(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    weight_mode: WeightMode,
    batch: &[SamplePoint],
    rng_seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Precondition("dm_loss needs a non-empty batch".into()));
    }
    let mut rng = component_rng(rng_seed, "dm-loss", &[]);
    let mut loss = 0.0;
    let mut grads = vec![0.0; model.n_params()];
    let inv_n = 1.0 / batch.len() as f64;
    let dim = model.config().dim;
    for point in batch {
        if point.coords.len() != dim {
            return Err(Error::Precondition(format!(
                "sample has {} coords, model dim is {dim}",
                point.coords.len()
            )));
        }
        let t: f64 = rng.random();
        let eps: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let x_t = forward_corrupt(schedule, &point.coords, t, &eps)?;
        let (pred, cache) = model.forward_cached(&x_t, point.condition, t)?;
        let w = schedule.loss_weight(t, weight_mode);
        let mut sq = 0.0;
        let mut dl_dpred = vec![0.0; dim];
        for i in 0..dim {
            let r = pred[i] - eps[i];
            sq += r * r;
            dl_dpred[i] = 2.0 * w * r * inv_n;
        }
        loss += w * sq * inv_n;
        model.backward(&cache, &dl_dpred, &mut grads);
    }
    Ok((loss, grads))
}

/// The sampler's time discretization: `n_steps + 1` times from the noise end
/// of the schedule down to the data end, spaced uniformly in log-SNR.
///
/// Uniform-λ spacing is what makes few-step sampling viable: each reverse
/// step amplifies the model's prediction error by roughly e^{Δλ/2}, so equal
/// λ increments bound the per-step amplification at e^{Δλ_total/(2n)}. A grid
/// uniform in t instead spends almost its entire λ budget on the first step,
/// where α_t is tiny and the x̂₀ estimate divides by it.
pub fn sampler_time_grid(schedule: &NoiseSchedule, n_steps: usize) -> Vec<f64> {
    let lam_start = schedule.lambda(T_CLAMP_MAX);
    let lam_end = schedule.lambda(T_CLAMP_MIN);
    (0..=n_steps)
        .map(|i| {
            if i == 0 {
                T_CLAMP_MAX
            } else if i == n_steps {
                T_CLAMP_MIN
            } else {
                let frac = i as f64 / n_steps as f64;
                schedule.t_for_lambda(lam_start + frac * (lam_end - lam_start))
            }
        })
        .collect()
}

/// Ancestral sampling: runs the discretized reverse process from pure noise
/// down the schedule's time range and returns the final denoised point.
///
/// The time grid comes from [`sampler_time_grid`]. Each step forms the
/// noise-prediction estimate x̂₀ = (x_t − σ_t·ε̂)/α_t and either moves to the
/// variance-preserving posterior of the next grid time (with fresh seeded
/// noise) or, on the last step, returns x̂₀ directly.
pub fn sample(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    c: ConditionId,
    n_steps: usize,
    rng_seed: u64,
) -> Result<SamplePoint> {
    if n_steps == 0 {
        return Err(Error::Precondition("sampler needs n_steps >= 1".into()));
    }
    let dim = model.config().dim;
    let mut rng = component_rng(rng_seed, "sample", &[c.0 as u64]);
    let mut x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    let grid = sampler_time_grid(schedule, n_steps);

    for i in 0..n_steps {
        let t = grid[i];
        let a_t = schedule.alpha(t);
        let s_t = schedule.sigma(t);
        let pred = model.forward(&x, c, t)?;
        let x0_hat: Vec<f64> = x
            .iter()
            .zip(&pred)
            .map(|(xi, ei)| (xi - s_t * ei) / a_t)
            .collect();
        if i + 1 == n_steps {
            x = x0_hat;
        } else {
            let s = grid[i + 1];
            let a_s = schedule.alpha(s);
            let s_s = schedule.sigma(s);
            // Variance-preserving posterior of x_s given (x_t, x̂₀).
            let a_ts = a_t / a_s;
            let var_ts = (s_t * s_t - a_ts * a_ts * s_s * s_s).max(0.0);
            let coef_xt = a_ts * s_s * s_s / (s_t * s_t);
            let coef_x0 = a_s * var_ts / (s_t * s_t);
            let noise_std = (var_ts * s_s * s_s / (s_t * s_t)).sqrt();
            for i in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                x[i] = coef_xt * x[i] + coef_x0 * x0_hat[i] + noise_std * z;
            }
        }
    }

    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "sampler produced a non-finite point (degenerate model)".into(),
        ));
    }
    Ok(SamplePoint {
        coords: x,
        condition: c,
    })
}

/// The seeded standard-normal vector the sampler starts from; exposed so
/// closed-form sampler tests can reconstruct the initial noise.
pub fn sampler_initial_noise(dim: usize, c: ConditionId, rng_seed: u64) -> Vec<f64> {
    let mut rng: ChaCha8Rng = component_rng(rng_seed, "sample", &[c.0 as u64]);
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}
