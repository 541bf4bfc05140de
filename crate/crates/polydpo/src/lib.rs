//! A desk-scale laboratory for polynomially reweighted preference
//! optimization of diffusion models.
//!
//! The crate implements the full pipeline end to end, small enough to verify
//! by property tests and seeded experiments:
//!
//! * [`loss`] — the DPO / Poly-DPO / Poly-N loss family, gradients, and the
//!   Taylor-series oracle;
//! * [`schedule`] + [`denoiser`] + [`diffusion`] — a conditional toy diffusion
//!   backbone (variance-preserving schedules, a small MLP noise predictor
//!   with hand-derived gradients, the diffusion loss, and an ancestral
//!   sampler);
//! * [`task`] + [`dataset`] — condition-indexed Gaussian-mixture tasks with
//!   five analytic reward dimensions, synthetic preference datasets in three
//!   regimes (clean / conflicting / over-simple), and consistency analysis;
//! * [`trainer`] — winner-only SFT and preference training against a frozen
//!   reference model;
//! * [`eval`] — policy evaluation, the α-sweep harness, and
//!   gradient-magnitude curves;
//! * [`checkpoint`] — versioned binary model persistence.
//!
//! Everything is deterministic: a single root seed fans out to per-component
//! streams via [`rng::derive_seed`], and identical inputs give bitwise
//! identical artifacts.

pub mod checkpoint;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod io_util;
pub mod loss;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod task;
pub mod trainer;

pub use error::{Error, Result};
