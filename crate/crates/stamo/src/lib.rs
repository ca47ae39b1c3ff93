//! Compact visual state tokens with emergent latent motion.
//!
//! This crate learns to compress a single image observation into a small set
//! of state tokens (two by default) with a flow-matching diffusion
//! autoencoder, and exploits the fact that the *difference* of two such
//! states behaves like a motion: it can be probed for ground-truth actions,
//! interpolated, transferred across scenes, used as an auxiliary world-model
//! target for a policy, and used to pseudo-label action-free video for
//! co-training.
//!
//! Everything runs on a deterministic synthetic 2-D manipulation environment
//! ([`gripperworld`]) so every learned claim can be checked against ground
//! truth on a CPU.
//!
//! Module map:
//!
//! - [`tensor`], [`nn`] — a small reverse-mode autodiff engine and the layers
//!   built on it (generic over f32/f64).
//! - [`gripperworld`] — the environment: dynamics, renderer, scripted
//!   demonstrations, on-disk datasets.
//! - [`dae`] — the diffusion autoencoder: frozen feature backbone, token
//!   compressor, DiT-style velocity decoder, flow-matching loss, Euler
//!   sampler, training loop.
//! - [`latentops`] — algebra on latent states: motion, composition,
//!   interpolation, cross-scene transfer.
//! - [`probing`] — the linear-probing protocol: tuple sampling,
//!   representation baselines, probe training/evaluation, first-action
//!   replay.
//! - [`worldpolicy`] — a toy visuomotor policy with an auxiliary
//!   future-state head and pseudo-action co-training.
//! - [`metrics`] — PSNR / SSIM and summary statistics.
//! - [`checkpoint`] — the language-neutral tensor-blob checkpoint format.
//! - [`cli`] — the `stamo` command-line interface and run-directory
//!   persistence.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability.

pub mod checkpoint;
pub mod cli;
pub mod dae;
pub mod error;
pub mod gripperworld;
pub mod imageio;
pub mod latentops;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod probing;
pub mod tensor;
pub mod worldpolicy;

pub use error::{Error, Result};
