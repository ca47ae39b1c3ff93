//! The diffusion autoencoder.
//!
//! An encoder built from a frozen feature backbone plus a trainable
//! transformer compressor maps one image to `K` compact tokens of width `D`
//! (the latent state). A DiT-style decoder, cross-attending those tokens in
//! every block, is trained with the flow-matching objective: predict the
//! velocity `u = ε − z₀` along the linear noise path
//! `z_t = (1 − σ_t)·z₀ + σ_t·ε` with `σ_t = t`. Images are reconstructed by
//! integrating the learned velocity field from `t = 1` (pure noise) to
//! `t = 0` with an Euler scheme, conditioned on the tokens throughout.

mod flow;
mod model;
mod sampler;
mod train;

pub use flow::{dae_loss, dae_loss_with_grads, make_flow_sample, sample_noise_draws, NoiseDraw};
pub use model::{Dae, ExternalBackbone, LatentCodec, VelocityField};
pub use sampler::{integrate, reconstruct, reconstruct_grid, seeded_noise};
pub use train::{mean_image, split_trajectories, train_dae, LogRow, TrainOptions, TrainOutcome};

use crate::error::{Error, Result};
use crate::gripperworld::Observation;
use crate::tensor::Real;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// The compact state: `K` tokens of width `D`. Stored in f64 so downstream
/// latent algebra is exact regardless of the compute precision.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub tokens: Array2<f64>,
}

impl LatentState {
    pub fn new(tokens: Array2<f64>) -> Self {
        LatentState { tokens }
    }

    pub fn token_count(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.tokens.iter().all(|v| v.is_finite())
    }

    /// Flattened row-major view, e.g. as probe input.
    pub fn flatten(&self) -> Vec<f64> {
        self.tokens.iter().cloned().collect()
    }

    pub fn check_shape(&self, k: usize, d: usize) -> Result<()> {
        if self.token_count() != k || self.token_dim() != d {
            return Err(Error::Shape(format!(
                "latent state is {}x{}, expected {k}x{d}",
                self.token_count(),
                self.token_dim()
            )));
        }
        Ok(())
    }
}

/// The decoder's working representation: a `C × h × w` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid<T: Real> {
    pub data: Array3<T>,
}

impl<T: Real> LatentGrid<T> {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

/// One point on the noise-to-data interpolation path.
#[derive(Debug, Clone)]
pub struct FlowSample<T: Real> {
    pub z0: LatentGrid<T>,
    pub eps: LatentGrid<T>,
    pub t: T,
    pub sigma_t: T,
    pub z_t: LatentGrid<T>,
    /// Target velocity `eps − z0`.
    pub u: LatentGrid<T>,
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Fixed-seed frozen patch embedder + small transformer.
    TinyPatch,
    /// Caller-registered adapter.
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub patch_size: usize,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Seed for the frozen weights; independent of training seeds.
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::TinyPatch,
            patch_size: 8,
            width: 192,
            blocks: 4,
            heads: 4,
            seed: 1001,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CompressorConfig {
    pub blocks: usize,
    pub heads: usize,
    /// Number of learned query tokens (`K`).
    pub token_count: usize,
    /// Width of each token (`D`).
    pub token_dim: usize,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        CompressorConfig { blocks: 4, heads: 4, token_count: 2, token_dim: 256 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Decoder cross-attends the state tokens in every block.
    CrossAttention,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub blocks: usize,
    pub heads: usize,
    pub width: usize,
    pub patch_size: usize,
    pub mlp_ratio: usize,
    pub conditioning: ConditioningMode,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            blocks: 6,
            heads: 4,
            width: 256,
            patch_size: 8,
            mlp_ratio: 4,
            conditioning: ConditioningMode::CrossAttention,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum PixelToLatentMode {
    /// Reshape the image to a `3 × H × W` grid scaled to [−1, 1].
    Identity,
    /// Delegate to a registered latent codec.
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DaeConfig {
    pub resolution: usize,
    pub backbone: BackboneConfig,
    pub compressor: CompressorConfig,
    pub decoder: DecoderConfig,
    pub pixel_to_latent: PixelToLatentMode,
    /// Seed for trainable-weight init.
    pub init_seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig {
            resolution: 64,
            backbone: BackboneConfig::default(),
            compressor: CompressorConfig::default(),
            decoder: DecoderConfig::default(),
            pixel_to_latent: PixelToLatentMode::Identity,
            init_seed: 33,
        }
    }
}

impl DaeConfig {
    pub fn patch_count(&self) -> usize {
        let p = self.backbone.patch_size;
        assert!(self.resolution % p == 0, "patch size must divide resolution");
        (self.resolution / p) * (self.resolution / p)
    }

    pub fn decoder_tokens(&self) -> usize {
        let p = self.decoder.patch_size;
        assert!(self.resolution % p == 0, "decoder patch must divide resolution");
        (self.resolution / p) * (self.resolution / p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution % self.backbone.patch_size != 0
            || self.resolution % self.decoder.patch_size != 0
        {
            return Err(Error::Config(
                "patch sizes must divide the resolution".into(),
            ));
        }
        if self.compressor.token_count == 0 || self.compressor.token_dim == 0 {
            return Err(Error::Config("compressor needs at least one token".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Pixel <-> latent grid (identity mode) and patchify helpers
// ---------------------------------------------------------------------------

/// Identity-mode pixel-to-latent: channels-first grid scaled to [−1, 1].
pub fn observation_to_grid<T: Real>(obs: &Observation) -> LatentGrid<T> {
    let (h, w) = (obs.height(), obs.width());
    let mut data = Array3::zeros((3, h, w));
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                data[[c, y, x]] = T::from_f64(obs.get(y, x, c) as f64 * 2.0 - 1.0);
            }
        }
    }
    LatentGrid { data }
}

/// Inverse of [`observation_to_grid`], clipped to [0, 1].
pub fn grid_to_observation<T: Real>(grid: &LatentGrid<T>) -> Observation {
    let (c, h, w) = grid.shape();
    assert_eq!(c, 3, "identity grid must have 3 channels");
    let mut obs = Observation::zeros(h, w);
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = (grid.data[[ch, y, x]].to_f64_() + 1.0) / 2.0;
                obs.set(y, x, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    obs
}

/// `[C × H × W]` grid → `[N × (p·p·C)]` patch matrix, patches row-major,
/// features ordered `[c][dy][dx]`.
pub fn patchify<T: Real>(grid: &LatentGrid<T>, p: usize) -> Array2<T> {
    let (c, h, w) = grid.shape();
    assert!(h % p == 0 && w % p == 0);
    let (gh, gw) = (h / p, w / p);
    let mut out = Array2::zeros((gh * gw, p * p * c));
    for py in 0..gh {
        for px in 0..gw {
            let row = py * gw + px;
            for ch in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        out[[row, ch * p * p + dy * p + dx]] =
                            grid.data[[ch, py * p + dy, px * p + dx]];
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`patchify`].
pub fn unpatchify<T: Real>(patches: &Array2<T>, p: usize, c: usize, h: usize, w: usize) -> LatentGrid<T> {
    assert_eq!(patches.ncols(), p * p * c);
    let (gh, gw) = (h / p, w / p);
    assert_eq!(patches.nrows(), gh * gw);
    let mut data = Array3::zeros((c, h, w));
    for py in 0..gh {
        for px in 0..gw {
            let row = py * gw + px;
            for ch in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        data[[ch, py * p + dy, px * p + dx]] =
                            patches[[row, ch * p * p + dy * p + dx]];
                    }
                }
            }
        }
    }
    LatentGrid { data }
}
