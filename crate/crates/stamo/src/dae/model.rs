//! Encoder (frozen backbone + compressor) and DiT velocity decoder.

use super::{
    grid_to_observation, observation_to_grid, patchify, BackboneKind, DaeConfig, LatentGrid,
    LatentState, PixelToLatentMode,
};
use crate::error::{Error, Result};
use crate::gripperworld::Observation;
use crate::nn::{sinusoidal_embedding, Block, LayerNorm, Linear, ParamStore};
use crate::tensor::{Real, Tape, TensorRef};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Adapter for plugging a different frozen feature extractor.
pub trait ExternalBackbone: Send + Sync {
    fn feature_count(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn features(&self, obs: &Observation) -> Result<Array2<f64>>;
}

/// Adapter for plugging a learned pixel codec in place of the identity map.
pub trait LatentCodec: Send + Sync {
    /// `(channels, height, width)` of the produced grid.
    fn grid_shape(&self) -> (usize, usize, usize);
    fn to_latent(&self, obs: &Observation) -> Result<Vec<f64>>;
    fn to_pixels(&self, grid: &[f64]) -> Result<Observation>;
}

/// Anything that can evaluate a conditional velocity field on a tape. The
/// trained decoder implements this; tests substitute closed-form fields.
pub trait VelocityField<T: Real> {
    /// `z_patches` is the current grid patchified with the decoder patch
    /// size; returns the predicted velocity in the same layout.
    fn velocity(
        &self,
        tape: &mut Tape<T>,
        z_patches: TensorRef,
        cond_tokens: TensorRef,
        t: T,
    ) -> TensorRef;
}

struct BackboneLayers {
    embed: Linear,
    pos: crate::tensor::ParamId,
    blocks: Vec<Block>,
    ln: LayerNorm,
}

struct CompressorLayers {
    queries: crate::tensor::ParamId,
    feat_proj: Linear,
    blocks: Vec<Block>,
    ln: LayerNorm,
}

struct DecoderLayers {
    in_proj: Linear,
    pos: crate::tensor::ParamId,
    cond_proj: Linear,
    cond_ln: LayerNorm,
    t_fc1: Linear,
    t_fc2: Linear,
    blocks: Vec<Block>,
    out_ln: LayerNorm,
    out_proj: Linear,
}

/// The full diffusion autoencoder. One [`ParamStore`] holds every weight;
/// backbone weights are frozen, compressor and decoder weights train.
pub struct Dae<T: Real> {
    pub config: DaeConfig,
    pub store: ParamStore<T>,
    backbone: BackboneLayers,
    compressor: CompressorLayers,
    decoder: DecoderLayers,
    external_backbone: Option<Arc<dyn ExternalBackbone>>,
    external_codec: Option<Arc<dyn LatentCodec>>,
}

impl<T: Real> Dae<T> {
    pub fn new(config: DaeConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();

        // Frozen backbone, seeded independently of everything trainable.
        let bb = &config.backbone;
        let raw_patch = bb.patch_size * bb.patch_size * 3;
        let patches = config.patch_count();
        let mut brng = ChaCha8Rng::seed_from_u64(bb.seed);
        let backbone = BackboneLayers {
            embed: Linear::new(&mut store, "backbone.embed", raw_patch, bb.width, &mut brng, false),
            pos: store.add(
                "backbone.pos",
                crate::nn::init_normal(&mut brng, patches, bb.width, 0.02),
                false,
            ),
            blocks: (0..bb.blocks)
                .map(|i| {
                    Block::new(
                        &mut store,
                        &format!("backbone.block{i}"),
                        bb.width,
                        bb.heads,
                        4,
                        false,
                        &mut brng,
                        false,
                    )
                })
                .collect(),
            ln: LayerNorm::new(&mut store, "backbone.ln", bb.width, false),
        };

        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let comp = &config.compressor;
        let (k, d) = (comp.token_count, comp.token_dim);
        let compressor = CompressorLayers {
            queries: store.add(
                "compressor.queries",
                crate::nn::init_normal(&mut rng, k, d, 0.02),
                true,
            ),
            feat_proj: Linear::new(&mut store, "compressor.feat_proj", bb.width, d, &mut rng, true),
            blocks: (0..comp.blocks)
                .map(|i| {
                    Block::new(
                        &mut store,
                        &format!("compressor.block{i}"),
                        d,
                        comp.heads,
                        4,
                        true,
                        &mut rng,
                        true,
                    )
                })
                .collect(),
            ln: LayerNorm::new(&mut store, "compressor.ln", d, true),
        };

        let dec = &config.decoder;
        let dec_patch = dec.patch_size * dec.patch_size * 3;
        let dec_tokens = config.decoder_tokens();
        let decoder = DecoderLayers {
            in_proj: Linear::new(&mut store, "decoder.in_proj", dec_patch, dec.width, &mut rng, true),
            pos: store.add(
                "decoder.pos",
                crate::nn::init_normal(&mut rng, dec_tokens, dec.width, 0.02),
                true,
            ),
            cond_proj: Linear::new(&mut store, "decoder.cond_proj", d, dec.width, &mut rng, true),
            cond_ln: LayerNorm::new(&mut store, "decoder.cond_ln", dec.width, true),
            t_fc1: Linear::new(&mut store, "decoder.t_fc1", dec.width, dec.width, &mut rng, true),
            t_fc2: Linear::new(&mut store, "decoder.t_fc2", dec.width, dec.width, &mut rng, true),
            blocks: (0..dec.blocks)
                .map(|i| {
                    Block::new(
                        &mut store,
                        &format!("decoder.block{i}"),
                        dec.width,
                        dec.heads,
                        dec.mlp_ratio,
                        true,
                        &mut rng,
                        true,
                    )
                })
                .collect(),
            out_ln: LayerNorm::new(&mut store, "decoder.out_ln", dec.width, true),
            // zero-init so an untrained model predicts zero velocity
            out_proj: Linear::new_zeros(&mut store, "decoder.out_proj", dec.width, dec_patch, true),
        };

        Ok(Dae {
            config,
            store,
            backbone,
            compressor,
            decoder,
            external_backbone: None,
            external_codec: None,
        })
    }

    pub fn with_external_backbone(mut self, adapter: Arc<dyn ExternalBackbone>) -> Self {
        self.external_backbone = Some(adapter);
        self
    }

    pub fn with_external_codec(mut self, codec: Arc<dyn LatentCodec>) -> Self {
        self.external_codec = Some(codec);
        self
    }

    /// Hash of the frozen backbone weights; must never change.
    pub fn backbone_hash(&self) -> u64 {
        self.store.content_hash(|p| !p.trainable)
    }

    fn check_resolution(&self, obs: &Observation) -> Result<()> {
        if obs.height() != self.config.resolution || obs.width() != self.config.resolution {
            return Err(Error::Shape(format!(
                "observation is {}x{}, model expects {}x{}",
                obs.height(),
                obs.width(),
                self.config.resolution,
                self.config.resolution
            )));
        }
        Ok(())
    }

    // -- encoder ------------------------------------------------------------

    /// Frozen patch features `[P × F]`. Deterministic; never trained.
    pub fn extract_features(&self, obs: &Observation) -> Result<Array2<T>> {
        self.check_resolution(obs)?;
        match self.config.backbone.kind {
            BackboneKind::TinyPatch => {
                let grid = observation_to_grid::<T>(obs);
                let patches = patchify(&grid, self.config.backbone.patch_size);
                let mut tape = Tape::new();
                let x = tape.constant(patches);
                let out = self.backbone_forward(&mut tape, x);
                Ok(tape.value(out).clone())
            }
            BackboneKind::External => {
                let adapter = self.external_backbone.as_ref().ok_or_else(|| {
                    Error::Config("external backbone selected but none registered".into())
                })?;
                let feats = adapter.features(obs)?;
                Ok(feats.mapv(T::from_f64))
            }
        }
    }

    fn backbone_forward(&self, tape: &mut Tape<T>, patches: TensorRef) -> TensorRef {
        let emb = self.backbone.embed.forward(&self.store, tape, patches);
        let pos = self.store.leaf(tape, self.backbone.pos);
        let mut h = tape.add(emb, pos);
        for block in &self.backbone.blocks {
            h = block.forward(&self.store, tape, h, None);
        }
        self.backbone.ln.forward(&self.store, tape, h)
    }

    /// Compressor forward on an existing tape; gradients flow into the
    /// compressor parameters but not the features (the backbone is frozen).
    pub fn compress_on_tape(&self, tape: &mut Tape<T>, features: TensorRef) -> TensorRef {
        let feats = self.compressor.feat_proj.forward(&self.store, tape, features);
        let mut h = self.store.leaf(tape, self.compressor.queries);
        for block in &self.compressor.blocks {
            h = block.forward(&self.store, tape, h, Some(feats));
        }
        self.compressor.ln.forward(&self.store, tape, h)
    }

    /// `K × D` latent state from patch features.
    pub fn compress(&self, features: &Array2<T>) -> Result<LatentState> {
        let expect_f = match self.config.backbone.kind {
            BackboneKind::TinyPatch => self.config.backbone.width,
            BackboneKind::External => self
                .external_backbone
                .as_ref()
                .map(|b| b.feature_dim())
                .unwrap_or(self.config.backbone.width),
        };
        if features.ncols() != expect_f {
            return Err(Error::Shape(format!(
                "features are {}x{}, expected width {expect_f}",
                features.nrows(),
                features.ncols()
            )));
        }
        let mut tape = Tape::new();
        let f = tape.constant(features.clone());
        let out = self.compress_on_tape(&mut tape, f);
        Ok(LatentState::new(tape.value(out).mapv(|v| v.to_f64_())))
    }

    /// Image → latent state (deterministic in evaluation).
    pub fn encode(&self, obs: &Observation) -> Result<LatentState> {
        let features = self.extract_features(obs)?;
        self.compress(&features)
    }

    // -- pixel <-> latent ----------------------------------------------------

    pub fn pixel_to_latent(&self, obs: &Observation) -> Result<LatentGrid<T>> {
        self.check_resolution(obs)?;
        match self.config.pixel_to_latent {
            PixelToLatentMode::Identity => Ok(observation_to_grid(obs)),
            PixelToLatentMode::External => {
                let codec = self.external_codec.as_ref().ok_or_else(|| {
                    Error::Config("external pixel_to_latent selected but no codec registered".into())
                })?;
                let (c, h, w) = codec.grid_shape();
                let flat = codec.to_latent(obs)?;
                if flat.len() != c * h * w {
                    return Err(Error::Shape("codec returned wrong grid size".into()));
                }
                let data = ndarray::Array3::from_shape_vec((c, h, w), flat)
                    .map_err(|e| Error::Shape(e.to_string()))?
                    .mapv(T::from_f64);
                Ok(LatentGrid { data })
            }
        }
    }

    pub fn latent_to_pixel(&self, grid: &LatentGrid<T>) -> Result<Observation> {
        match self.config.pixel_to_latent {
            PixelToLatentMode::Identity => Ok(grid_to_observation(grid)),
            PixelToLatentMode::External => {
                let codec = self.external_codec.as_ref().ok_or_else(|| {
                    Error::Config("external pixel_to_latent selected but no codec registered".into())
                })?;
                let flat: Vec<f64> = grid.data.iter().map(|v| v.to_f64_()).collect();
                codec.to_pixels(&flat)
            }
        }
    }

    /// Grid shape produced by [`Dae::pixel_to_latent`].
    pub fn grid_shape(&self) -> (usize, usize, usize) {
        match self.config.pixel_to_latent {
            PixelToLatentMode::Identity => (3, self.config.resolution, self.config.resolution),
            PixelToLatentMode::External => self
                .external_codec
                .as_ref()
                .map(|c| c.grid_shape())
                .unwrap_or((3, self.config.resolution, self.config.resolution)),
        }
    }

    // -- decoder --------------------------------------------------------------

    /// Conditioning sequence: projected state tokens plus a time token.
    fn cond_tokens(&self, tape: &mut Tape<T>, state_tokens: TensorRef, t: T) -> TensorRef {
        let proj = self.decoder.cond_proj.forward(&self.store, tape, state_tokens);
        let normed = self.decoder.cond_ln.forward(&self.store, tape, proj);
        let sin = tape.constant(sinusoidal_embedding(t.to_f64_(), self.config.decoder.width));
        let t1 = self.decoder.t_fc1.forward(&self.store, tape, sin);
        let tg = tape.gelu(t1);
        let t2 = self.decoder.t_fc2.forward(&self.store, tape, tg);
        tape.concat_rows(&[normed, t2])
    }

    /// Decoder forward on a tape: patchified `z_t` plus raw `K × D` state
    /// tokens (as a tape node, so encoder gradients pass through).
    pub fn velocity_on_tape(
        &self,
        tape: &mut Tape<T>,
        z_patches: TensorRef,
        state_tokens: TensorRef,
        t: T,
    ) -> TensorRef {
        let cond = self.cond_tokens(tape, state_tokens, t);
        let x = self.decoder.in_proj.forward(&self.store, tape, z_patches);
        let pos = self.store.leaf(tape, self.decoder.pos);
        let mut h = tape.add(x, pos);
        for block in &self.decoder.blocks {
            h = block.forward(&self.store, tape, h, Some(cond));
        }
        let n = self.decoder.out_ln.forward(&self.store, tape, h);
        self.decoder.out_proj.forward(&self.store, tape, n)
    }

    /// Velocity for a grid outside any training graph.
    pub fn velocity(&self, z: &LatentGrid<T>, state: &LatentState, t: f64) -> Result<LatentGrid<T>> {
        state.check_shape(self.config.compressor.token_count, self.config.compressor.token_dim)?;
        let p = self.config.decoder.patch_size;
        let (c, h, w) = z.shape();
        let mut tape = Tape::new();
        let zp = tape.constant(patchify(z, p));
        let tokens = tape.constant(state.tokens.mapv(T::from_f64));
        let out = self.velocity_on_tape(&mut tape, zp, tokens, T::from_f64(t));
        Ok(super::unpatchify(tape.value(out), p, c, h, w))
    }
}

impl<T: Real> VelocityField<T> for Dae<T> {
    fn velocity(
        &self,
        tape: &mut Tape<T>,
        z_patches: TensorRef,
        cond_tokens: TensorRef,
        t: T,
    ) -> TensorRef {
        self.velocity_on_tape(tape, z_patches, cond_tokens, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gripperworld::{render, SceneObject, SceneState};

    fn tiny_config() -> DaeConfig {
        DaeConfig {
            resolution: 32,
            backbone: super::super::BackboneConfig {
                width: 32,
                blocks: 1,
                heads: 2,
                patch_size: 8,
                ..Default::default()
            },
            compressor: super::super::CompressorConfig {
                blocks: 1,
                heads: 2,
                token_count: 2,
                token_dim: 16,
            },
            decoder: super::super::DecoderConfig {
                blocks: 1,
                heads: 2,
                width: 32,
                patch_size: 8,
                mlp_ratio: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn obs(seed: u64) -> Observation {
        let state = SceneState {
            gripper_xy: (0.3 + seed as f64 * 0.07, 0.5),
            aperture: 0.8,
            objects: vec![SceneObject { center: (0.7, 0.6), radius: 0.06, color_id: 1 }],
            held_index: None,
            goal_xy: (0.2, 0.8),
        };
        render(&state, 32).unwrap()
    }

    #[test]
    fn features_and_encode_are_deterministic() {
        let dae = Dae::<f32>::new(tiny_config()).unwrap();
        let x = obs(1);
        let f1 = dae.extract_features(&x).unwrap();
        let f2 = dae.extract_features(&x).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.nrows(), 16); // (32/8)^2
        assert_eq!(f1.ncols(), 32);
        let s1 = dae.encode(&x).unwrap();
        let s2 = dae.encode(&x).unwrap();
        assert_eq!(s1.tokens, s2.tokens);
        s1.check_shape(2, 16).unwrap();
    }

    #[test]
    fn distinct_images_get_distinct_states() {
        let dae = Dae::<f32>::new(tiny_config()).unwrap();
        let mut max_dist = 0.0f64;
        let mut states = Vec::new();
        for seed in 0..6 {
            states.push(dae.encode(&obs(seed)).unwrap());
        }
        for i in 0..states.len() {
            for j in (i + 1)..states.len() {
                let d: f64 = states[i]
                    .tokens
                    .iter()
                    .zip(states[j].tokens.iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                max_dist = max_dist.max(d);
            }
        }
        assert!(max_dist > 0.0, "untrained encoder collapsed all states");
    }

    #[test]
    fn wrong_resolution_is_a_shape_error() {
        let dae = Dae::<f32>::new(tiny_config()).unwrap();
        let state = SceneState {
            gripper_xy: (0.5, 0.5),
            aperture: 1.0,
            objects: vec![],
            held_index: None,
            goal_xy: (0.8, 0.8),
        };
        let big = render(&state, 64).unwrap();
        assert!(dae.extract_features(&big).is_err());
    }

    #[test]
    fn external_codec_missing_is_a_config_error() {
        let mut cfg = tiny_config();
        cfg.pixel_to_latent = PixelToLatentMode::External;
        let dae = Dae::<f32>::new(cfg).unwrap();
        assert!(matches!(dae.pixel_to_latent(&obs(0)), Err(Error::Config(_))));
    }

    #[test]
    fn zero_init_head_predicts_zero_velocity() {
        let dae = Dae::<f32>::new(tiny_config()).unwrap();
        let x = obs(2);
        let state = dae.encode(&x).unwrap();
        let grid = dae.pixel_to_latent(&x).unwrap();
        let v = dae.velocity(&grid, &state, 0.5).unwrap();
        for val in v.data.iter() {
            assert_eq!(*val, 0.0);
        }
    }
}
