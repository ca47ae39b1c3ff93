//! A toy autoregressive visuomotor policy with two latent-state hooks:
//! an auxiliary future-state head trained with MSE + L1 next to the usual
//! action cross-entropy, and pseudo-action co-training where action-free
//! video pairs are labeled with latent motions through a frozen encoder and
//! routed to a dedicated motion head.
//!
//! The trunk is a small transformer over image patch tokens, instruction
//! word embeddings, learned action-slot queries (one per chunk step and
//! action dimension), and one auxiliary query feeding the future/motion
//! heads. Actions are uniformly discretized per dimension.

use crate::dae::{Dae, LatentState};
use crate::error::{Error, Result};
use crate::gripperworld::{
    render, step, Action, Dataset, Observation, TaskKind, TaskSpec, MAX_DELTA_XY,
};
use crate::latentops::motion;
use crate::nn::{Block, Linear, ParamStore};
use crate::tensor::{Gradients, ParamId, Real, Tape, TensorRef};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const ACTION_DIMS: usize = 3;

/// Fixed instruction vocabulary; anything else maps to the OOV row 0.
const VOCAB: [&str; 20] = [
    "<oov>", "move", "the", "gripper", "to", "ring", "marker", "pick", "up", "put", "on",
    "stack", "disk", "red", "green", "blue", "yellow", "purple", "orange", "in",
];

pub fn tokenize_instruction(instruction: &str) -> Vec<usize> {
    instruction
        .split_whitespace()
        .take(8)
        .map(|w| VOCAB.iter().position(|v| *v == w).unwrap_or(0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    None,
    State,
    Motion,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub resolution: usize,
    pub patch_size: usize,
    pub trunk_width: usize,
    pub trunk_blocks: usize,
    pub trunk_heads: usize,
    /// Discretization bins per action dimension.
    pub action_bins: usize,
    pub target_kind: TargetKind,
    pub lambda_action: f64,
    pub lambda_future: f64,
    /// Action-chunk length: slots predict this many consecutive actions.
    pub horizon: usize,
    /// Shape of latent-state targets `(K, D)`.
    pub state_token_count: usize,
    pub state_token_dim: usize,
    /// Hidden width of the future/motion heads.
    pub head_hidden: usize,
    pub init_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            resolution: 64,
            patch_size: 16,
            trunk_width: 128,
            trunk_blocks: 3,
            trunk_heads: 4,
            action_bins: 64,
            target_kind: TargetKind::None,
            lambda_action: 1.0,
            lambda_future: 1.0,
            horizon: 1,
            state_token_count: 2,
            state_token_dim: 256,
            head_hidden: 128,
            init_seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn n_patches(&self) -> usize {
        (self.resolution / self.patch_size) * (self.resolution / self.patch_size)
    }

    pub fn n_slots(&self) -> usize {
        self.horizon * ACTION_DIMS
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_action <= 0.0 {
            return Err(Error::Config("lambda_action must be positive".into()));
        }
        if self.lambda_future < 0.0 {
            return Err(Error::Config("lambda_future must be non-negative".into()));
        }
        if self.resolution % self.patch_size != 0 {
            return Err(Error::Config("patch size must divide resolution".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Discretization
// ---------------------------------------------------------------------------

const DIM_BOUNDS: [(f64, f64); ACTION_DIMS] =
    [(-MAX_DELTA_XY, MAX_DELTA_XY), (-MAX_DELTA_XY, MAX_DELTA_XY), (-1.0, 1.0)];

/// Uniform per-dimension binning; out-of-range values clamp to edge bins.
pub fn discretize_action(a: &Action, bins: usize) -> [usize; ACTION_DIMS] {
    let vals = a.as_array();
    let mut out = [0; ACTION_DIMS];
    for (i, (lo, hi)) in DIM_BOUNDS.iter().enumerate() {
        let w = (hi - lo) / bins as f64;
        let idx = ((vals[i] - lo) / w).floor() as i64;
        out[i] = idx.clamp(0, bins as i64 - 1) as usize;
    }
    out
}

/// Bin centers.
pub fn undiscretize_action(tokens: &[usize; ACTION_DIMS], bins: usize) -> Action {
    let mut vals = [0.0; ACTION_DIMS];
    for (i, (lo, hi)) in DIM_BOUNDS.iter().enumerate() {
        let w = (hi - lo) / bins as f64;
        vals[i] = lo + (tokens[i].min(bins - 1) as f64 + 0.5) * w;
    }
    Action { dx: vals[0], dy: vals[1], d_aperture: vals[2] }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Heads {
    action: Linear,
    future_fc1: Linear,
    future_fc2: Linear,
    motion_fc1: Linear,
    motion_fc2: Linear,
}

pub struct Policy<T: Real> {
    pub config: PolicyConfig,
    pub store: ParamStore<T>,
    patch_embed: Linear,
    pos: ParamId,
    vocab: ParamId,
    slot_queries: ParamId,
    aux_query: ParamId,
    blocks: Vec<Block>,
    heads: Heads,
}

pub struct PolicyOutput<T: Real> {
    /// `[horizon·3 × bins]` logits.
    pub action_logits: Array2<T>,
    /// `[K × D]` prediction from the future head (when enabled).
    pub predicted_future: Option<Array2<T>>,
}

impl<T: Real> Policy<T> {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed.wrapping_add(0x706f6c));
        let mut store = ParamStore::new();
        let w = config.trunk_width;
        let raw_patch = config.patch_size * config.patch_size * 3;
        let patch_embed = Linear::new(&mut store, "policy.patch_embed", raw_patch, w, &mut rng, true);
        let pos = store.add(
            "policy.pos",
            crate::nn::init_normal(&mut rng, config.n_patches(), w, 0.02),
            true,
        );
        let vocab = store.add(
            "policy.vocab",
            crate::nn::init_normal(&mut rng, VOCAB.len(), w, 0.02),
            true,
        );
        let slot_queries = store.add(
            "policy.slots",
            crate::nn::init_normal(&mut rng, config.n_slots(), w, 0.02),
            true,
        );
        let aux_query = store.add(
            "policy.aux_query",
            crate::nn::init_normal(&mut rng, 1, w, 0.02),
            true,
        );
        let blocks = (0..config.trunk_blocks)
            .map(|i| {
                Block::new(
                    &mut store,
                    &format!("policy.block{i}"),
                    w,
                    config.trunk_heads,
                    4,
                    false,
                    &mut rng,
                    true,
                )
            })
            .collect();
        let kd = config.state_token_count * config.state_token_dim;
        let heads = Heads {
            action: Linear::new(&mut store, "policy.action_head", w, config.action_bins, &mut rng, true),
            future_fc1: Linear::new(&mut store, "policy.future_fc1", w, config.head_hidden, &mut rng, true),
            future_fc2: Linear::new_zeros(&mut store, "policy.future_fc2", config.head_hidden, kd, true),
            motion_fc1: Linear::new(&mut store, "policy.motion_fc1", w, config.head_hidden, &mut rng, true),
            motion_fc2: Linear::new_zeros(&mut store, "policy.motion_fc2", config.head_hidden, kd, true),
        };
        Ok(Policy { config, store, patch_embed, pos, vocab, slot_queries, aux_query, blocks, heads })
    }

    /// Parameters private to the future head.
    pub fn future_head_params(&self) -> Vec<ParamId> {
        let mut out = vec![self.heads.future_fc1.w, self.heads.future_fc2.w];
        out.extend(self.heads.future_fc1.b);
        out.extend(self.heads.future_fc2.b);
        out
    }

    fn trunk(&self, tape: &mut Tape<T>, obs: &Observation, instruction: &str) -> (TensorRef, usize) {
        let grid = crate::dae::observation_to_grid::<T>(obs);
        let patches = crate::dae::patchify(&grid, self.config.patch_size);
        let p = tape.constant(patches);
        let emb = self.patch_embed.forward(&self.store, tape, p);
        let pos = self.store.leaf(tape, self.pos);
        let img_tokens = tape.add(emb, pos);

        let vocab = self.store.leaf(tape, self.vocab);
        let ids = tokenize_instruction(instruction);
        let instr_tokens = tape.gather_rows(vocab, ids);

        let slots = self.store.leaf(tape, self.slot_queries);
        let aux = self.store.leaf(tape, self.aux_query);
        let seq = tape.concat_rows(&[img_tokens, instr_tokens, slots, aux]);

        let mut h = seq;
        for block in &self.blocks {
            h = block.forward(&self.store, tape, h, None);
        }
        let n_rows = tape.value(h).nrows();
        (h, n_rows)
    }

    /// Tape-level forward returning slot activations for the heads.
    fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        obs: &Observation,
        instruction: &str,
    ) -> (TensorRef, TensorRef) {
        let (h, n_rows) = self.trunk(tape, obs, instruction);
        let n_slots = self.config.n_slots();
        let slot_rows = tape.slice_rows(h, n_rows - n_slots - 1, n_rows - 1);
        let aux_row = tape.slice_rows(h, n_rows - 1, n_rows);
        (slot_rows, aux_row)
    }

    fn future_from_aux(&self, tape: &mut Tape<T>, aux_row: TensorRef) -> TensorRef {
        let h = self.heads.future_fc1.forward(&self.store, tape, aux_row);
        let a = tape.gelu(h);
        let flat = self.heads.future_fc2.forward(&self.store, tape, a);
        tape.reshape(flat, self.config.state_token_count, self.config.state_token_dim)
    }

    fn motion_from_aux(&self, tape: &mut Tape<T>, aux_row: TensorRef) -> TensorRef {
        let h = self.heads.motion_fc1.forward(&self.store, tape, aux_row);
        let a = tape.gelu(h);
        let flat = self.heads.motion_fc2.forward(&self.store, tape, a);
        tape.reshape(flat, self.config.state_token_count, self.config.state_token_dim)
    }

    /// Evaluation-mode forward.
    pub fn forward(&self, obs: &Observation, instruction: &str) -> Result<PolicyOutput<T>> {
        if obs.height() != self.config.resolution || obs.width() != self.config.resolution {
            return Err(Error::Shape(format!(
                "observation {}x{} vs policy resolution {}",
                obs.height(),
                obs.width(),
                self.config.resolution
            )));
        }
        let mut tape = Tape::new();
        let (slot_rows, aux_row) = self.forward_on_tape(&mut tape, obs, instruction);
        let logits = self.heads.action.forward(&self.store, &mut tape, slot_rows);
        let predicted_future = match self.config.target_kind {
            TargetKind::None => None,
            _ => {
                let f = self.future_from_aux(&mut tape, aux_row);
                Some(tape.value(f).clone())
            }
        };
        Ok(PolicyOutput { action_logits: tape.value(logits).clone(), predicted_future })
    }

    /// Greedy action chunk.
    pub fn act(&self, obs: &Observation, instruction: &str) -> Result<Vec<Action>> {
        let out = self.forward(obs, instruction)?;
        let bins = self.config.action_bins;
        let mut actions = Vec::with_capacity(self.config.horizon);
        for step_i in 0..self.config.horizon {
            let mut tok = [0usize; ACTION_DIMS];
            for d in 0..ACTION_DIMS {
                let row = out.action_logits.row(step_i * ACTION_DIMS + d);
                let mut best = 0;
                for b in 1..bins {
                    if row[b] > row[best] {
                        best = b;
                    }
                }
                tok[d] = best;
            }
            actions.push(undiscretize_action(&tok, bins));
        }
        Ok(actions)
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Eq.-style composite breakdown. `l_total` always equals
/// `lambda_action·l_action + lambda_future·(l_mse + l_l1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossBreakdown {
    pub l_action: f64,
    pub l_mse: f64,
    pub l_l1: f64,
    pub l_total: f64,
}

/// Breakdown for mixed robot + video batches.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CotrainLossBreakdown {
    pub robot: LossBreakdown,
    /// Motion-head regression over video samples.
    pub l_motion: f64,
    pub l_total: f64,
}

/// One training sample; video samples carry latent-motion targets instead of
/// action tokens.
#[derive(Debug, Clone)]
pub enum PolicySample {
    Robot {
        obs: Observation,
        instruction: String,
        /// `horizon·3` discretized targets.
        action_tokens: Vec<usize>,
        /// `K × D` target for the future head (by `target_kind`).
        future_target: Option<Array2<f64>>,
    },
    Video {
        obs: Observation,
        instruction: String,
        /// `K × D` latent motion pseudo-label.
        motion_target: Array2<f64>,
    },
}

impl PolicySample {
    pub fn is_robot(&self) -> bool {
        matches!(self, PolicySample::Robot { .. })
    }
}

fn sample_loss<T: Real>(
    policy: &Policy<T>,
    sample: &PolicySample,
    want_grads: bool,
) -> Result<(LossParts, Option<Gradients<T>>)> {
    let cfg = &policy.config;
    let mut tape = Tape::new();
    match sample {
        PolicySample::Robot { obs, instruction, action_tokens, future_target } => {
            if action_tokens.len() != cfg.n_slots() {
                return Err(Error::Domain(format!(
                    "{} action tokens for a horizon-{} policy",
                    action_tokens.len(),
                    cfg.horizon
                )));
            }
            let (slot_rows, aux_row) = policy.forward_on_tape(&mut tape, obs, instruction);
            let logits = policy.heads.action.forward(&policy.store, &mut tape, slot_rows);
            let ce = tape.cross_entropy_rows(logits, action_tokens.clone());
            let mut parts = LossParts {
                l_action: tape.scalar_value(ce).to_f64_(),
                ..LossParts::default()
            };
            let la = T::from_f64(cfg.lambda_action);
            let mut total = tape.scale(ce, la);
            if cfg.target_kind != TargetKind::None {
                let target = future_target.as_ref().ok_or_else(|| {
                    Error::Domain("future target missing for this target_kind".into())
                })?;
                if target.dim() != (cfg.state_token_count, cfg.state_token_dim) {
                    return Err(Error::Shape(format!(
                        "future target {:?}, config wants {}x{}",
                        target.dim(),
                        cfg.state_token_count,
                        cfg.state_token_dim
                    )));
                }
                let pred = policy.future_from_aux(&mut tape, aux_row);
                let tgt = target.mapv(T::from_f64);
                let mse = tape.mse_to(pred, tgt.clone());
                let l1 = tape.l1_to(pred, tgt);
                parts.l_mse = tape.scalar_value(mse).to_f64_();
                parts.l_l1 = tape.scalar_value(l1).to_f64_();
                if cfg.lambda_future > 0.0 {
                    let lf = T::from_f64(cfg.lambda_future);
                    let both = tape.add(mse, l1);
                    let scaled = tape.scale(both, lf);
                    total = tape.add(total, scaled);
                }
            }
            parts.robot = 1;
            let grads = want_grads.then(|| tape.backward(total));
            Ok((parts, grads))
        }
        PolicySample::Video { obs, instruction, motion_target } => {
            if motion_target.dim() != (cfg.state_token_count, cfg.state_token_dim) {
                return Err(Error::Shape("motion target shape mismatch".into()));
            }
            let (_, aux_row) = policy.forward_on_tape(&mut tape, obs, instruction);
            let pred = policy.motion_from_aux(&mut tape, aux_row);
            let mse = tape.mse_to(pred, motion_target.mapv(T::from_f64));
            let parts = LossParts {
                l_motion: tape.scalar_value(mse).to_f64_(),
                video: 1,
                ..LossParts::default()
            };
            let grads = want_grads.then(|| tape.backward(mse));
            Ok((parts, grads))
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LossParts {
    l_action: f64,
    l_mse: f64,
    l_l1: f64,
    l_motion: f64,
    robot: usize,
    video: usize,
}

/// Composite loss over a batch; gradients optional.
pub fn policy_loss<T: Real>(
    policy: &Policy<T>,
    batch: &[PolicySample],
    want_grads: bool,
) -> Result<(CotrainLossBreakdown, Option<Gradients<T>>)> {
    if batch.is_empty() {
        return Err(Error::Domain("policy loss needs a non-empty batch".into()));
    }
    let results: Vec<Result<(LossParts, Option<Gradients<T>>)>> = batch
        .par_iter()
        .map(|s| sample_loss(policy, s, want_grads))
        .collect();

    let mut parts = LossParts::default();
    let mut merged = want_grads.then(Gradients::empty);
    let scale = T::from_f64(1.0 / batch.len() as f64);
    for r in results {
        let (p, g) = r?;
        parts.l_action += p.l_action;
        parts.l_mse += p.l_mse;
        parts.l_l1 += p.l_l1;
        parts.l_motion += p.l_motion;
        parts.robot += p.robot;
        parts.video += p.video;
        if let (Some(acc), Some(mut g)) = (merged.as_mut(), g) {
            g.scale(scale);
            acc.merge(g);
        }
    }
    let robot_n = parts.robot.max(1) as f64;
    let video_n = parts.video.max(1) as f64;
    let cfg = &policy.config;
    let l_action = parts.l_action / robot_n;
    let l_mse = parts.l_mse / robot_n;
    let l_l1 = parts.l_l1 / robot_n;
    let l_motion = parts.l_motion / video_n;
    let robot = LossBreakdown {
        l_action,
        l_mse,
        l_l1,
        l_total: cfg.lambda_action * l_action + cfg.lambda_future * (l_mse + l_l1),
    };
    let breakdown = CotrainLossBreakdown {
        robot,
        l_motion,
        l_total: robot.l_total + if parts.video > 0 { l_motion } else { 0.0 },
    };
    Ok((breakdown, merged))
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

/// Precompute latent states for every frame of the listed trajectories.
fn encode_frames<T: Real>(
    dae: &Dae<T>,
    dataset: &Dataset,
    trajs: &[usize],
) -> Result<HashMap<(usize, usize), LatentState>> {
    let wanted: Vec<(usize, usize)> = trajs
        .iter()
        .flat_map(|&ti| (0..dataset.trajectories[ti].len()).map(move |s| (ti, s)))
        .collect();
    wanted
        .par_iter()
        .map(|&(ti, s)| {
            let frame = dataset.trajectories[ti].load_frame(s)?;
            Ok(((ti, s), dae.encode(&frame)?))
        })
        .collect()
}

/// Behavior-cloning samples from robot trajectories, with future-state
/// targets when the config asks for them.
pub fn build_robot_samples<T: Real>(
    dataset: &Dataset,
    trajs: &[usize],
    config: &PolicyConfig,
    dae: Option<&Dae<T>>,
) -> Result<Vec<PolicySample>> {
    let encodings = match (config.target_kind, dae) {
        (TargetKind::None, _) => None,
        (_, Some(dae)) => Some(encode_frames(dae, dataset, trajs)?),
        (_, None) => {
            return Err(Error::Config(
                "future-state targets need an encoder".into(),
            ))
        }
    };
    let h = config.horizon;
    let mut samples = Vec::new();
    for &ti in trajs {
        let t = &dataset.trajectories[ti];
        if t.len() <= h {
            continue;
        }
        for s in 0..t.len() - h {
            let mut tokens = Vec::with_capacity(config.n_slots());
            for j in 0..h {
                tokens.extend(discretize_action(&t.actions[s + j], config.action_bins));
            }
            let future_target = encodings.as_ref().map(|enc| {
                let s_next = &enc[&(ti, s + h)];
                match config.target_kind {
                    TargetKind::State => s_next.tokens.clone(),
                    TargetKind::Motion => &s_next.tokens - &enc[&(ti, s)].tokens,
                    TargetKind::None => unreachable!(),
                }
            });
            samples.push(PolicySample::Robot {
                obs: t.load_frame(s)?,
                instruction: t.instruction.clone(),
                action_tokens: tokens,
                future_target,
            });
        }
    }
    Ok(samples)
}

/// Latent motions for consecutive frames of an action-free trajectory.
pub fn pseudo_label<T: Real>(
    dae: &Dae<T>,
    frames: &[Observation],
) -> Result<Vec<crate::latentops::LatentMotion>> {
    if frames.len() < 2 {
        return Err(Error::Domain("pseudo labels need at least two frames".into()));
    }
    let states: Vec<LatentState> = frames
        .par_iter()
        .map(|f| dae.encode(f))
        .collect::<Result<Vec<_>>>()?;
    (0..states.len() - 1)
        .map(|i| motion(&states[i], &states[i + 1]))
        .collect()
}

/// Unified co-training set: robot samples keep their action labels, video
/// trajectories contribute frame pairs labeled with latent motion. Actions
/// stored with video trajectories are ignored by construction.
pub fn build_cotrain_dataset<T: Real>(
    dataset: &Dataset,
    robot_trajs: &[usize],
    video_trajs: &[usize],
    config: &PolicyConfig,
    dae: &Dae<T>,
) -> Result<Vec<PolicySample>> {
    if robot_trajs.is_empty() {
        return Err(Error::Domain(
            "co-training requires at least some action-labeled robot data".into(),
        ));
    }
    let mut samples = build_robot_samples(dataset, robot_trajs, config, Some(dae))?;
    let video_enc = encode_frames(dae, dataset, video_trajs)?;
    for &ti in video_trajs {
        let t = &dataset.trajectories[ti];
        for s in 0..t.len() - 1 {
            let delta = &video_enc[&(ti, s + 1)].tokens - &video_enc[&(ti, s)].tokens;
            samples.push(PolicySample::Video {
                obs: t.load_frame(s)?,
                instruction: t.instruction.clone(),
                motion_target: delta,
            });
        }
    }
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolicyTrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PolicyTrainOptions {
    fn default() -> Self {
        PolicyTrainOptions {
            steps: 900,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyTrainLogRow {
    pub step: u64,
    pub breakdown: CotrainLossBreakdown,
}

/// Standard supervised training; deterministic under a fixed seed.
pub fn train_policy<T: Real>(
    policy: &mut Policy<T>,
    samples: &[PolicySample],
    opts: &PolicyTrainOptions,
) -> Result<Vec<PolicyTrainLogRow>> {
    if samples.is_empty() {
        return Err(Error::Domain("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0x747261696e));
    let mut opt = crate::nn::AdamW::new(opts.learning_rate, opts.weight_decay);
    let schedule = crate::nn::CosineSchedule {
        base_lr: opts.learning_rate,
        min_lr: opts.learning_rate * 0.1,
        warmup_steps: 0,
        total_steps: opts.steps,
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(opts.steps as usize);
    let batch_size = opts.batch_size.min(samples.len());

    for step in 0..opts.steps {
        if cursor + batch_size > order.len() {
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            cursor = 0;
        }
        let batch: Vec<PolicySample> = order[cursor..cursor + batch_size]
            .iter()
            .map(|&i| samples[i].clone())
            .collect();
        cursor += batch_size;

        let (breakdown, grads) = policy_loss(policy, &batch, true)?;
        if !breakdown.l_total.is_finite() {
            return Err(Error::Training(format!("non-finite policy loss at step {step}")));
        }
        opt.step(&mut policy.store, &grads.expect("requested"), schedule.lr_at(step));
        log.push(PolicyTrainLogRow { step, breakdown });
    }
    Ok(log)
}

/// Anything that can drive the environment closed-loop.
pub trait Actor {
    fn begin_episode(&mut self, spec: &TaskSpec);
    fn act(&mut self, step_idx: usize, obs: &Observation, instruction: &str) -> Result<Action>;
}

/// Greedy policy actor with action chunking.
pub struct PolicyActor<'a, T: Real> {
    pub policy: &'a Policy<T>,
    queue: Vec<Action>,
}

impl<'a, T: Real> PolicyActor<'a, T> {
    pub fn new(policy: &'a Policy<T>) -> Self {
        PolicyActor { policy, queue: Vec::new() }
    }
}

impl<T: Real> Actor for PolicyActor<'_, T> {
    fn begin_episode(&mut self, _spec: &TaskSpec) {
        self.queue.clear();
    }

    fn act(&mut self, _step: usize, obs: &Observation, instruction: &str) -> Result<Action> {
        if self.queue.is_empty() {
            self.queue = self.policy.act(obs, instruction)?;
            self.queue.reverse();
        }
        Ok(self.queue.pop().expect("chunk is never empty"))
    }
}

/// Replays the demonstration script for the evaluated layout; the success
/// upper bound.
pub struct ScriptedExpert {
    actions: Vec<Action>,
    resolution: usize,
}

impl ScriptedExpert {
    pub fn new(resolution: usize) -> Self {
        ScriptedExpert { actions: Vec::new(), resolution }
    }
}

impl Actor for ScriptedExpert {
    fn begin_episode(&mut self, spec: &TaskSpec) {
        let traj = crate::gripperworld::script_trajectory(spec.kind, spec.seed, self.resolution)
            .expect("expert can always script a feasible layout");
        self.actions = traj.actions;
        self.actions.reverse();
    }

    fn act(&mut self, _step: usize, _obs: &Observation, _instr: &str) -> Result<Action> {
        Ok(self.actions.pop().unwrap_or(Action::ZERO))
    }
}

/// Uniform random actions within bounds.
pub struct RandomActor {
    rng: ChaCha8Rng,
}

impl RandomActor {
    pub fn new(seed: u64) -> Self {
        RandomActor { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Actor for RandomActor {
    fn begin_episode(&mut self, _spec: &TaskSpec) {}

    fn act(&mut self, _step: usize, _obs: &Observation, _instr: &str) -> Result<Action> {
        Ok(Action {
            dx: self.rng.random_range(-MAX_DELTA_XY..MAX_DELTA_XY),
            dy: self.rng.random_range(-MAX_DELTA_XY..MAX_DELTA_XY),
            d_aperture: self.rng.random_range(-1.0..1.0),
        })
    }
}

pub const EVAL_MAX_STEPS: usize = 72;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskEval {
    pub task: String,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Success rate of each evaluation repeat (seeds `seed..seed+repeats`).
    pub per_repeat: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub seed: u64,
    pub tasks: Vec<TaskEval>,
    pub mean_success: f64,
}

/// Closed-loop evaluation: `trials` episodes per task, repeated for
/// `repeats` evaluation seeds and averaged.
pub fn evaluate_policy<A: Actor>(
    actor: &mut A,
    tasks: &[TaskKind],
    trials: usize,
    seed: u64,
    resolution: usize,
    repeats: u64,
) -> Result<EvalReport> {
    let mut out = Vec::new();
    for &kind in tasks {
        let mut per_repeat = Vec::new();
        let mut successes = 0usize;
        let mut total = 0usize;
        for rep in 0..repeats.max(1) {
            let mut rep_succ = 0usize;
            for trial in 0..trials {
                let layout_seed = seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add(rep * 10_000 + trial as u64 + 1_000_000);
                let spec = TaskSpec::sample(kind, layout_seed)?;
                actor.begin_episode(&spec);
                let mut state = spec.initial.clone();
                let mut success = kind.success(&spec, &state);
                for step_idx in 0..EVAL_MAX_STEPS {
                    if success {
                        break;
                    }
                    let obs = render(&state, resolution)?;
                    let action = actor.act(step_idx, &obs, &spec.instruction)?;
                    state = step(&state, &action);
                    success = success || kind.success(&spec, &state);
                }
                if success {
                    rep_succ += 1;
                    successes += 1;
                }
                total += 1;
            }
            per_repeat.push(rep_succ as f64 / trials as f64);
        }
        out.push(TaskEval {
            task: kind.name().to_string(),
            trials: total,
            successes,
            success_rate: successes as f64 / total as f64,
            per_repeat,
        });
    }
    let mean = out.iter().map(|t| t.success_rate).sum::<f64>() / out.len() as f64;
    Ok(EvalReport { seed, tasks: out, mean_success: mean })
}

pub fn write_eval_report_json(path: &std::path::Path, report: &EvalReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_eval_report_csv(path: &std::path::Path, report: &EvalReport) -> Result<()> {
    let mut out = String::from("task,trials,successes,success_rate\n");
    for t in &report.tasks {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            t.task, t.trials, t.successes, t.success_rate
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
