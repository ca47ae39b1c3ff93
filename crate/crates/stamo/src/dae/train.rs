//! Autoencoder training loop.
//!
//! Trains the compressor and decoder only (backbone and pixel mapping stay
//! frozen) with decoupled-weight-decay Adam and a cosine-decayed learning
//! rate. Batch order, timestep draws, and noise are all derived from the
//! training seed, so runs are exactly reproducible. A NaN loss aborts the
//! run and leaves the last periodic checkpoint in place.

use super::flow::{dae_loss_with_grads, sample_noise_draws};
use super::sampler::reconstruct;
use super::{Dae, LatentState};
use crate::error::{Error, Result};
use crate::gripperworld::{Dataset, Observation};
use crate::metrics;
use crate::nn::{AdamW, CosineSchedule};
use crate::tensor::Real;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub warmup_steps: u64,
    /// Final LR as a fraction of the base rate.
    pub min_lr_frac: f64,
    /// Fraction of trajectories held out for evaluation.
    pub heldout_frac: f64,
    /// Evaluate PSNR/SSIM on held-out frames every this many steps (0 = final only).
    pub eval_every: u64,
    pub eval_frames: usize,
    pub eval_sample_steps: usize,
    /// Write a checkpoint every this many steps (0 = final only).
    pub checkpoint_every: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 3000,
            batch_size: 16,
            learning_rate: 3e-4,
            weight_decay: 1e-3,
            seed: 33,
            warmup_steps: 0,
            min_lr_frac: 0.05,
            heldout_frac: 0.1,
            eval_every: 0,
            eval_frames: 8,
            eval_sample_steps: 25,
            checkpoint_every: 0,
        }
    }
}

impl TrainOptions {
    /// Published full-scale profile: batch 512, lr 3e-5, weight decay 1e-3,
    /// seed 33.
    pub fn paper_scale(mut self) -> Self {
        self.batch_size = 512;
        self.learning_rate = 3e-5;
        self.weight_decay = 1e-3;
        self.seed = 33;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub heldout_psnr: Option<f64>,
    pub heldout_ssim: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps_run: u64,
    pub losses: Vec<f64>,
    pub log: Vec<LogRow>,
    pub final_heldout_psnr: f64,
    pub final_heldout_ssim: f64,
    /// PSNR of the best constant predictor (the mean training image) on the
    /// same held-out frames; the reference floor for reconstruction quality.
    pub baseline_psnr: f64,
    pub heldout_indices: Vec<usize>,
}

/// Pixel-wise mean of a set of frames.
pub fn mean_image(frames: &[&Observation]) -> Observation {
    assert!(!frames.is_empty());
    let (h, w) = (frames[0].height(), frames[0].width());
    let mut acc = vec![0.0f64; h * w * 3];
    for f in frames {
        for (a, v) in acc.iter_mut().zip(f.pixels().iter()) {
            *a += *v as f64;
        }
    }
    let mut out = Observation::zeros(h, w);
    for (o, a) in out.pixels_mut().iter_mut().zip(acc.iter()) {
        *o = *a / frames.len() as f64;
    }
    out
}

/// Split trajectory indices into train/heldout deterministically.
pub fn split_trajectories(n: usize, heldout_frac: f64) -> (Vec<usize>, Vec<usize>) {
    let n_held = ((n as f64 * heldout_frac).ceil() as usize).clamp(1, n.saturating_sub(1).max(1));
    let held: Vec<usize> = (n - n_held..n).collect();
    let train: Vec<usize> = (0..n - n_held).collect();
    (train, held)
}

pub fn train_dae<T: Real>(
    dae: &mut Dae<T>,
    dataset: &Dataset,
    opts: &TrainOptions,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if dataset.trajectories.len() < 2 {
        return Err(Error::Dataset("training needs at least two trajectories".into()));
    }
    let (train_trajs, held_trajs) = split_trajectories(dataset.trajectories.len(), opts.heldout_frac);

    // Load frames into memory.
    let load_frames = |ids: &[usize]| -> Result<Vec<Observation>> {
        ids.par_iter()
            .map(|&ti| {
                let t = &dataset.trajectories[ti];
                (0..t.len()).map(|i| t.load_frame(i)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<Vec<_>>>>()
            .map(|v| v.into_iter().flatten().collect())
    };
    let train_frames = load_frames(&train_trajs)?;
    let held_frames = load_frames(&held_trajs)?;
    if train_frames.is_empty() || held_frames.is_empty() {
        return Err(Error::Dataset("empty train or heldout split".into()));
    }

    // The backbone is frozen, so its features can be computed once.
    let features: Vec<Array2<T>> = train_frames
        .par_iter()
        .map(|f| dae.extract_features(f))
        .collect::<Result<Vec<_>>>()?;

    let schedule = CosineSchedule {
        base_lr: opts.learning_rate,
        min_lr: opts.learning_rate * opts.min_lr_frac,
        warmup_steps: opts.warmup_steps,
        total_steps: opts.steps,
    };
    let mut optimizer = AdamW::new(opts.learning_rate, opts.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let grid_shape = dae.grid_shape();

    let mut order: Vec<usize> = (0..train_frames.len()).collect();
    let mut cursor = order.len(); // trigger shuffle on first use
    let mut losses = Vec::with_capacity(opts.steps as usize);
    let mut log: Vec<LogRow> = Vec::new();

    let eval = |dae: &Dae<T>, frames: &[Observation], sample_steps: usize, n: usize| -> Result<(f64, f64)> {
        let stride = (frames.len() / n.max(1)).max(1);
        let picks: Vec<&Observation> = frames.iter().step_by(stride).take(n).collect();
        let scores: Vec<(f64, f64)> = picks
            .par_iter()
            .enumerate()
            .map(|(i, f)| -> Result<(f64, f64)> {
                let state: LatentState = dae.encode(f)?;
                let recon = reconstruct(dae, &state, sample_steps, 9000 + i as u64)?;
                Ok((metrics::psnr(f, &recon)?, metrics::ssim(f, &recon)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = scores.len() as f64;
        Ok((
            scores.iter().map(|s| s.0).sum::<f64>() / n,
            scores.iter().map(|s| s.1).sum::<f64>() / n,
        ))
    };

    for step in 0..opts.steps {
        // seed-determined batch order, reshuffled each epoch
        if cursor + opts.batch_size > order.len() {
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            cursor = 0;
        }
        let batch_ids = &order[cursor..cursor + opts.batch_size];
        cursor += opts.batch_size;

        let batch: Vec<&Observation> = batch_ids.iter().map(|&i| &train_frames[i]).collect();
        let feats: Vec<Array2<T>> = batch_ids.iter().map(|&i| features[i].clone()).collect();
        let draws = sample_noise_draws::<T>(&mut rng, batch.len(), grid_shape, true);

        let (loss, grads) = dae_loss_with_grads(dae, &batch, Some(&feats), &draws)?;
        if !loss.is_finite() {
            if let Some(dir) = out_dir {
                write_log_csv(&dir.join("train_log.csv"), &log)?;
            }
            return Err(Error::Training(format!(
                "non-finite loss at step {step}; last-good checkpoint retained"
            )));
        }
        let lr = schedule.lr_at(step);
        optimizer.step(&mut dae.store, &grads, lr);
        losses.push(loss);

        let mut row = LogRow { step, loss, lr, heldout_psnr: None, heldout_ssim: None };
        if opts.eval_every > 0 && (step + 1) % opts.eval_every == 0 {
            let (p, s) = eval(dae, &held_frames, opts.eval_sample_steps, opts.eval_frames)?;
            row.heldout_psnr = Some(p);
            row.heldout_ssim = Some(s);
        }
        log.push(row);

        if opts.checkpoint_every > 0 && (step + 1) % opts.checkpoint_every == 0 {
            if let Some(dir) = out_dir {
                crate::checkpoint::save(dir, &dae.store, &dae.config)?;
                write_log_csv(&dir.join("train_log.csv"), &log)?;
            }
        }
    }

    // Final held-out evaluation at full sampler resolution.
    let (psnr, ssim) = eval(dae, &held_frames, 50, opts.eval_frames.max(8))?;
    if let Some(last) = log.last_mut() {
        last.heldout_psnr = Some(psnr);
        last.heldout_ssim = Some(ssim);
    }

    // Mean-training-image baseline on the same held frames.
    let trains: Vec<&Observation> = train_frames.iter().collect();
    let mean_img = mean_image(&trains);
    let stride = (held_frames.len() / opts.eval_frames.max(8)).max(1);
    let baseline_scores: Vec<f64> = held_frames
        .iter()
        .step_by(stride)
        .take(opts.eval_frames.max(8))
        .map(|f| metrics::psnr(f, &mean_img))
        .collect::<Result<Vec<_>>>()?;
    let baseline_psnr = baseline_scores.iter().sum::<f64>() / baseline_scores.len() as f64;

    if let Some(dir) = out_dir {
        crate::checkpoint::save(dir, &dae.store, &dae.config)?;
        write_log_csv(&dir.join("train_log.csv"), &log)?;
    }

    Ok(TrainOutcome {
        steps_run: opts.steps,
        losses,
        log,
        final_heldout_psnr: psnr,
        final_heldout_ssim: ssim,
        baseline_psnr,
        heldout_indices: held_trajs,
    })
}

pub fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut out = String::from("step,loss,lr,heldout_psnr,heldout_ssim\n");
    for row in log {
        out.push_str(&format!(
            "{},{:.9},{:.9e},{},{}\n",
            row.step,
            row.loss,
            row.lr,
            row.heldout_psnr.map(|v| format!("{v:.6}")).unwrap_or_default(),
            row.heldout_ssim.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
