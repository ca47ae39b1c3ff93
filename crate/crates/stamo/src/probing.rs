//! Linear probing of motion representations.
//!
//! The protocol: sample `(I_n, I_{n+k}, A_n, instruction)` tuples from
//! stored trajectories, turn each image pair into a representation vector
//! (latent-state difference, pooled pixel difference, pooled frozen-feature
//! difference, or the ground-truth state difference used as an oracle),
//! train one small MLP per representation to regress the flattened action
//! sequence, and compare validation MSE. A low LP-MSE means the
//! representation exposes the executed actions almost linearly.
//!
//! First-action replay closes the loop: predict the k-step sequence from the
//! representation, execute only the first action in the simulator, and count
//! how often the gripper moves strictly closer to its goal-frame position.

use crate::dae::Dae;
use crate::error::{Error, Result};
use crate::gripperworld::{step, Dataset, Observation, StoredTrajectory};
use crate::latentops::motion;
use crate::nn::{AdamW, Linear, ParamStore};
use crate::tensor::{Real, Tape};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// One probing sample: index into the dataset plus the ground-truth action
/// sequence between the two frames.
#[derive(Debug, Clone)]
pub struct ProbeTuple {
    pub traj: usize,
    pub start: usize,
    pub k: usize,
    /// `k × 3` rows of `(dx, dy, d_aperture)`.
    pub actions: Array2<f64>,
    pub instruction: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub horizons: Vec<usize>,
    pub samples_per_horizon: usize,
    pub train_frac: f64,
    pub hidden_units: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Early-stop patience, in epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            horizons: vec![1, 2, 4, 8],
            samples_per_horizon: 20_000,
            train_frac: 0.95,
            hidden_units: 128,
            epochs: 2000,
            learning_rate: 1e-3,
            patience: 200,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn split_counts(&self, n: usize) -> (usize, usize) {
        let train = (n as f64 * self.train_frac).round() as usize;
        (train, n - train)
    }
}

/// Tuples for one horizon, already split train/validation.
#[derive(Debug, Clone)]
pub struct SampledTuples {
    pub k: usize,
    pub train: Vec<ProbeTuple>,
    pub val: Vec<ProbeTuple>,
}

impl SampledTuples {
    pub fn all(&self) -> impl Iterator<Item = &ProbeTuple> {
        self.train.iter().chain(self.val.iter())
    }
}

/// Sample `n` distinct `(trajectory, start)` tuples with `start + k <
/// trajectory length`, reproducibly from `seed`. The index choice depends
/// only on `(dataset shape, k, n, seed)`, so every representation method
/// probes identical tuples.
pub fn sample_tuples(
    dataset: &Dataset,
    k: usize,
    n: usize,
    seed: u64,
    train_frac: f64,
) -> Result<SampledTuples> {
    let mut feasible: Vec<(usize, usize)> = Vec::new();
    for (ti, t) in dataset.trajectories.iter().enumerate() {
        if t.len() > k {
            for s in 0..t.len() - k {
                feasible.push((ti, s));
            }
        }
    }
    if feasible.len() < n {
        return Err(Error::Dataset(format!(
            "probe sampling needs {n} tuples at horizon {k} but only {} are feasible (short by {})",
            feasible.len(),
            n - feasible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e3779b97f4a7c15));
    // partial Fisher-Yates: the first n entries are a uniform sample
    for i in 0..n {
        let j = rng.random_range(i..feasible.len());
        feasible.swap(i, j);
    }
    let tuples: Vec<ProbeTuple> = feasible[..n]
        .iter()
        .map(|&(ti, s)| {
            let t = &dataset.trajectories[ti];
            let mut actions = Array2::zeros((k, 3));
            for j in 0..k {
                let a = t.actions[s + j].as_array();
                actions[[j, 0]] = a[0];
                actions[[j, 1]] = a[1];
                actions[[j, 2]] = a[2];
            }
            ProbeTuple { traj: ti, start: s, k, actions, instruction: t.instruction.clone() }
        })
        .collect();
    let train_n = (n as f64 * train_frac).round() as usize;
    let (train, val) = tuples.split_at(train_n);
    Ok(SampledTuples { k, train: train.to_vec(), val: val.to_vec() })
}

/// Duplicate `(traj, start)` pairs appearing in both splits.
pub fn find_leakage(tuples: &SampledTuples) -> Vec<(usize, usize)> {
    let train_keys: std::collections::HashSet<(usize, usize)> =
        tuples.train.iter().map(|t| (t.traj, t.start)).collect();
    tuples
        .val
        .iter()
        .filter(|t| train_keys.contains(&(t.traj, t.start)))
        .map(|t| (t.traj, t.start))
        .collect()
}

// ---------------------------------------------------------------------------
// Representations
// ---------------------------------------------------------------------------

pub struct ReprContext<'a> {
    pub i_n: &'a Observation,
    pub i_nk: &'a Observation,
    pub traj: &'a StoredTrajectory,
    pub start: usize,
    pub k: usize,
}

/// A frozen map from an image pair to a feature vector.
pub trait ReprFn: Sync {
    fn name(&self) -> &'static str;
    fn compute(&self, ctx: &ReprContext<'_>) -> Result<Vec<f64>>;
}

impl<R: ReprFn + ?Sized> ReprFn for &R {
    fn name(&self) -> &'static str {
        (**self).name()
    }
    fn compute(&self, ctx: &ReprContext<'_>) -> Result<Vec<f64>> {
        (**self).compute(ctx)
    }
}

impl<R: ReprFn + ?Sized> ReprFn for Box<R> {
    fn name(&self) -> &'static str {
        (**self).name()
    }
    fn compute(&self, ctx: &ReprContext<'_>) -> Result<Vec<f64>> {
        (**self).compute(ctx)
    }
}

/// Latent-state difference from a trained (frozen) encoder.
pub struct LatentDelta<'a, T: Real> {
    pub dae: &'a Dae<T>,
}

impl<T: Real> ReprFn for LatentDelta<'_, T> {
    fn name(&self) -> &'static str {
        "latent_delta"
    }

    fn compute(&self, ctx: &ReprContext<'_>) -> Result<Vec<f64>> {
        let a = self.dae.encode(ctx.i_n)?;
        let b = self.dae.encode(ctx.i_nk)?;
        Ok(motion(&a, &b)?.flatten())
    }
}

/// Pixel-wise difference average-pooled to a fixed `16 × 16 × 3` vector.
pub struct PooledPixelDelta;

pub const POOLED_IMAGE_SIDE: usize = 16;

impl ReprFn for PooledPixelDelta {
    fn name(&self) -> &'static str {
        "pooled_pixel_delta"
    }

    fn compute(&self, ctx: &ReprContext<'_>) -> Result<Vec<f64>> {
        let (h, w) = (ctx.i_n.height(), ctx.i_n.width());
        if h % POOLED_IMAGE_SIDE != 0 || w % POOLED_IMAGE_SIDE != 0 {
            return Err(Error::Shape(format!(
                "image {h}x{w} not divisible into a {POOLED_IMAGE_SIDE} grid"
            )));
        }
        let (fy, fx) = (h / POOLED_IMAGE_SIDE, w / POOLED_IMAGE_SIDE);
        let mut out = vec![0.0; POOLED_IMAGE_SIDE * POOLED_IMAGE_SIDE * 3];
        for gy in 0..POOLED_IMAGE_SIDE {
            for gx in 0..POOLED_IMAGE_SIDE {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for dy in 0..fy {
                        for dx in 0..fx {
                            let (y, x) = (gy * fy + dy, gx * fx + dx);
                            acc += ctx.i_nk.get(y, x, c) - ctx.i_n.get(y, x, c);
                        }
                    }
                    out[(gy * POOLED_IMAGE_SIDE + gx) * 3 + c] = acc / (fy * fx) as f64;
                }
            }
        }
        Ok(out)
    }
}

/// Difference of mean-pooled frozen backbone features.
pub struct PooledFeatureDelta<'a, T: Real> {
    pub dae: &'a Dae<T>,
}

impl<T: Real> ReprFn for PooledFeatureDelta<'_, T> {
    fn name(&self) -> &'static str {
        "pooled_feature_delta"
    }

    fn compute(&self, ctx: &ReprContext<'_>) -> Result<Vec<f64>> {
        let fa = self.dae.extract_features(ctx.i_n)?;
        let fb = self.dae.extract_features(ctx.i_nk)?;
        let p = fa.nrows() as f64;
        let mut out = vec![0.0; fa.ncols()];
        for col in 0..fa.ncols() {
            let mut acc = 0.0;
            for row in 0..fa.nrows() {
                acc += (fb[[row, col]] - fa[[row, col]]).to_f64_();
            }
            out[col] = acc / p;
        }
        Ok(out)
    }
}

/// Ground-truth scene-state difference; the brute-force upper bound used
/// only in tests and reports.
pub struct StateDiffOracle {
    /// Widths are padded to this many objects.
    pub max_objects: usize,
}

impl ReprFn for StateDiffOracle {
    fn name(&self) -> &'static str {
        "state_diff_oracle"
    }

    fn compute(&self, ctx: &ReprContext<'_>) -> Result<Vec<f64>> {
        let a = &ctx.traj.states[ctx.start];
        let b = &ctx.traj.states[ctx.start + ctx.k];
        let mut out = Vec::with_capacity(4 + 2 * self.max_objects);
        out.push(b.gripper_xy.0 - a.gripper_xy.0);
        out.push(b.gripper_xy.1 - a.gripper_xy.1);
        out.push(b.aperture - a.aperture);
        let held = |s: &crate::gripperworld::SceneState| s.held_index.map(|_| 1.0).unwrap_or(0.0);
        out.push(held(b) - held(a));
        for i in 0..self.max_objects {
            match (a.objects.get(i), b.objects.get(i)) {
                (Some(oa), Some(ob)) => {
                    out.push(ob.center.0 - oa.center.0);
                    out.push(ob.center.1 - oa.center.1);
                }
                _ => {
                    out.push(0.0);
                    out.push(0.0);
                }
            }
        }
        Ok(out)
    }
}

/// Representation matrix `X` and flattened action targets `Y` for a tuple
/// list. Frames are decoded once per unique index.
pub fn build_matrices<R: ReprFn>(
    dataset: &Dataset,
    repr: &R,
    tuples: &[ProbeTuple],
) -> Result<(Array2<f64>, Array2<f64>)> {
    if tuples.is_empty() {
        return Err(Error::Domain("no tuples to featurize".into()));
    }
    let k = tuples[0].k;
    if tuples.iter().any(|t| t.k != k) {
        return Err(Error::Domain("mixed horizons in one probe call".into()));
    }

    // Decode each unique frame once, in parallel.
    let mut wanted: Vec<(usize, usize)> = tuples
        .iter()
        .flat_map(|t| [(t.traj, t.start), (t.traj, t.start + t.k)])
        .collect();
    wanted.sort_unstable();
    wanted.dedup();
    let frames: HashMap<(usize, usize), Observation> = wanted
        .par_iter()
        .map(|&(ti, s)| dataset.trajectories[ti].load_frame(s).map(|f| ((ti, s), f)))
        .collect::<Result<HashMap<_, _>>>()?;

    let rows: Vec<Vec<f64>> = tuples
        .par_iter()
        .map(|t| {
            let ctx = ReprContext {
                i_n: &frames[&(t.traj, t.start)],
                i_nk: &frames[&(t.traj, t.start + t.k)],
                traj: &dataset.trajectories[t.traj],
                start: t.start,
                k: t.k,
            };
            repr.compute(&ctx)
        })
        .collect::<Result<Vec<_>>>()?;

    let width = rows[0].len();
    if width == 0 {
        return Err(Error::Config("representation has zero width".into()));
    }
    let mut x = Array2::zeros((tuples.len(), width));
    let mut y = Array2::zeros((tuples.len(), 3 * k));
    for (i, (row, t)) in rows.iter().zip(tuples.iter()).enumerate() {
        if row.len() != width {
            return Err(Error::Shape("inconsistent representation widths".into()));
        }
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
        for j in 0..k {
            for c in 0..3 {
                y[[i, j * 3 + c]] = t.actions[[j, c]];
            }
        }
    }
    Ok((x, y))
}

// ---------------------------------------------------------------------------
// The probe
// ---------------------------------------------------------------------------

/// One-hidden-layer ReLU perceptron, trained full-batch.
pub struct Probe {
    store: ParamStore<f32>,
    fc1: Linear,
    fc2: Linear,
    pub input_width: usize,
    pub output_width: usize,
    pub epochs_run: usize,
    pub train_mse: f64,
}

impl Probe {
    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        let x32 = x.mapv(|v| v as f32);
        let mut tape = Tape::new();
        let xr = tape.constant(x32);
        let h = self.fc1.forward(&self.store, &mut tape, xr);
        let a = tape.relu(h);
        let out = self.fc2.forward(&self.store, &mut tape, a);
        tape.value(out).mapv(|v| v as f64)
    }
}

fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

/// Train the probe on the training split with early stopping on the
/// validation split. Upstream encoders never receive gradients: the inputs
/// here are plain matrices.
pub fn train_probe(
    x_train: &Array2<f64>,
    y_train: &Array2<f64>,
    x_val: &Array2<f64>,
    y_val: &Array2<f64>,
    config: &ProbeConfig,
) -> Result<Probe> {
    let width = x_train.ncols();
    let out_width = y_train.ncols();
    if width == 0 {
        return Err(Error::Config("representation has zero width".into()));
    }
    if x_val.ncols() != width || y_val.ncols() != out_width {
        return Err(Error::Shape("train/val width mismatch".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x51ab));
    let mut store = ParamStore::<f32>::new();
    let fc1 = Linear::new(&mut store, "probe.fc1", width, config.hidden_units, &mut rng, true);
    let fc2 = Linear::new(&mut store, "probe.fc2", config.hidden_units, out_width, &mut rng, true);

    let x32 = x_train.mapv(|v| v as f32);
    let y32 = y_train.mapv(|v| v as f32);
    let xv32 = x_val.mapv(|v| v as f32);
    let mut opt = AdamW::new(config.learning_rate, 0.0);

    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<Array2<f32>>> = None;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;
    let mut train_mse = f64::INFINITY;

    let predict32 = |store: &ParamStore<f32>, x: &Array2<f32>| -> Array2<f32> {
        let mut tape = Tape::new();
        let xr = tape.constant(x.clone());
        let h = fc1.forward(store, &mut tape, xr);
        let a = tape.relu(h);
        let out = fc2.forward(store, &mut tape, a);
        tape.value(out).clone()
    };

    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let xr = tape.constant(x32.clone());
        let h = fc1.forward(&store, &mut tape, xr);
        let a = tape.relu(h);
        let out = fc2.forward(&store, &mut tape, a);
        let loss = tape.mse_to(out, y32.clone());
        train_mse = tape.scalar_value(loss) as f64;
        let grads = tape.backward(loss);
        opt.step(&mut store, &grads, config.learning_rate);
        epochs_run = epoch + 1;

        let pred_val = predict32(&store, &xv32);
        let val_mse = pred_val
            .iter()
            .zip(y_val.iter())
            .map(|(p, t)| {
                let d = *p as f64 - t;
                d * d
            })
            .sum::<f64>()
            / pred_val.len() as f64;
        if val_mse + 1e-12 < best_val {
            best_val = val_mse;
            best_params = Some(store_values(&store));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    if let Some(best) = best_params {
        restore_values(&mut store, best);
    }
    Ok(Probe {
        store,
        fc1,
        fc2,
        input_width: width,
        output_width: out_width,
        epochs_run,
        train_mse,
    })
}

fn store_values(store: &ParamStore<f32>) -> Vec<Array2<f32>> {
    store.iter().map(|(_, p)| (*p.value).clone()).collect()
}

fn restore_values(store: &mut ParamStore<f32>, values: Vec<Array2<f32>>) {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (id, v) in ids.into_iter().zip(values) {
        *store.value_mut(id) = v;
    }
}

/// Validation mean squared error (LP-MSE).
pub fn eval_probe(probe: &Probe, x_val: &Array2<f64>, y_val: &Array2<f64>) -> f64 {
    mse(&probe.predict(x_val), y_val)
}

// ---------------------------------------------------------------------------
// First-action replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReplayReport {
    pub evaluated: usize,
    pub decreased: usize,
    pub unchanged: usize,
    pub increased: usize,
    pub success_fraction: f64,
    /// Among tuples with a live grasp/release (|true d_aperture| > 0.05),
    /// fraction where the predicted aperture move is less than half the true
    /// magnitude — the dominant failure mode.
    pub aperture_undershoot_fraction: f64,
}

/// Execute only the first predicted action of each validation tuple from its
/// true starting state, and check whether the gripper moved strictly closer
/// to its position in the goal frame.
pub fn replay_first_action(
    probe: &Probe,
    dataset: &Dataset,
    tuples: &[ProbeTuple],
    x: &Array2<f64>,
) -> Result<ReplayReport> {
    if tuples.len() != x.nrows() {
        return Err(Error::Shape("replay needs one feature row per tuple".into()));
    }
    let preds = probe.predict(x);
    let mut decreased = 0;
    let mut unchanged = 0;
    let mut increased = 0;
    let mut grasp_cases = 0;
    let mut undershoot = 0;
    for (i, t) in tuples.iter().enumerate() {
        let traj = &dataset.trajectories[t.traj];
        let start = &traj.states[t.start];
        let goal = traj.states[t.start + t.k].gripper_xy;
        let action = crate::gripperworld::Action {
            dx: preds[[i, 0]],
            dy: preds[[i, 1]],
            d_aperture: preds[[i, 2]],
        };
        let next = step(start, &action);
        let before = dist(start.gripper_xy, goal);
        let after = dist(next.gripper_xy, goal);
        if after < before {
            decreased += 1;
        } else if after == before {
            unchanged += 1;
        } else {
            increased += 1;
        }
        let true_dap = t.actions[[0, 2]];
        if true_dap.abs() > 0.05 {
            grasp_cases += 1;
            if action.d_aperture.abs() < 0.5 * true_dap.abs() {
                undershoot += 1;
            }
        }
    }
    Ok(ReplayReport {
        evaluated: tuples.len(),
        decreased,
        unchanged,
        increased,
        success_fraction: decreased as f64 / tuples.len() as f64,
        aperture_undershoot_fraction: if grasp_cases > 0 {
            undershoot as f64 / grasp_cases as f64
        } else {
            0.0
        },
    })
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

// ---------------------------------------------------------------------------
// Whole-protocol driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProbeResult {
    pub method: String,
    pub k: usize,
    pub lp_mse: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    pub epochs_run: usize,
    pub replay_success_fraction: Option<f64>,
    pub replay: Option<ReplayReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub seed: u64,
    pub results: Vec<ProbeResult>,
}

/// Run the probing protocol for one representation across all configured
/// horizons; replay runs at `replay_k` (when that horizon is present).
pub fn run_probe_method<R: ReprFn>(
    dataset: &Dataset,
    repr: &R,
    config: &ProbeConfig,
    replay_k: Option<usize>,
) -> Result<Vec<ProbeResult>> {
    let mut out = Vec::new();
    for &k in &config.horizons {
        let tuples = sample_tuples(
            dataset,
            k,
            config.samples_per_horizon,
            config.seed,
            config.train_frac,
        )?;
        let leaks = find_leakage(&tuples);
        if !leaks.is_empty() {
            return Err(Error::Domain(format!(
                "train/val leakage detected on {} tuples",
                leaks.len()
            )));
        }
        let (x_train, y_train) = build_matrices(dataset, repr, &tuples.train)?;
        let (x_val, y_val) = build_matrices(dataset, repr, &tuples.val)?;
        let probe = train_probe(&x_train, &y_train, &x_val, &y_val, config)?;
        let lp_mse = eval_probe(&probe, &x_val, &y_val);
        let replay = if replay_k == Some(k) {
            Some(replay_first_action(&probe, dataset, &tuples.val, &x_val)?)
        } else {
            None
        };
        out.push(ProbeResult {
            method: repr.name().to_string(),
            k,
            lp_mse,
            n_train: tuples.train.len(),
            n_val: tuples.val.len(),
            seed: config.seed,
            epochs_run: probe.epochs_run,
            replay_success_fraction: replay.as_ref().map(|r| r.success_fraction),
            replay,
        });
    }
    Ok(out)
}

pub fn write_probe_report_json(path: &std::path::Path, report: &ProbeReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_probe_report_csv(path: &std::path::Path, results: &[ProbeResult]) -> Result<()> {
    let mut out = String::from("method,k,lp_mse,n_train,n_val,seed,replay_success_fraction\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{:.9e},{},{},{},{}\n",
            r.method,
            r.k,
            r.lp_mse,
            r.n_train,
            r.n_val,
            r.seed,
            r.replay_success_fraction
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default()
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gripperworld::{generate_dataset, load_dataset, DatasetConfig, TaskMix};
    use std::sync::OnceLock;

    fn test_dataset() -> &'static (tempfile::TempDir, Dataset) {
        static DS: OnceLock<(tempfile::TempDir, Dataset)> = OnceLock::new();
        DS.get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = DatasetConfig {
                task_mix: TaskMix::default(),
                n_trajectories: 8,
                resolution: 32,
                seed: 5,
            };
            generate_dataset(&cfg, dir.path(), true).unwrap();
            let ds = load_dataset(dir.path()).unwrap();
            (dir, ds)
        })
    }

    #[test]
    fn sampling_is_reproducible_and_leak_free() {
        let (_, ds) = test_dataset();
        let a = sample_tuples(ds, 4, 50, 9, 0.95).unwrap();
        let b = sample_tuples(ds, 4, 50, 9, 0.95).unwrap();
        let key = |ts: &SampledTuples| -> Vec<(usize, usize)> {
            ts.all().map(|t| (t.traj, t.start)).collect()
        };
        assert_eq!(key(&a), key(&b));
        assert!(find_leakage(&a).is_empty());
        assert_eq!(a.train.len() + a.val.len(), 50);
        // distinct pairs
        let mut keys = key(&a);
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 50);
    }

    #[test]
    fn split_follows_the_probe_ratio() {
        let cfg = ProbeConfig::default();
        assert_eq!(cfg.split_counts(20_000), (19_000, 1_000));
        let (_, ds) = test_dataset();
        let s = sample_tuples(ds, 2, 40, 1, 0.95).unwrap();
        assert_eq!(s.train.len(), 38);
        assert_eq!(s.val.len(), 2);
    }

    #[test]
    fn oversampling_reports_shortfall() {
        let (_, ds) = test_dataset();
        let err = sample_tuples(ds, 4, 1_000_000, 0, 0.95).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("short by"), "{msg}");
        // a horizon longer than every trajectory leaves nothing feasible
        assert!(sample_tuples(ds, 500, 1, 0, 0.95).is_err());
    }

    #[test]
    fn injected_duplicate_is_detected() {
        let (_, ds) = test_dataset();
        let mut s = sample_tuples(ds, 2, 30, 3, 0.9).unwrap();
        s.val[0] = s.train[0].clone();
        assert_eq!(find_leakage(&s).len(), 1);
    }

    #[test]
    fn linear_teacher_is_probed_to_near_zero_mse() {
        let (_, ds) = test_dataset();
        let s = sample_tuples(ds, 2, 60, 11, 0.9).unwrap();
        let repr = StateDiffOracle { max_objects: 3 };
        let (x_train, _) = build_matrices(ds, &repr, &s.train).unwrap();
        let (x_val, _) = build_matrices(ds, &repr, &s.val).unwrap();

        // teacher: a fixed linear map of the representation
        let w = Array2::from_shape_fn((x_train.ncols(), 6), |(i, j)| {
            ((i * 7 + j * 3) % 5) as f64 * 0.21 - 0.4
        });
        let y_train = x_train.dot(&w);
        let y_val = x_val.dot(&w);

        let cfg = ProbeConfig {
            samples_per_horizon: 60,
            epochs: 4000,
            patience: 4000,
            learning_rate: 2e-3,
            seed: 11,
            ..Default::default()
        };
        let probe = train_probe(&x_train, &y_train, &x_val, &y_val, &cfg).unwrap();
        let val_mse = eval_probe(&probe, &x_val, &y_val);
        assert!(val_mse <= 1e-6, "probe failed to fit a linear teacher: {val_mse}");
    }

    #[test]
    fn probe_on_its_own_predictions_scores_zero() {
        let (_, ds) = test_dataset();
        let s = sample_tuples(ds, 1, 40, 2, 0.9).unwrap();
        let repr = PooledPixelDelta;
        let (x_train, y_train) = build_matrices(ds, &repr, &s.train).unwrap();
        let (x_val, y_val) = build_matrices(ds, &repr, &s.val).unwrap();
        let cfg = ProbeConfig { epochs: 50, seed: 2, ..Default::default() };
        let probe = train_probe(&x_train, &y_train, &x_val, &y_val, &cfg).unwrap();
        let self_labels = probe.predict(&x_val);
        assert_eq!(eval_probe(&probe, &x_val, &self_labels), 0.0);
        assert!(eval_probe(&probe, &x_val, &y_val) >= 0.0);
    }

    #[test]
    fn zero_width_representation_is_rejected() {
        struct EmptyRepr;
        impl ReprFn for EmptyRepr {
            fn name(&self) -> &'static str {
                "empty"
            }
            fn compute(&self, _: &ReprContext<'_>) -> Result<Vec<f64>> {
                Ok(vec![])
            }
        }
        let (_, ds) = test_dataset();
        let s = sample_tuples(ds, 1, 20, 0, 0.9).unwrap();
        assert!(build_matrices(ds, &EmptyRepr, &s.train).is_err());
    }

    #[test]
    fn mixed_horizons_are_rejected() {
        let (_, ds) = test_dataset();
        let a = sample_tuples(ds, 1, 10, 0, 0.9).unwrap();
        let b = sample_tuples(ds, 2, 10, 0, 0.9).unwrap();
        let mut mixed = a.train.clone();
        mixed.extend(b.train.iter().cloned());
        assert!(build_matrices(ds, &PooledPixelDelta, &mixed).is_err());
    }

    #[test]
    fn zero_action_probe_leaves_distance_unchanged() {
        let (_, ds) = test_dataset();
        let s = sample_tuples(ds, 2, 30, 4, 0.8).unwrap();
        let repr = PooledPixelDelta;
        let (x_val, _) = build_matrices(ds, &repr, &s.val).unwrap();
        // a probe with zeroed weights predicts exactly zero actions
        let mut store = ParamStore::<f32>::new();
        let fc1 = Linear::new_zeros(&mut store, "probe.fc1", x_val.ncols(), 8, true);
        let fc2 = Linear::new_zeros(&mut store, "probe.fc2", 8, 6, true);
        let probe = Probe {
            store,
            fc1,
            fc2,
            input_width: x_val.ncols(),
            output_width: 6,
            epochs_run: 0,
            train_mse: f64::INFINITY,
        };
        let report = replay_first_action(&probe, ds, &s.val, &x_val).unwrap();
        assert_eq!(report.unchanged, report.evaluated);
        assert_eq!(report.decreased, 0);
    }
}
