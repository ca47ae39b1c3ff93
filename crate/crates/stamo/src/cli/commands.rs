//! Command implementations behind the CLI surface.

use super::config::ExperimentConfig;
use super::manifest::{RunManifest, RunRecorder};
use crate::checkpoint;
use crate::dae::{reconstruct as sample_image, train_dae as run_dae_training, Dae, DaeConfig};
use crate::error::{Error, Result};
use crate::gripperworld::{generate_dataset, load_dataset, Dataset, Observation};
use crate::imageio;
use crate::latentops;
use crate::metrics;
use crate::plot::BarChart;
use crate::probing::{
    self, LatentDelta, PooledFeatureDelta, PooledPixelDelta, ProbeReport, StateDiffOracle,
};
use crate::worldpolicy::{
    self, evaluate_policy, Policy, PolicyActor, PolicySample, TargetKind,
};
use std::path::Path;

pub fn load_dae_checkpoint(dir: &Path) -> Result<Dae<f32>> {
    let config: DaeConfig = checkpoint::load_config(dir)?;
    let mut dae = Dae::<f32>::new(config)?;
    checkpoint::restore_into(dir, &mut dae.store)?;
    Ok(dae)
}

pub fn load_policy_checkpoint(dir: &Path) -> Result<Policy<f32>> {
    let config: worldpolicy::PolicyConfig = checkpoint::load_config(dir)?;
    let mut policy = Policy::<f32>::new(config)?;
    checkpoint::restore_into(dir, &mut policy.store)?;
    Ok(policy)
}

pub fn gen_data(cfg: &ExperimentConfig, mut rec: RunRecorder, overwrite: bool) -> Result<RunManifest> {
    let out = rec.path("dataset");
    generate_dataset(&cfg.data, &out, overwrite)?;
    rec.record_tree("dataset")?;
    rec.finish()
}

pub fn train_dae(cfg: &ExperimentConfig, mut rec: RunRecorder, dataset: &Path) -> Result<RunManifest> {
    let ds = load_dataset(dataset)?;
    let mut dae = Dae::<f32>::new(cfg.dae.clone())?;
    let ckpt_dir = rec.path("checkpoint");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(ckpt_dir.display().to_string(), e))?;
    let outcome = run_dae_training(&mut dae, &ds, &cfg.dae_train, Some(&ckpt_dir))?;
    println!(
        "held-out psnr {:.2} dB (mean-image baseline {:.2} dB), ssim {:.4}",
        outcome.final_heldout_psnr, outcome.baseline_psnr, outcome.final_heldout_ssim
    );
    rec.record_tree("checkpoint")?;
    rec.finish()
}

/// Frames for the metric table: a few from the training split, a few from
/// the held-out split (same split convention as training).
fn split_eval_frames(
    ds: &Dataset,
    heldout_frac: f64,
    n: usize,
) -> Result<(Vec<Observation>, Vec<Observation>)> {
    let (train_ids, held_ids) =
        crate::dae::split_trajectories(ds.trajectories.len(), heldout_frac);
    let pick = |ids: &[usize]| -> Result<Vec<Observation>> {
        let mut out = Vec::new();
        for &ti in ids.iter().rev() {
            let t = &ds.trajectories[ti];
            out.push(t.load_frame(t.len() / 2)?);
            if out.len() >= n {
                break;
            }
        }
        Ok(out)
    };
    Ok((pick(&train_ids)?, pick(&held_ids)?))
}

pub fn reconstruct(
    cfg: &ExperimentConfig,
    mut rec: RunRecorder,
    ckpt: &Path,
    dataset: &Path,
    steps: usize,
    n_images: usize,
) -> Result<RunManifest> {
    let dae = load_dae_checkpoint(ckpt)?;
    let ds = load_dataset(dataset)?;
    let (train_frames, held_frames) =
        split_eval_frames(&ds, cfg.dae_train.heldout_frac, n_images)?;

    let score = |frames: &[Observation], tag: &str, rec: &mut RunRecorder| -> Result<(f64, f64)> {
        let mut psnrs = Vec::new();
        let mut ssims = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            let state = dae.encode(f)?;
            let recon = sample_image(&dae, &state, steps, cfg.reconstruct.noise_seed + i as u64)?;
            psnrs.push(metrics::psnr(f, &recon)?);
            ssims.push(metrics::ssim(f, &recon)?);
            let pair = imageio::hstack(&[f.clone(), recon]);
            let name = format!("{tag}_{i:02}.png");
            imageio::save_png(&rec.path(&name), &pair)?;
            rec.record(&name);
        }
        Ok((
            metrics::summarize(&psnrs).mean,
            metrics::summarize(&ssims).mean,
        ))
    };

    let (train_psnr, train_ssim) = score(&train_frames, "train", &mut rec)?;
    let (held_psnr, held_ssim) = score(&held_frames, "heldout", &mut rec)?;

    // one row per metric, one column per split
    let table = format!(
        "metric,train,heldout\npsnr_db,{train_psnr:.4},{held_psnr:.4}\nssim,{train_ssim:.4},{held_ssim:.4}\n"
    );
    std::fs::write(rec.path("metrics.csv"), table)
        .map_err(|e| Error::io("metrics.csv".to_string(), e))?;
    rec.record("metrics.csv");
    println!("reconstruction: train {train_psnr:.2} dB / held-out {held_psnr:.2} dB");
    rec.finish()
}

pub fn interpolate(
    cfg: &ExperimentConfig,
    mut rec: RunRecorder,
    ckpt: &Path,
    image_a: &Path,
    image_b: &Path,
    frames: usize,
) -> Result<RunManifest> {
    let dae = load_dae_checkpoint(ckpt)?;
    let a = imageio::load_png(image_a)?;
    let b = imageio::load_png(image_b)?;
    let s_a = dae.encode(&a)?;
    let s_b = dae.encode(&b)?;

    let mut decoded = Vec::with_capacity(frames);
    for i in 0..frames {
        let alpha = i as f64 / (frames - 1) as f64;
        let s = latentops::lerp(&s_a, &s_b, alpha)?;
        decoded.push(sample_image(&dae, &s, cfg.reconstruct.steps, cfg.reconstruct.noise_seed)?);
    }
    let strip = imageio::hstack(&decoded);
    imageio::save_png(&rec.path("strip.png"), &strip)?;
    rec.record("strip.png");

    let mut csv = String::from("frame,alpha,rms_to_first,rms_to_last\n");
    let rms = |x: &Observation, y: &Observation| -> f64 {
        let n = x.pixels().len() as f64;
        (x.pixels()
            .iter()
            .zip(y.pixels().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    for (i, img) in decoded.iter().enumerate() {
        let alpha = i as f64 / (frames - 1) as f64;
        csv.push_str(&format!(
            "{i},{alpha:.6},{:.6},{:.6}\n",
            rms(img, &decoded[0]),
            rms(img, decoded.last().unwrap())
        ));
    }
    std::fs::write(rec.path("distances.csv"), csv)
        .map_err(|e| Error::io("distances.csv".to_string(), e))?;
    rec.record("distances.csv");
    rec.finish()
}

pub fn transfer(
    cfg: &ExperimentConfig,
    mut rec: RunRecorder,
    ckpt: &Path,
    image_1: &Path,
    image_2: &Path,
    image_3: &Path,
) -> Result<RunManifest> {
    let dae = load_dae_checkpoint(ckpt)?;
    let s1 = dae.encode(&imageio::load_png(image_1)?)?;
    let s2 = dae.encode(&imageio::load_png(image_2)?)?;
    let s3 = dae.encode(&imageio::load_png(image_3)?)?;
    let transferred = latentops::transfer(&s1, &s2, &s3)?;
    let img = sample_image(&dae, &transferred, cfg.reconstruct.steps, cfg.reconstruct.noise_seed)?;
    imageio::save_png(&rec.path("transfer.png"), &img)?;
    rec.record("transfer.png");
    let base = sample_image(&dae, &s3, cfg.reconstruct.steps, cfg.reconstruct.noise_seed)?;
    imageio::save_png(&rec.path("base.png"), &base)?;
    rec.record("base.png");
    rec.finish()
}

pub fn probe(
    cfg: &ExperimentConfig,
    mut rec: RunRecorder,
    ckpt: &Path,
    dataset: &Path,
) -> Result<RunManifest> {
    let dae = load_dae_checkpoint(ckpt)?;
    let ds = load_dataset(dataset)?;
    let replay_k = cfg.probe.horizons.iter().cloned().find(|k| *k == 8);
    let max_objects = ds
        .trajectories
        .iter()
        .map(|t| t.states[0].objects.len())
        .max()
        .unwrap_or(1);

    let mut results = Vec::new();
    results.extend(probing::run_probe_method(&ds, &LatentDelta { dae: &dae }, &cfg.probe, replay_k)?);
    results.extend(probing::run_probe_method(&ds, &PooledFeatureDelta { dae: &dae }, &cfg.probe, replay_k)?);
    results.extend(probing::run_probe_method(&ds, &PooledPixelDelta, &cfg.probe, replay_k)?);
    results.extend(probing::run_probe_method(
        &ds,
        &StateDiffOracle { max_objects },
        &cfg.probe,
        replay_k,
    )?);

    let report = ProbeReport { seed: cfg.probe.seed, results };
    probing::write_probe_report_json(&rec.path("probe_report.json"), &report)?;
    rec.record("probe_report.json");
    probing::write_probe_report_csv(&rec.path("probe_report.csv"), &report.results)?;
    rec.record("probe_report.csv");

    let methods: Vec<String> = {
        let mut m: Vec<String> = report.results.iter().map(|r| r.method.clone()).collect();
        m.dedup();
        m
    };
    let chart = BarChart {
        title: "LP-MSE BY HORIZON",
        groups: cfg.probe.horizons.iter().map(|k| format!("K={k}")).collect(),
        series: methods
            .iter()
            .map(|m| {
                let vals = cfg
                    .probe
                    .horizons
                    .iter()
                    .map(|k| {
                        report
                            .results
                            .iter()
                            .find(|r| &r.method == m && r.k == *k)
                            .map(|r| r.lp_mse)
                            .unwrap_or(f64::NAN)
                    })
                    .collect();
                (m.clone(), vals)
            })
            .collect(),
        log_y: true,
    };
    chart.render(&rec.path("lp_mse.png"))?;
    rec.record("lp_mse.png");
    for r in &report.results {
        println!("{:>22} k={} lp_mse {:.3e}", r.method, r.k, r.lp_mse);
    }
    rec.finish()
}

pub fn train_policy(
    cfg: &ExperimentConfig,
    mut rec: RunRecorder,
    dataset: &Path,
    dae_ckpt: Option<&Path>,
) -> Result<RunManifest> {
    let ds = load_dataset(dataset)?;
    let dae = match dae_ckpt {
        Some(p) => Some(load_dae_checkpoint(p)?),
        None => None,
    };
    if cfg.policy.target_kind != TargetKind::None && dae.is_none() {
        return Err(Error::Config(
            "future-state targets need --checkpoint with a trained autoencoder".into(),
        ));
    }
    let mut pcfg = cfg.policy.clone();
    if let Some(dae) = &dae {
        pcfg.state_token_count = dae.config.compressor.token_count;
        pcfg.state_token_dim = dae.config.compressor.token_dim;
    }
    let all: Vec<usize> = (0..ds.trajectories.len()).collect();
    let samples = worldpolicy::build_robot_samples(&ds, &all, &pcfg, dae.as_ref())?;
    let mut policy = Policy::<f32>::new(pcfg.clone())?;
    let log = worldpolicy::train_policy(&mut policy, &samples, &cfg.policy_train)?;

    let ckpt_dir = rec.path("policy");
    checkpoint::save(&ckpt_dir, &policy.store, &pcfg)?;
    rec.record_tree("policy")?;
    write_policy_log(&rec.path("train_log.csv"), &log)?;
    rec.record("train_log.csv");
    rec.finish()
}

fn write_policy_log(path: &Path, log: &[worldpolicy::PolicyTrainLogRow]) -> Result<()> {
    let mut out = String::from("step,l_action,l_mse,l_l1,l_motion,l_total\n");
    for row in log {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            row.step,
            row.breakdown.robot.l_action,
            row.breakdown.robot.l_mse,
            row.breakdown.robot.l_l1,
            row.breakdown.l_motion,
            row.breakdown.l_total,
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn eval_policy(cfg: &ExperimentConfig, mut rec: RunRecorder, policy_dir: &Path) -> Result<RunManifest> {
    let policy = load_policy_checkpoint(policy_dir)?;
    let tasks = cfg.eval.task_kinds()?;
    let mut actor = PolicyActor::new(&policy);
    let report = evaluate_policy(
        &mut actor,
        &tasks,
        cfg.eval.trials,
        cfg.policy_train.seed,
        policy.config.resolution,
        3,
    )?;
    worldpolicy::write_eval_report_json(&rec.path("eval_report.json"), &report)?;
    rec.record("eval_report.json");
    worldpolicy::write_eval_report_csv(&rec.path("eval_report.csv"), &report)?;
    rec.record("eval_report.csv");
    for t in &report.tasks {
        println!("{:>12}: {:.1}%", t.task, t.success_rate * 100.0);
    }
    rec.finish()
}

pub fn cotrain(
    cfg: &ExperimentConfig,
    mut rec: RunRecorder,
    robot_dataset: &Path,
    video_dataset: &Path,
    dae_ckpt: &Path,
) -> Result<RunManifest> {
    let dae = load_dae_checkpoint(dae_ckpt)?;
    let robot_ds = load_dataset(robot_dataset)?;
    let video_ds = load_dataset(video_dataset)?;

    let mut pcfg = cfg.policy.clone();
    pcfg.state_token_count = dae.config.compressor.token_count;
    pcfg.state_token_dim = dae.config.compressor.token_dim;

    // Robot samples come from the robot dataset; video pairs from the other.
    let robot_ids: Vec<usize> = (0..robot_ds.trajectories.len()).collect();
    let mut samples = worldpolicy::build_robot_samples(
        &robot_ds,
        &robot_ids,
        &pcfg,
        (pcfg.target_kind != TargetKind::None).then_some(&dae),
    )?;
    let video_ids: Vec<usize> = (0..video_ds.trajectories.len()).collect();
    let video_only = worldpolicy::build_cotrain_dataset(&video_ds, &[0], &video_ids, &pcfg, &dae)?;
    samples.extend(video_only.into_iter().filter(|s| !s.is_robot()));
    if !samples.iter().any(PolicySample::is_robot) {
        return Err(Error::Domain("co-training requires robot samples".into()));
    }

    let mut policy = Policy::<f32>::new(pcfg.clone())?;
    let log = worldpolicy::train_policy(&mut policy, &samples, &cfg.policy_train)?;
    checkpoint::save(&rec.path("policy"), &policy.store, &pcfg)?;
    rec.record_tree("policy")?;
    write_policy_log(&rec.path("train_log.csv"), &log)?;
    rec.record("train_log.csv");

    let tasks = cfg.eval.task_kinds()?;
    let mut actor = PolicyActor::new(&policy);
    let report = evaluate_policy(
        &mut actor,
        &tasks,
        cfg.eval.trials,
        cfg.policy_train.seed,
        pcfg.resolution,
        3,
    )?;
    worldpolicy::write_eval_report_json(&rec.path("eval_report.json"), &report)?;
    rec.record("eval_report.json");
    worldpolicy::write_eval_report_csv(&rec.path("eval_report.csv"), &report)?;
    rec.record("eval_report.csv");
    rec.finish()
}
