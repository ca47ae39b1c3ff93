//! End-to-end CLI tests on a tiny configuration: every subcommand runs,
//! produces its declared outputs, and reruns byte-identically.

use stamo::cli::{help_text, run_from, RunManifest, MANIFEST_NAME};
use std::fs;
use std::path::{Path, PathBuf};

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("stamo".to_string())
        .chain(list.iter().map(|s| s.to_string()))
        .collect()
}

/// Tiny end-to-end configuration: everything runs in seconds.
fn tiny_config_file(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "data": {
            "task_mix": {"reach": 1, "pick": 1, "pick_place": 1, "stack": 1},
            "n_trajectories": 6,
            "resolution": 32,
            "seed": 5
        },
        "dae": {
            "resolution": 32,
            "backbone": {"kind": "tiny_patch", "patch_size": 8, "width": 32, "blocks": 1, "heads": 2, "seed": 1001},
            "compressor": {"blocks": 1, "heads": 2, "token_count": 2, "token_dim": 16},
            "decoder": {"blocks": 1, "heads": 2, "width": 32, "patch_size": 8, "mlp_ratio": 2, "conditioning": "cross_attention"},
            "pixel_to_latent": "identity",
            "init_seed": 33
        },
        "dae_train": {
            "steps": 12, "batch_size": 4, "learning_rate": 3e-4, "weight_decay": 1e-3,
            "seed": 33, "warmup_steps": 0, "min_lr_frac": 0.05, "heldout_frac": 0.2,
            "eval_every": 0, "eval_frames": 2, "eval_sample_steps": 3, "checkpoint_every": 0
        },
        "probe": {
            "horizons": [1, 8], "samples_per_horizon": 40, "train_frac": 0.9,
            "hidden_units": 16, "epochs": 30, "learning_rate": 1e-3, "patience": 30, "seed": 3
        },
        "policy": {
            "resolution": 32, "patch_size": 16, "trunk_width": 32, "trunk_blocks": 1,
            "trunk_heads": 2, "action_bins": 16, "target_kind": "none",
            "lambda_action": 1.0, "lambda_future": 1.0, "horizon": 1,
            "state_token_count": 2, "state_token_dim": 16, "head_hidden": 8, "init_seed": 1
        },
        "policy_train": {"steps": 8, "batch_size": 8, "learning_rate": 1e-3, "weight_decay": 1e-4, "seed": 2},
        "eval": {"tasks": ["reach"], "trials": 2},
        "reconstruct": {"steps": 3, "n_images": 2, "noise_seed": 0}
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run(dir: &Path, list: &[&str]) -> RunManifest {
    run_from(args(list)).unwrap_or_else(|e| panic!("command {list:?} failed: {e}\n(dir {dir:?})"))
}

/// Snapshot of all CSV/JSON bytes in a run dir, except the manifest (which
/// carries wall-clock timestamps).
fn tabular_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let name = p.file_name().unwrap().to_string_lossy().to_string();
                let ext = p.extension().map(|e| e.to_string_lossy().to_string());
                if name != MANIFEST_NAME
                    && matches!(ext.as_deref(), Some("csv") | Some("json") | Some("png"))
                {
                    let rel = p.strip_prefix(dir).unwrap().to_string_lossy().to_string();
                    out.push((rel, fs::read(&p).unwrap()));
                }
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_text_matches_golden_file() {
    let golden = include_str!("golden_help.txt");
    assert_eq!(help_text(), golden, "CLI help changed; regenerate tests/golden_help.txt");
}

#[test]
fn every_flag_has_help_line() {
    let help = help_text();
    for flag in ["--config", "--seed", "--out", "--paper-scale"] {
        assert!(help.contains(flag), "missing {flag} in help");
    }
    for cmd in [
        "gen-data",
        "train-dae",
        "reconstruct",
        "interpolate",
        "transfer",
        "probe",
        "train-policy",
        "eval-policy",
        "cotrain",
        "report",
    ] {
        assert!(help.contains(cmd), "missing {cmd} in help");
    }
}

#[test]
fn zero_steps_reconstruct_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let err = run_from(args(&[
        "reconstruct",
        "--checkpoint",
        tmp.path().to_str().unwrap(),
        "--dataset",
        tmp.path().to_str().unwrap(),
        "--steps",
        "0",
    ]));
    assert!(err.is_err());
}

#[test]
fn pipeline_runs_end_to_end_and_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config_file(tmp.path());
    let cfg_s = cfg.to_str().unwrap();
    let root = tmp.path();

    // gen-data twice: identical datasets
    let ds_a = root.join("data_a");
    let ds_b = root.join("data_b");
    for (out, _tag) in [(&ds_a, "a"), (&ds_b, "b")] {
        let manifest = run(
            root,
            &["gen-data", "--config", cfg_s, "--out", out.to_str().unwrap()],
        );
        assert!(out.join(MANIFEST_NAME).exists());
        assert!(!manifest.outputs.is_empty());
    }
    assert_eq!(tabular_snapshot(&ds_a), tabular_snapshot(&ds_b));
    let dataset = ds_a.join("dataset");

    // train-dae twice: identical checkpoints and logs
    let dae_a = root.join("dae_a");
    let dae_b = root.join("dae_b");
    for out in [&dae_a, &dae_b] {
        run(
            root,
            &[
                "train-dae",
                "--config",
                cfg_s,
                "--out",
                out.to_str().unwrap(),
                "--dataset",
                dataset.to_str().unwrap(),
            ],
        );
    }
    assert_eq!(tabular_snapshot(&dae_a), tabular_snapshot(&dae_b));
    let ckpt = dae_a.join("checkpoint");
    let weights_a = fs::read(ckpt.join("weights.bin")).unwrap();
    let weights_b = fs::read(dae_b.join("checkpoint/weights.bin")).unwrap();
    assert_eq!(weights_a, weights_b, "training is not bit-deterministic");

    // reconstruct twice
    let rec_a = root.join("rec_a");
    let rec_b = root.join("rec_b");
    for out in [&rec_a, &rec_b] {
        run(
            root,
            &[
                "reconstruct",
                "--config",
                cfg_s,
                "--out",
                out.to_str().unwrap(),
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--dataset",
                dataset.to_str().unwrap(),
                "--steps",
                "3",
                "--n-images",
                "2",
            ],
        );
        let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
        let mut lines = metrics.lines();
        assert_eq!(lines.next().unwrap(), "metric,train,heldout");
        assert!(lines.next().unwrap().starts_with("psnr_db,"));
        assert!(lines.next().unwrap().starts_with("ssim,"));
    }
    assert_eq!(tabular_snapshot(&rec_a), tabular_snapshot(&rec_b));

    // interpolate + transfer on dataset frames
    let f0 = dataset.join("traj_00000/frames/0000.png");
    let f1 = dataset.join("traj_00000/frames/0010.png");
    let f2 = dataset.join("traj_00001/frames/0000.png");
    let interp = root.join("interp");
    run(
        root,
        &[
            "interpolate",
            "--config",
            cfg_s,
            "--out",
            interp.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--image-a",
            f0.to_str().unwrap(),
            "--image-b",
            f1.to_str().unwrap(),
            "--frames",
            "4",
        ],
    );
    assert!(interp.join("strip.png").exists());
    assert!(interp.join("distances.csv").exists());

    let transfer = root.join("transfer");
    run(
        root,
        &[
            "transfer",
            "--config",
            cfg_s,
            "--out",
            transfer.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--image-1",
            f0.to_str().unwrap(),
            "--image-2",
            f1.to_str().unwrap(),
            "--image-3",
            f2.to_str().unwrap(),
        ],
    );
    assert!(transfer.join("transfer.png").exists());

    // probe twice
    let probe_a = root.join("probe_a");
    let probe_b = root.join("probe_b");
    for out in [&probe_a, &probe_b] {
        run(
            root,
            &[
                "probe",
                "--config",
                cfg_s,
                "--out",
                out.to_str().unwrap(),
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--dataset",
                dataset.to_str().unwrap(),
            ],
        );
        assert!(out.join("probe_report.json").exists());
        assert!(out.join("probe_report.csv").exists());
        assert!(out.join("lp_mse.png").exists());
    }
    assert_eq!(tabular_snapshot(&probe_a), tabular_snapshot(&probe_b));

    // train-policy + eval-policy
    let pol = root.join("policy_run");
    run(
        root,
        &[
            "train-policy",
            "--config",
            cfg_s,
            "--out",
            pol.to_str().unwrap(),
            "--dataset",
            dataset.to_str().unwrap(),
        ],
    );
    let eval_a = root.join("eval_a");
    let eval_b = root.join("eval_b");
    for out in [&eval_a, &eval_b] {
        run(
            root,
            &[
                "eval-policy",
                "--config",
                cfg_s,
                "--out",
                out.to_str().unwrap(),
                "--policy",
                pol.join("policy").to_str().unwrap(),
            ],
        );
        assert!(out.join("eval_report.json").exists());
    }
    assert_eq!(tabular_snapshot(&eval_a), tabular_snapshot(&eval_b));

    // cotrain (robot + video datasets can be the same directory here)
    let cot = root.join("cotrain_run");
    run(
        root,
        &[
            "cotrain",
            "--config",
            cfg_s,
            "--out",
            cot.to_str().unwrap(),
            "--robot-dataset",
            dataset.to_str().unwrap(),
            "--video-dataset",
            dataset.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ],
    );
    assert!(cot.join("eval_report.json").exists());

    // consolidated report over several runs
    let rep = root.join("report_run");
    run(
        root,
        &[
            "report",
            "--config",
            cfg_s,
            "--out",
            rep.to_str().unwrap(),
            probe_a.to_str().unwrap(),
            eval_a.to_str().unwrap(),
            rec_a.to_str().unwrap(),
        ],
    );
    let md = fs::read_to_string(rep.join("report.md")).unwrap();
    assert!(md.contains("Linear probing"));
    assert!(md.contains("Policy success rates"));
    assert!(rep.join("success.png").exists());

    // every manifest validates
    for dir in [&ds_a, &dae_a, &rec_a, &interp, &transfer, &probe_a, &pol, &eval_a, &cot, &rep] {
        let manifest = RunManifest::read(dir).unwrap();
        manifest.validate(dir).unwrap();
    }
}

#[test]
fn gen_data_refuses_nonempty_output_without_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config_file(tmp.path());
    let out = tmp.path().join("once");
    run(
        tmp.path(),
        &["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
    );
    let again = run_from(args(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(again.is_err(), "expected refusal on non-empty dataset dir");
}

#[test]
fn runs_dir_env_is_used_when_out_is_absent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config_file(tmp.path());
    // safety: tests in this binary that touch this env var run serially
    std::env::set_var("STAMO_RUNS_DIR", tmp.path().join("runs_root"));
    let manifest = run_from(args(&["gen-data", "--config", cfg.to_str().unwrap()])).unwrap();
    std::env::remove_var("STAMO_RUNS_DIR");
    let run_dir = tmp.path().join("runs_root").join(&manifest.run_id);
    assert!(run_dir.join(MANIFEST_NAME).exists());
}
