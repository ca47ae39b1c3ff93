// Temporary calibration driver: dataset + full DAE training at defaults.
use stamo::dae::{train_dae, Dae, DaeConfig, TrainOptions};
use stamo::gripperworld::{generate_dataset, load_dataset, DatasetConfig, TaskMix};
use std::path::Path;
use std::time::Instant;

fn main() {
    let root = Path::new("/root/scratch/ds_main");
    if !root.join("manifest.json").exists() {
        let cfg = DatasetConfig {
            task_mix: TaskMix::default(),
            n_trajectories: 150,
            resolution: 64,
            seed: 7,
        };
        let t0 = Instant::now();
        let m = generate_dataset(&cfg, root, true).unwrap();
        println!("dataset: {} trajs, {} frames in {:?}", m.n_trajectories, m.n_frames, t0.elapsed());
    }
    let ds = load_dataset(root).unwrap();
    println!("loaded {} trajectories / {} frames", ds.trajectories.len(), ds.n_frames());

    let mut dae = Dae::<f32>::new(DaeConfig::default()).unwrap();
    let opts = TrainOptions {
        steps: 3500,
        batch_size: 16,
        learning_rate: 3e-4,
        eval_every: 250,
        eval_frames: 6,
        eval_sample_steps: 25,
        checkpoint_every: 250,
        ..Default::default()
    };
    let t0 = Instant::now();
    let out = train_dae(&mut dae, &ds, &opts, Some(Path::new("/root/scratch/dae_cal1"))).unwrap();
    println!(
        "trained {} steps in {:?}: final psnr {:.2} dB (baseline {:.2}), ssim {:.3}",
        out.steps_run, t0.elapsed(), out.final_heldout_psnr, out.baseline_psnr, out.final_heldout_ssim
    );
    for row in out.log.iter().filter(|r| r.heldout_psnr.is_some()) {
        println!(
            "  step {:>5} loss {:.4} psnr {:.2} ssim {:.3}",
            row.step, row.loss, row.heldout_psnr.unwrap(), row.heldout_ssim.unwrap()
        );
    }
}
