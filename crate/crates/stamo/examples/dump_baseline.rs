// Temporary: mean-image baseline PSNR/SSIM on the calibration dataset.
use stamo::dae::{mean_image, split_trajectories};
use stamo::gripperworld::load_dataset;
use stamo::metrics;
use std::path::Path;

fn main() {
    let ds = load_dataset(Path::new("/root/scratch/ds_main")).unwrap();
    let (train_ids, held_ids) = split_trajectories(ds.trajectories.len(), 0.1);
    let mut train_frames = Vec::new();
    for &ti in &train_ids {
        let t = &ds.trajectories[ti];
        for i in 0..t.len() {
            train_frames.push(t.load_frame(i).unwrap());
        }
    }
    let refs: Vec<_> = train_frames.iter().collect();
    let mean = mean_image(&refs);
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for &ti in &held_ids {
        let t = &ds.trajectories[ti];
        for i in (0..t.len()).step_by(5) {
            let f = t.load_frame(i).unwrap();
            psnrs.push(metrics::psnr(&f, &mean).unwrap());
            ssims.push(metrics::ssim(&f, &mean).unwrap());
        }
    }
    let p = metrics::summarize(&psnrs);
    let s = metrics::summarize(&ssims);
    println!("baseline psnr mean {:.3} (min {:.2} max {:.2}) over {} frames", p.mean, p.min, p.max, p.n);
    println!("baseline ssim mean {:.3}", s.mean);
}
