// Temporary: inspect reconstructions from the calibration checkpoint.
use stamo::cli::run_from;
fn main() {
    // reuse the CLI reconstruct path
    let args = [
        "stamo", "reconstruct",
        "--checkpoint", "/root/scratch/dae_cal1",
        "--dataset", "/root/scratch/ds_main",
        "--steps", "50", "--n-images", "3",
        "--out", "/root/scratch/recon_probe",
    ];
    std::fs::remove_dir_all("/root/scratch/recon_probe").ok();
    run_from(args.iter().map(|s| s.to_string())).unwrap();
}
