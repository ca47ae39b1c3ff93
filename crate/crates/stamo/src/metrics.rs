//! Image-quality metrics (PSNR, SSIM) and summary statistics.
//!
//! Both metrics operate on `[H × W × 3]` images with values in [0, 1] and a
//! dynamic range of 1.0. SSIM uses the original convention: 11×11 Gaussian
//! window with σ = 1.5, stability constants k1 = 0.01 / k2 = 0.03, computed
//! per channel over valid window positions and averaged.

use crate::error::{Error, Result};
use crate::gripperworld::Observation;
use serde::{Deserialize, Serialize};

/// PSNR in dB is capped here so identical images stay finite and sortable.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn check_pair(reference: &Observation, candidate: &Observation) -> Result<()> {
    if reference.height() != candidate.height() || reference.width() != candidate.width() {
        return Err(Error::Shape(format!(
            "image pair {}x{} vs {}x{}",
            reference.height(),
            reference.width(),
            candidate.height(),
            candidate.width()
        )));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn mse(reference: &Observation, candidate: &Observation) -> Result<f64> {
    check_pair(reference, candidate)?;
    let a = reference.pixels();
    let b = candidate.pixels();
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB with peak value 1.0, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(reference: &Observation, candidate: &Observation) -> Result<f64> {
    let e = mse(reference, candidate)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * e.log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Structural similarity, mean over valid 11×11 windows and channels.
pub fn ssim(reference: &Observation, candidate: &Observation) -> Result<f64> {
    check_pair(reference, candidate)?;
    let (h, w) = (reference.height(), reference.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Domain(format!(
            "ssim needs min dimension >= {SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let kernel = gaussian_kernel();
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);

    // Separable Gaussian filter per channel, valid positions only.
    let filter = |img: &Observation, ch: usize| -> Vec<Vec<f64>> {
        // horizontal pass
        let mut tmp = vec![vec![0.0f64; w - SSIM_WINDOW + 1]; h];
        for y in 0..h {
            for x in 0..=(w - SSIM_WINDOW) {
                let mut acc = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    acc += kv * img.get(y, x + i, ch) as f64;
                }
                tmp[y][x] = acc;
            }
        }
        // vertical pass
        let mut out = vec![vec![0.0f64; w - SSIM_WINDOW + 1]; h - SSIM_WINDOW + 1];
        for y in 0..=(h - SSIM_WINDOW) {
            for x in 0..tmp[0].len() {
                let mut acc = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    acc += kv * tmp[y + i][x];
                }
                out[y][x] = acc;
            }
        }
        out
    };

    let product = |a: &Observation, b: &Observation, ch: usize| -> Observation {
        let mut out = Observation::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                // stash the product in channel `ch` of a scratch image
                out.set(y, x, ch, a.get(y, x, ch) * b.get(y, x, ch));
            }
        }
        out
    };

    let mut total = 0.0;
    for ch in 0..3 {
        let mu_a = filter(reference, ch);
        let mu_b = filter(candidate, ch);
        let aa = filter(&product(reference, reference, ch), ch);
        let bb = filter(&product(candidate, candidate, ch), ch);
        let ab = filter(&product(reference, candidate, ch), ch);

        let rows = mu_a.len();
        let cols = mu_a[0].len();
        let mut acc = 0.0;
        for y in 0..rows {
            for x in 0..cols {
                let ma = mu_a[y][x];
                let mb = mu_b[y][x];
                let va = aa[y][x] - ma * ma;
                let vb = bb[y][x] - mb * mb;
                let cov = ab[y][x] - ma * mb;
                let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                acc += num / den;
            }
        }
        total += acc / (rows * cols) as f64;
    }
    Ok(total / 3.0)
}

/// Basic summary of a sample of values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary { mean: f64::NAN, std: f64::NAN, min: f64::NAN, max: f64::NAN, n: 0 };
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Summary {
        mean,
        std: var.sqrt(),
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        n,
    }
}
