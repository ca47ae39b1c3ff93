//! Euler integration of the learned velocity field.
//!
//! Reconstruction starts from seeded Gaussian noise at `t = 1` and steps to
//! `t = 0` in uniform increments: `z ← z − (1/steps)·v(z, s, t)`. With the
//! exact constant field `v = ε − z₀` a single step lands on `z₀`, which is
//! the sanity oracle for the integrator.

use super::{patchify, unpatchify, Dae, LatentGrid, LatentState, VelocityField};
use crate::error::{Error, Result};
use crate::gripperworld::Observation;
use crate::tensor::{Real, Tape};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded standard-normal grid.
pub fn seeded_noise<T: Real>(shape: (usize, usize, usize), seed: u64) -> LatentGrid<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array3::zeros(shape);
    for v in data.iter_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *v = T::from_f64(g);
    }
    LatentGrid { data }
}

/// Integrate any velocity field from `t = 1` down to `t = 0`.
pub fn integrate<T: Real, F: VelocityField<T>>(
    field: &F,
    cond_tokens: &Array2<T>,
    init: LatentGrid<T>,
    steps: usize,
    patch: usize,
) -> Result<LatentGrid<T>> {
    if steps < 1 {
        return Err(Error::Domain("sampler needs at least one step".into()));
    }
    let (c, h, w) = init.shape();
    let dt = T::from_f64(1.0 / steps as f64);
    let mut z = init;
    for k in 0..steps {
        let t = T::from_f64(1.0 - k as f64 / steps as f64);
        let mut tape = Tape::new();
        let zp = tape.constant(patchify(&z, patch));
        let cond = tape.constant(cond_tokens.clone());
        let v = field.velocity(&mut tape, zp, cond, t);
        let v_grid = unpatchify(tape.value(v), patch, c, h, w);
        z = LatentGrid { data: &z.data - &(&v_grid.data * dt) };
    }
    Ok(z)
}

/// Decode a latent state into an image: seeded noise, Euler integration
/// conditioned on the state throughout, then the pixel mapping and a clip
/// to [0, 1]. Deterministic given `(state, steps, noise_seed)`.
pub fn reconstruct<T: Real>(
    dae: &Dae<T>,
    state: &LatentState,
    steps: usize,
    noise_seed: u64,
) -> Result<Observation> {
    let grid = reconstruct_grid(dae, state, steps, noise_seed)?;
    dae.latent_to_pixel(&grid)
}

/// [`reconstruct`] stopping at the latent grid.
pub fn reconstruct_grid<T: Real>(
    dae: &Dae<T>,
    state: &LatentState,
    steps: usize,
    noise_seed: u64,
) -> Result<LatentGrid<T>> {
    state.check_shape(
        dae.config.compressor.token_count,
        dae.config.compressor.token_dim,
    )?;
    let init = seeded_noise(dae.grid_shape(), noise_seed);
    let cond = state.tokens.mapv(T::from_f64);
    integrate(dae, &cond, init, steps, dae.config.decoder.patch_size)
}
