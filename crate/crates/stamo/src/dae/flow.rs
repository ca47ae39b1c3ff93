//! Flow-matching objective: sample construction and the training loss.

use super::{patchify, Dae, FlowSample, LatentGrid, VelocityField};
use crate::error::{Error, Result};
use crate::gripperworld::Observation;
use crate::tensor::{Gradients, Real, Tape, TensorRef};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Per-sample randomness for one loss evaluation, drawn ahead of time so a
/// loss value can be re-evaluated exactly (finite-difference checks depend
/// on this).
#[derive(Debug, Clone)]
pub struct NoiseDraw<T: Real> {
    pub t: T,
    pub eps: LatentGrid<T>,
}

/// Draw `n` (t, ε) pairs. `t` is uniform on [0, 1]; when `stratified` is set
/// the batch uses shuffled stratified sampling (same uniform marginal, lower
/// variance of the batch loss).
pub fn sample_noise_draws<T: Real>(
    rng: &mut ChaCha8Rng,
    n: usize,
    grid_shape: (usize, usize, usize),
    stratified: bool,
) -> Vec<NoiseDraw<T>> {
    let mut strata: Vec<usize> = (0..n).collect();
    if stratified {
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
    }
    (0..n)
        .map(|i| {
            let t = if stratified {
                (strata[i] as f64 + rng.random_range(0.0..1.0)) / n as f64
            } else {
                rng.random_range(0.0..1.0)
            };
            let mut eps = Array3::zeros(grid_shape);
            for v in eps.iter_mut() {
                let g: f64 = StandardNormal.sample(rng);
                *v = T::from_f64(g);
            }
            NoiseDraw { t: T::from_f64(t), eps: LatentGrid { data: eps } }
        })
        .collect()
}

/// The linear interpolation path with σ_t = t: builds `z_t` and the target
/// velocity `u = ε − z₀`.
pub fn make_flow_sample<T: Real>(
    z0: LatentGrid<T>,
    eps: LatentGrid<T>,
    t: T,
) -> Result<FlowSample<T>> {
    if t < T::zero() || t > T::one() {
        return Err(Error::Domain(format!("t = {t} outside [0,1]")));
    }
    if z0.shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "z0 {:?} vs eps {:?}",
            z0.shape(),
            eps.shape()
        )));
    }
    let sigma_t = t;
    let one_minus = T::one() - sigma_t;
    let z_t = LatentGrid {
        data: &z0.data * one_minus + &eps.data * sigma_t,
    };
    let u = LatentGrid { data: &eps.data - &z0.data };
    Ok(FlowSample { z0, eps, t, sigma_t, z_t, u })
}

/// Velocity evaluation hook for the loss. The blanket impl routes to the
/// model; tests can substitute fields with direct access to the flow sample
/// (e.g. "return exactly `u`").
pub trait LossVelocity<T: Real>: Sync {
    fn sample_velocity(
        &self,
        tape: &mut Tape<T>,
        flow: &FlowSample<T>,
        z_patches: TensorRef,
        cond_tokens: TensorRef,
    ) -> TensorRef;
}

impl<T: Real, F: VelocityField<T> + Sync> LossVelocity<T> for F {
    fn sample_velocity(
        &self,
        tape: &mut Tape<T>,
        flow: &FlowSample<T>,
        z_patches: TensorRef,
        cond_tokens: TensorRef,
    ) -> TensorRef {
        self.velocity(tape, z_patches, cond_tokens, flow.t)
    }
}

fn per_sample<T: Real, F: LossVelocity<T>>(
    dae: &Dae<T>,
    field: &F,
    obs: &Observation,
    features: Option<&Array2<T>>,
    draw: &NoiseDraw<T>,
    want_grads: bool,
) -> Result<(f64, Option<Gradients<T>>)> {
    let z0 = dae.pixel_to_latent(obs)?;
    let flow = make_flow_sample(z0, draw.eps.clone(), draw.t)?;
    let p = dae.config.decoder.patch_size;

    let features = match features {
        Some(f) => f.clone(),
        None => dae.extract_features(obs)?,
    };

    let mut tape = Tape::new();
    let f = tape.constant(features);
    let tokens = dae.compress_on_tape(&mut tape, f);
    let zp = tape.constant(patchify(&flow.z_t, p));
    let pred = field.sample_velocity(&mut tape, &flow, zp, tokens);
    let loss = tape.mse_to(pred, patchify(&flow.u, p));
    let value = tape.scalar_value(loss).to_f64_();
    let grads = want_grads.then(|| tape.backward(loss));
    Ok((value, grads))
}

fn loss_impl<T: Real, F: LossVelocity<T>>(
    dae: &Dae<T>,
    field: &F,
    batch: &[&Observation],
    features: Option<&[Array2<T>]>,
    draws: &[NoiseDraw<T>],
    want_grads: bool,
) -> Result<(f64, Option<Gradients<T>>)> {
    if batch.is_empty() {
        return Err(Error::Domain("dae loss needs a non-empty batch".into()));
    }
    if batch.len() != draws.len() {
        return Err(Error::Domain(format!(
            "{} observations vs {} noise draws",
            batch.len(),
            draws.len()
        )));
    }
    let results: Vec<Result<(f64, Option<Gradients<T>>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, obs)| per_sample(dae, field, obs, features.map(|f| &f[i]), &draws[i], want_grads))
        .collect();

    let scale = T::from_f64(1.0 / batch.len() as f64);
    let mut total = 0.0;
    let mut merged: Option<Gradients<T>> = want_grads.then(Gradients::empty);
    for r in results {
        let (value, grads) = r?;
        total += value;
        if let (Some(acc), Some(mut g)) = (merged.as_mut(), grads) {
            g.scale(scale);
            acc.merge(g);
        }
    }
    Ok((total / batch.len() as f64, merged))
}

/// Mean flow-matching loss over a batch (no gradients).
pub fn dae_loss<T: Real, F: LossVelocity<T>>(
    dae: &Dae<T>,
    field: &F,
    batch: &[&Observation],
    draws: &[NoiseDraw<T>],
) -> Result<f64> {
    loss_impl(dae, field, batch, None, draws, false).map(|(v, _)| v)
}

/// Loss plus parameter gradients (compressor + decoder; the backbone is
/// frozen and detached).
pub fn dae_loss_with_grads<T: Real>(
    dae: &Dae<T>,
    batch: &[&Observation],
    features: Option<&[Array2<T>]>,
    draws: &[NoiseDraw<T>],
) -> Result<(f64, Gradients<T>)> {
    loss_impl(dae, dae, batch, features, draws, true)
        .map(|(v, g)| (v, g.expect("gradients requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae::{BackboneConfig, CompressorConfig, DaeConfig, DecoderConfig};
    use crate::gripperworld::{render, SceneObject, SceneState};
    use rand::SeedableRng;

    fn tiny_dae() -> Dae<f64> {
        Dae::new(DaeConfig {
            resolution: 32,
            backbone: BackboneConfig { width: 24, blocks: 1, heads: 2, patch_size: 8, ..Default::default() },
            compressor: CompressorConfig { blocks: 1, heads: 2, token_count: 2, token_dim: 12 },
            decoder: DecoderConfig {
                blocks: 1,
                heads: 2,
                width: 24,
                patch_size: 8,
                mlp_ratio: 2,
                ..Default::default()
            },
            ..Default::default()
        })
        .unwrap()
    }

    fn obs() -> Observation {
        let state = SceneState {
            gripper_xy: (0.4, 0.5),
            aperture: 0.6,
            objects: vec![SceneObject { center: (0.7, 0.3), radius: 0.06, color_id: 0 }],
            held_index: None,
            goal_xy: (0.2, 0.8),
        };
        render(&state, 32).unwrap()
    }

    /// Returns the exact target velocity plus a constant offset.
    struct OffsetField {
        offset: f64,
        patch: usize,
    }

    impl LossVelocity<f64> for OffsetField {
        fn sample_velocity(
            &self,
            tape: &mut Tape<f64>,
            flow: &FlowSample<f64>,
            _z: TensorRef,
            _cond: TensorRef,
        ) -> TensorRef {
            let u = patchify(&flow.u, self.patch);
            tape.constant(u.mapv(|v| v + self.offset))
        }
    }

    #[test]
    fn flow_sample_endpoints_and_midpoint() {
        let dae = tiny_dae();
        let x = obs();
        let z0 = dae.pixel_to_latent(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draw = &sample_noise_draws::<f64>(&mut rng, 1, z0.shape(), false)[0];

        let s0 = make_flow_sample(z0.clone(), draw.eps.clone(), 0.0).unwrap();
        assert_eq!(s0.z_t.data, s0.z0.data);
        let diff = (&s0.u.data - (&s0.eps.data - &s0.z0.data)).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert_eq!(diff, 0.0);

        let s1 = make_flow_sample(z0.clone(), draw.eps.clone(), 1.0).unwrap();
        assert_eq!(s1.z_t.data, s1.eps.data);

        let sh = make_flow_sample(z0.clone(), draw.eps.clone(), 0.5).unwrap();
        let mid = (&z0.data + &draw.eps.data) * 0.5;
        let err = (&sh.z_t.data - &mid).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn out_of_range_t_is_a_domain_error() {
        let dae = tiny_dae();
        let z0 = dae.pixel_to_latent(&obs()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draw = &sample_noise_draws::<f64>(&mut rng, 1, z0.shape(), false)[0];
        assert!(make_flow_sample(z0.clone(), draw.eps.clone(), 1.5).is_err());
        assert!(make_flow_sample(z0, draw.eps.clone(), -0.1).is_err());
    }

    #[test]
    fn perfect_prediction_gives_zero_loss() {
        let dae = tiny_dae();
        let x = obs();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = sample_noise_draws::<f64>(&mut rng, 3, dae.grid_shape(), false);
        let field = OffsetField { offset: 0.0, patch: dae.config.decoder.patch_size };
        let loss = dae_loss(&dae, &field, &[&x, &x, &x], &draws).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn constant_offset_gives_offset_squared() {
        let dae = tiny_dae();
        let x = obs();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = sample_noise_draws::<f64>(&mut rng, 2, dae.grid_shape(), false);
        let field = OffsetField { offset: 0.3, patch: dae.config.decoder.patch_size };
        let loss = dae_loss(&dae, &field, &[&x, &x], &draws).unwrap();
        assert!((loss - 0.09).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn empty_batch_is_a_domain_error() {
        let dae = tiny_dae();
        let draws: Vec<NoiseDraw<f64>> = Vec::new();
        assert!(dae_loss(&dae, &dae, &[], &draws).is_err());
    }

    #[test]
    fn gradients_match_finite_differences_on_a_tiny_model() {
        let dae = tiny_dae();
        let x = obs();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = sample_noise_draws::<f64>(&mut rng, 2, dae.grid_shape(), false);
        let batch = [&x, &x];

        let (_, grads) = dae_loss_with_grads(&dae, &batch, None, &draws).unwrap();

        // Re-evaluating with perturbed parameters must use the same draws.
        let mut dae = dae;
        let h = 1e-5;
        let mut checked = 0;
        let ids: Vec<_> = dae
            .store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, p)| (id, p.value.dim()))
            .collect();
        for (id, dim) in ids.iter().step_by(3) {
            let g = match grads.get(*id) {
                Some(g) => g.clone(),
                None => continue,
            };
            let probe = [(0usize, 0usize), (dim.0 / 2, dim.1 / 2)];
            for (r, c) in probe {
                let orig = dae.store.value(*id)[[r, c]];
                dae.store.value_mut(*id)[[r, c]] = orig + h;
                let up = dae_loss(&dae, &dae, &batch, &draws).unwrap();
                dae.store.value_mut(*id)[[r, c]] = orig - h;
                let down = dae_loss(&dae, &dae, &batch, &draws).unwrap();
                dae.store.value_mut(*id)[[r, c]] = orig;
                let num = (up - down) / (2.0 * h);
                let a = g[[r, c]];
                let denom = num.abs().max(a.abs()).max(1e-6);
                assert!(
                    (num - a).abs() / denom < 1e-4,
                    "param {id:?} ({r},{c}): numeric {num} vs analytic {a}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 10);
    }
}
