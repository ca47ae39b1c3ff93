//! Deterministic algebra on latent states.
//!
//! Motion is the elementwise difference of two states; applying, composing,
//! scaling, interpolating, and transferring motions are all pure token-space
//! operations. `(LatentMotion, compose)` behaves like a commutative group
//! with identity zero up to float tolerance.

use crate::dae::LatentState;
use crate::error::{Error, Result};
use ndarray::Array2;

/// The elementwise difference of two latent states; the emergent action.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMotion {
    pub delta: Array2<f64>,
}

impl LatentMotion {
    pub fn zeros(k: usize, d: usize) -> Self {
        LatentMotion { delta: Array2::zeros((k, d)) }
    }

    pub fn norm(&self) -> f64 {
        self.delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.delta.iter().cloned().collect()
    }
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `motion(s_t, s_next) = s_next − s_t`.
pub fn motion(s_t: &LatentState, s_next: &LatentState) -> Result<LatentMotion> {
    check_same_shape(&s_t.tokens, &s_next.tokens)?;
    Ok(LatentMotion { delta: &s_next.tokens - &s_t.tokens })
}

/// `s + m`.
pub fn apply_motion(s: &LatentState, m: &LatentMotion) -> Result<LatentState> {
    check_same_shape(&s.tokens, &m.delta)?;
    Ok(LatentState::new(&s.tokens + &m.delta))
}

/// `m1 + m2`.
pub fn compose(m1: &LatentMotion, m2: &LatentMotion) -> Result<LatentMotion> {
    check_same_shape(&m1.delta, &m2.delta)?;
    Ok(LatentMotion { delta: &m1.delta + &m2.delta })
}

pub fn negate(m: &LatentMotion) -> LatentMotion {
    LatentMotion { delta: m.delta.mapv(|v| -v) }
}

pub fn scale(m: &LatentMotion, factor: f64) -> LatentMotion {
    LatentMotion { delta: m.delta.mapv(|v| v * factor) }
}

/// Linear interpolation, computed as `s_a + α·(s_b − s_a)` so that
/// `lerp(a, b, α) == apply_motion(a, scale(motion(a, b), α))` bit-exactly.
pub fn lerp(s_a: &LatentState, s_b: &LatentState, alpha: f64) -> Result<LatentState> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha = {alpha} outside [0,1]")));
    }
    let m = motion(s_a, s_b)?;
    apply_motion(s_a, &scale(&m, alpha))
}

/// Cross-scene motion transfer: the motion from `s1` to `s2` applied to
/// `s3`, i.e. `s3 + (s2 − s1)`. Computed in that grouping so zero motion
/// (`s2 == s1`) returns `s3` bit-exactly.
pub fn transfer(s1: &LatentState, s2: &LatentState, s3: &LatentState) -> Result<LatentState> {
    check_same_shape(&s1.tokens, &s2.tokens)?;
    check_same_shape(&s1.tokens, &s3.tokens)?;
    let m = motion(s1, s2)?;
    apply_motion(s3, &m)
}
