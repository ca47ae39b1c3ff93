//! Integer rasterization of scene states.
//!
//! No anti-aliasing: every pixel is decided by exact geometric tests on its
//! center, so identical states produce bit-identical images on every
//! platform. Colors are specified as u8 triples and converted to floats once,
//! which keeps the PNG round-trip lossless.

use super::{Observation, SceneState, GOAL_MARKER_RADIUS};
use crate::error::{Error, Result};

/// Bump this when any rendering rule changes; datasets record it.
pub const RENDERER_VERSION: &str = "gw-render-1";

pub const SUPPORTED_RESOLUTIONS: [usize; 3] = [32, 64, 128];

const BACKGROUND: [u8; 3] = [212, 212, 216];
const GOAL_COLOR: [u8; 3] = [60, 60, 60];
const GRIPPER_COLOR: [u8; 3] = [20, 24, 46];

/// Object palette, indexed by `color_id % len`.
pub const OBJECT_PALETTE: [[u8; 3]; 6] = [
    [204, 42, 42],  // red
    [42, 142, 42],  // green
    [48, 72, 208],  // blue
    [222, 188, 32], // yellow
    [150, 48, 190], // purple
    [235, 126, 32], // orange
];

pub const COLOR_NAMES: [&str; 6] = ["red", "green", "blue", "yellow", "purple", "orange"];

// Gripper glyph geometry in unit coordinates.
const FINGER_WIDTH: f64 = 0.016;
const FINGER_HEIGHT: f64 = 0.085;
const CROSSBAR_HEIGHT: f64 = 0.018;
const GAP_MIN: f64 = 0.012;
const GAP_RANGE: f64 = 0.058;

const GOAL_RING_INNER: f64 = 0.026;

struct Glyph {
    x0: f64,
    x1: f64,
    y_top: f64,
    y_mid: f64,
    y_bot: f64,
    gap_half: f64,
}

fn glyph(state: &SceneState) -> Glyph {
    let (gx, gy) = state.gripper_xy;
    let gap_half = (GAP_MIN + GAP_RANGE * state.aperture) / 2.0;
    Glyph {
        x0: gx - gap_half - FINGER_WIDTH,
        x1: gx + gap_half + FINGER_WIDTH,
        y_top: gy - FINGER_HEIGHT / 2.0 - CROSSBAR_HEIGHT,
        y_mid: gy - FINGER_HEIGHT / 2.0,
        y_bot: gy + FINGER_HEIGHT / 2.0,
        gap_half,
    }
}

impl Glyph {
    fn contains(&self, u: f64, v: f64, gx: f64) -> bool {
        if u < self.x0 || u > self.x1 || v < self.y_top || v > self.y_bot {
            return false;
        }
        if v <= self.y_mid {
            return true; // crossbar spans the full width
        }
        // fingers: inside the outer envelope but outside the gap
        (u - gx).abs() >= self.gap_half
    }
}

/// Pixel bounding box `(x_min, y_min, x_max, y_max)` (inclusive) of the
/// gripper glyph at a given resolution, clipped to the image.
pub fn gripper_bbox(state: &SceneState, resolution: usize) -> (usize, usize, usize, usize) {
    let g = glyph(state);
    let res = resolution as f64;
    let clamp = |v: f64| (v.max(0.0) as usize).min(resolution - 1);
    (
        clamp((g.x0 * res).floor()),
        clamp((g.y_top * res).floor()),
        clamp((g.x1 * res).ceil()),
        clamp((g.y_bot * res).ceil()),
    )
}

/// Rasterize a state. Draw priority: gripper > objects > goal marker >
/// background, evaluated per pixel.
pub fn render(state: &SceneState, resolution: usize) -> Result<Observation> {
    if !SUPPORTED_RESOLUTIONS.contains(&resolution) {
        return Err(Error::Config(format!(
            "unsupported resolution {resolution}; expected one of {SUPPORTED_RESOLUTIONS:?}"
        )));
    }
    let res = resolution as f64;
    let g = glyph(state);
    let (gx, _) = state.gripper_xy;
    let (tx, ty) = state.goal_xy;

    let mut bytes = vec![0u8; resolution * resolution * 3];
    for py in 0..resolution {
        let v = (py as f64 + 0.5) / res;
        for px in 0..resolution {
            let u = (px as f64 + 0.5) / res;

            let color: [u8; 3] = if g.contains(u, v, gx) {
                GRIPPER_COLOR
            } else if let Some(obj) = state.objects.iter().rev().find(|o| {
                let dx = u - o.center.0;
                let dy = v - o.center.1;
                dx * dx + dy * dy <= o.radius * o.radius
            }) {
                OBJECT_PALETTE[obj.color_id as usize % OBJECT_PALETTE.len()]
            } else {
                let dx = u - tx;
                let dy = v - ty;
                let d2 = dx * dx + dy * dy;
                if d2 <= GOAL_MARKER_RADIUS * GOAL_MARKER_RADIUS
                    && d2 >= GOAL_RING_INNER * GOAL_RING_INNER
                {
                    GOAL_COLOR
                } else {
                    BACKGROUND
                }
            };

            let base = (py * resolution + px) * 3;
            bytes[base] = color[0];
            bytes[base + 1] = color[1];
            bytes[base + 2] = color[2];
        }
    }
    Ok(Observation::from_u8(resolution, resolution, &bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gripperworld::SceneObject;

    fn state() -> SceneState {
        SceneState {
            gripper_xy: (0.4, 0.35),
            aperture: 0.8,
            objects: vec![
                SceneObject { center: (0.7, 0.6), radius: 0.06, color_id: 0 },
                SceneObject { center: (0.25, 0.75), radius: 0.05, color_id: 2 },
            ],
            held_index: None,
            goal_xy: (0.85, 0.2),
        }
    }

    #[test]
    fn render_is_deterministic() {
        let s = state();
        let a = render(&s, 64).unwrap();
        let b = render(&s, 64).unwrap();
        assert_eq!(a.to_u8(), b.to_u8());
    }

    #[test]
    fn unsupported_resolution_is_a_config_error() {
        assert!(render(&state(), 77).is_err());
    }

    #[test]
    fn aperture_change_stays_inside_glyph_bbox() {
        let s1 = state();
        let mut s2 = state();
        s2.aperture = 0.1;
        let a = render(&s1, 64).unwrap();
        let b = render(&s2, 64).unwrap();
        let (ax0, ay0, ax1, ay1) = gripper_bbox(&s1, 64);
        let (bx0, by0, bx1, by1) = gripper_bbox(&s2, 64);
        let bbox = (ax0.min(bx0), ay0.min(by0), ax1.max(bx1), ay1.max(by1));

        let mut differs_outside = false;
        let mut differs_inside = false;
        for y in 0..64 {
            for x in 0..64 {
                let diff = (0..3).any(|c| a.get(y, x, c) != b.get(y, x, c));
                if diff {
                    let inside = x >= bbox.0 && x <= bbox.2 && y >= bbox.1 && y <= bbox.3;
                    if inside {
                        differs_inside = true;
                    } else {
                        differs_outside = true;
                    }
                }
            }
        }
        assert!(differs_inside, "aperture change should be visible");
        assert!(!differs_outside, "differences must stay inside the glyph bbox");
    }

    #[test]
    fn empty_scene_has_background_gripper_and_goal_only() {
        let mut s = state();
        s.objects.clear();
        let img = render(&s, 64).unwrap();
        // every pixel must be one of the three remaining colors
        let allowed = [BACKGROUND, GOAL_COLOR, GRIPPER_COLOR];
        for y in 0..64 {
            for x in 0..64 {
                let px = [
                    (img.get(y, x, 0) * 255.0).round() as u8,
                    (img.get(y, x, 1) * 255.0).round() as u8,
                    (img.get(y, x, 2) * 255.0).round() as u8,
                ];
                assert!(allowed.contains(&px), "unexpected color {px:?} at ({x},{y})");
            }
        }
    }

    #[test]
    fn every_supported_resolution_renders() {
        for res in SUPPORTED_RESOLUTIONS {
            let img = render(&state(), res).unwrap();
            assert_eq!(img.height(), res);
            assert_eq!(img.width(), res);
        }
    }
}
