//! A deterministic synthetic 2-D manipulation environment.
//!
//! Scenes live in the unit square: a two-finger gripper, colored disk
//! objects, and a ring-shaped target marker. Scripted demonstrations for
//! four task families (reach / pick / pick-and-place / stack) produce image
//! trajectories with known ground-truth actions, which makes every learned
//! claim in this crate checkable against an oracle.
//!
//! Dynamics are intentionally simple: the gripper translates by a bounded
//! delta, the aperture opens/closes in [0, 1], a grasp latches when the
//! aperture crosses below [`GRASP_THRESHOLD`] while the gripper is inside
//! the nearest object, and a release fires when it crosses above
//! [`RELEASE_THRESHOLD`] (hysteresis avoids chattering). A held object
//! tracks the gripper exactly.

mod dataset;
mod render;
mod script;

pub use dataset::{
    generate_dataset, load_dataset, Dataset, DatasetConfig, DatasetManifest, StoredTrajectory,
    TaskMix,
};
pub use render::{gripper_bbox, render, RENDERER_VERSION};
pub use script::{script_trajectory, script_trajectory_with_info, ScriptInfo, TaskSpec};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Maximum translation per step on each axis.
pub const MAX_DELTA_XY: f64 = 0.05;
/// Aperture crossing below this (while inside the nearest object) grasps.
pub const GRASP_THRESHOLD: f64 = 0.3;
/// Aperture crossing above this releases.
pub const RELEASE_THRESHOLD: f64 = 0.7;
/// Radius of the goal ring marker, in unit coordinates.
pub const GOAL_MARKER_RADIUS: f64 = 0.045;

/// H×W×3 image with values in [0, 1], row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Observation {
    pub fn zeros(height: usize, width: usize) -> Self {
        Observation { height, width, data: vec![0.0; height * width * 3] }
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), height * width * 3);
        Observation {
            height,
            width,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// A disk in the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub center: (f64, f64),
    pub radius: f64,
    pub color_id: u8,
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub gripper_xy: (f64, f64),
    /// 0 = fully closed, 1 = fully open.
    pub aperture: f64,
    pub objects: Vec<SceneObject>,
    pub held_index: Option<usize>,
    pub goal_xy: (f64, f64),
}

impl SceneState {
    /// Index of the object nearest to the gripper, if any.
    pub fn nearest_object(&self) -> Option<usize> {
        let (gx, gy) = self.gripper_xy;
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let dx = o.center.0 - gx;
                let dy = o.center.1 - gy;
                (i, dx * dx + dy * dy)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    /// Check the structural invariants (coordinates in bounds, held object
    /// glued to the gripper).
    pub fn validate(&self) -> Result<()> {
        let inside = |p: (f64, f64)| (0.0..=1.0).contains(&p.0) && (0.0..=1.0).contains(&p.1);
        if !inside(self.gripper_xy) || !inside(self.goal_xy) {
            return Err(Error::Domain("state coordinates escaped the unit square".into()));
        }
        if !(0.0..=1.0).contains(&self.aperture) {
            return Err(Error::Domain("aperture escaped [0,1]".into()));
        }
        for o in &self.objects {
            if !inside(o.center) {
                return Err(Error::Domain("object escaped the unit square".into()));
            }
        }
        if let Some(i) = self.held_index {
            let o = self
                .objects
                .get(i)
                .ok_or_else(|| Error::Domain(format!("held_index {i} out of range")))?;
            if o.center != self.gripper_xy {
                return Err(Error::Domain("held object detached from gripper".into()));
            }
        }
        Ok(())
    }
}

/// Bounded delta action: translation plus aperture change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub d_aperture: f64,
}

impl Action {
    pub const ZERO: Action = Action { dx: 0.0, dy: 0.0, d_aperture: 0.0 };

    pub fn new(dx: f64, dy: f64, d_aperture: f64) -> Self {
        Action { dx, dy, d_aperture }
    }

    pub fn in_bounds(&self) -> bool {
        self.dx.abs() <= MAX_DELTA_XY
            && self.dy.abs() <= MAX_DELTA_XY
            && self.d_aperture.abs() <= 1.0
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.d_aperture]
    }
}

/// Side information from a step: which clamps fired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    /// The commanded action exceeded its bounds and was clamped.
    pub action_clamped: bool,
    /// The gripper hit the workspace boundary.
    pub position_clamped: bool,
}

impl StepFlags {
    pub fn any(&self) -> bool {
        self.action_clamped || self.position_clamped
    }
}

/// Advance the simulator by one action. Total function: out-of-range inputs
/// are clamped and reported through [`StepFlags`].
pub fn step_full(state: &SceneState, action: &Action) -> (SceneState, StepFlags) {
    let mut flags = StepFlags::default();

    let dx = action.dx.clamp(-MAX_DELTA_XY, MAX_DELTA_XY);
    let dy = action.dy.clamp(-MAX_DELTA_XY, MAX_DELTA_XY);
    let dap = action.d_aperture.clamp(-1.0, 1.0);
    if dx != action.dx || dy != action.dy || dap != action.d_aperture {
        flags.action_clamped = true;
    }

    let gx = (state.gripper_xy.0 + dx).clamp(0.0, 1.0);
    let gy = (state.gripper_xy.1 + dy).clamp(0.0, 1.0);
    if gx != state.gripper_xy.0 + dx || gy != state.gripper_xy.1 + dy {
        flags.position_clamped = true;
    }

    let prev_aperture = state.aperture;
    let aperture = (state.aperture + dap).clamp(0.0, 1.0);

    let mut next = SceneState {
        gripper_xy: (gx, gy),
        aperture,
        objects: state.objects.clone(),
        held_index: state.held_index,
        goal_xy: state.goal_xy,
    };

    // Held object tracks the gripper.
    if let Some(i) = next.held_index {
        next.objects[i].center = next.gripper_xy;
    }

    // Release: aperture crossed above the threshold.
    if next.held_index.is_some()
        && prev_aperture <= RELEASE_THRESHOLD
        && aperture > RELEASE_THRESHOLD
    {
        next.held_index = None;
    }

    // Grasp: aperture crossed below the threshold while inside the nearest object.
    if next.held_index.is_none() && prev_aperture >= GRASP_THRESHOLD && aperture < GRASP_THRESHOLD
    {
        if let Some(i) = next.nearest_object() {
            let o = next.objects[i];
            let ddx = o.center.0 - gx;
            let ddy = o.center.1 - gy;
            if ddx * ddx + ddy * ddy <= o.radius * o.radius {
                next.held_index = Some(i);
                next.objects[i].center = next.gripper_xy;
            }
        }
    }

    (next, flags)
}

/// [`step_full`] without the flag channel.
pub fn step(state: &SceneState, action: &Action) -> SceneState {
    step_full(state, action).0
}

/// A scripted or recorded episode.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<SceneState>,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    /// Per-action clamp flags (parallel to `actions`).
    pub clamped: Vec<bool>,
    pub instruction: String,
    pub task_id: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Replay `actions` from `states[0]` and check every stored state is
    /// reproduced within `tol` (gripper, aperture, object centers).
    pub fn replay_consistent(&self, tol: f64) -> bool {
        let mut cur = self.states[0].clone();
        for (i, a) in self.actions.iter().enumerate() {
            cur = step(&cur, a);
            let want = &self.states[i + 1];
            let close = |a: f64, b: f64| (a - b).abs() <= tol;
            if !close(cur.gripper_xy.0, want.gripper_xy.0)
                || !close(cur.gripper_xy.1, want.gripper_xy.1)
                || !close(cur.aperture, want.aperture)
                || cur.held_index != want.held_index
            {
                return false;
            }
            for (co, wo) in cur.objects.iter().zip(want.objects.iter()) {
                if !close(co.center.0, wo.center.0) || !close(co.center.1, wo.center.1) {
                    return false;
                }
            }
        }
        true
    }
}

/// Task families mirrored from tabletop manipulation suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Reach,
    Pick,
    PickPlace,
    Stack,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Reach,
        TaskKind::Pick,
        TaskKind::PickPlace,
        TaskKind::Stack,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::Pick => "pick",
            TaskKind::PickPlace => "pick_place",
            TaskKind::Stack => "stack",
        }
    }

    pub fn parse(s: &str) -> Result<TaskKind> {
        match s {
            "reach" => Ok(TaskKind::Reach),
            "pick" => Ok(TaskKind::Pick),
            "pick_place" => Ok(TaskKind::PickPlace),
            "stack" => Ok(TaskKind::Stack),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }

    /// Did this episode accomplish the task?
    pub fn success(&self, spec: &TaskSpec, state: &SceneState) -> bool {
        match self {
            TaskKind::Reach => {
                let d = dist(state.gripper_xy, state.goal_xy);
                d < 0.03
            }
            TaskKind::Pick => state.held_index == Some(spec.target_object),
            TaskKind::PickPlace => {
                let o = &state.objects[spec.target_object];
                state.held_index != Some(spec.target_object)
                    && dist(o.center, state.goal_xy) <= 1.5 * GOAL_MARKER_RADIUS
            }
            TaskKind::Stack => {
                let a = &state.objects[spec.target_object];
                let b = &state.objects[spec.base_object.expect("stack needs a base object")];
                state.held_index != Some(spec.target_object)
                    && dist(a.center, b.center) <= 1.5 * GOAL_MARKER_RADIUS
            }
        }
    }
}

pub(crate) fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}
