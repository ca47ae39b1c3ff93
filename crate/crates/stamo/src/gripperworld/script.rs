//! Closed-form scripted demonstrations.
//!
//! Every demonstration is a smooth constant-speed path through waypoints
//! with the aperture timeline overlapped onto the motion (the gripper never
//! parks: it closes while finishing its approach and opens while drifting
//! past the drop point). Sharp corners at intermediate waypoints are rounded
//! with a quadratic Bezier so per-step turning stays small; phase-boundary
//! waypoints (object center, drop target) are hit exactly.
//!
//! Everything is a pure function of `(task, seed)`.

use super::{
    dist, render, step_full, Action, SceneObject, SceneState, TaskKind, Trajectory,
};
use crate::error::{Error, Result};
use crate::gripperworld::render::COLOR_NAMES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAYOUT_ATTEMPTS: usize = 100;
/// Aperture after a grasp ramp.
const GRIP_CLOSED: f64 = 0.2;
/// Steps of aperture ramp when closing onto an object.
const GRASP_RAMP: usize = 5;
/// Steps of aperture ramp when opening at a drop point.
const RELEASE_RAMP: usize = 4;
/// Drift speed while releasing, so motion never stalls.
const RELEASE_DRIFT: f64 = 0.01;
/// Corner-rounding radius at pass-through waypoints.
const BLEND_RADIUS: f64 = 0.07;

/// A fully sampled task instance: initial scene plus script targets.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub seed: u64,
    pub initial: SceneState,
    pub target_object: usize,
    pub base_object: Option<usize>,
    pub speed: f64,
    pub instruction: String,
}

impl TaskSpec {
    /// Sample a feasible layout for `(task, seed)`; deterministic. Layouts
    /// that cannot be placed without overlap after 100 attempts are an
    /// error.
    pub fn sample(kind: TaskKind, seed: u64) -> Result<TaskSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15) ^ task_salt(kind));
        for _ in 0..LAYOUT_ATTEMPTS {
            if let Some(spec) = try_layout(kind, seed, &mut rng) {
                return Ok(spec);
            }
        }
        Err(Error::Dataset(format!(
            "could not place a feasible {} layout after {LAYOUT_ATTEMPTS} attempts (seed {seed})",
            kind.name()
        )))
    }
}

fn task_salt(kind: TaskKind) -> u64 {
    match kind {
        TaskKind::Reach => 0x52454143,
        TaskKind::Pick => 0x5049434b,
        TaskKind::PickPlace => 0x504c4143,
        TaskKind::Stack => 0x5354434b,
    }
}

fn try_layout(kind: TaskKind, seed: u64, rng: &mut ChaCha8Rng) -> Option<TaskSpec> {
    let margin = 0.12;
    let pt = |rng: &mut ChaCha8Rng| {
        (
            rng.random_range(margin..1.0 - margin),
            rng.random_range(margin..1.0 - margin),
        )
    };
    let start = pt(rng);
    let goal = pt(rng);
    let n_objects = match kind {
        TaskKind::Reach => 1,
        TaskKind::Pick | TaskKind::PickPlace => 1 + rng.random_range(0..2usize),
        TaskKind::Stack => 2 + rng.random_range(0..2usize),
    };

    let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
    let mut colors: Vec<u8> = (0..COLOR_NAMES.len() as u8).collect();
    for i in (1..colors.len()).rev() {
        colors.swap(i, rng.random_range(0..=i));
    }
    for i in 0..n_objects {
        let center = pt(rng);
        let radius = rng.random_range(0.04..0.07);
        objects.push(SceneObject { center, radius, color_id: colors[i] });
    }

    // separation constraints
    if dist(start, goal) < 0.25 {
        return None;
    }
    for (i, o) in objects.iter().enumerate() {
        if dist(o.center, start) < 0.22 || dist(o.center, goal) < 0.16 {
            return None;
        }
        for other in objects.iter().skip(i + 1) {
            if dist(o.center, other.center) < o.radius + other.radius + 0.05 {
                return None;
            }
        }
    }

    let target_object = 0usize;
    let base_object = match kind {
        TaskKind::Stack => Some(1usize),
        _ => None,
    };

    // Manipulation tasks approach the object from the side facing away from
    // the drop target, so transport continues straight through the grasp
    // point. Reject layouts that would force a hairpin turn at the
    // pre-grasp waypoint; human demonstrators do not produce those either.
    if kind != TaskKind::Reach {
        let drop = drop_point(kind, goal, &objects, base_object);
        let obj = objects[target_object].center;
        let u = unit(sub(drop, obj))?;
        let pregrasp = (obj.0 - 0.1 * u.0, obj.1 - 0.1 * u.1);
        if !(0.02..=0.98).contains(&pregrasp.0) || !(0.02..=0.98).contains(&pregrasp.1) {
            return None;
        }
        let leg_in = unit(sub(pregrasp, start))?;
        let leg_out = u;
        let cos_turn = leg_in.0 * leg_out.0 + leg_in.1 * leg_out.1;
        if cos_turn < -0.5 {
            return None; // turn sharper than 120 degrees
        }
        if dist(start, pregrasp) < 0.1 {
            return None;
        }
        // drift room past the drop point
        let drift_end = (
            drop.0 + u.0 * RELEASE_DRIFT * (RELEASE_RAMP + 1) as f64,
            drop.1 + u.1 * RELEASE_DRIFT * (RELEASE_RAMP + 1) as f64,
        );
        if !(0.02..=0.98).contains(&drift_end.0) || !(0.02..=0.98).contains(&drift_end.1) {
            return None;
        }
    }

    let color = COLOR_NAMES[objects[target_object].color_id as usize % COLOR_NAMES.len()];
    let instruction = match kind {
        TaskKind::Reach => "move the gripper to the ring marker".to_string(),
        TaskKind::Pick => format!("pick up the {color} disk"),
        TaskKind::PickPlace => format!("put the {color} disk on the ring marker"),
        TaskKind::Stack => {
            let base = &objects[base_object.unwrap()];
            let base_color = COLOR_NAMES[base.color_id as usize % COLOR_NAMES.len()];
            format!("stack the {color} disk on the {base_color} disk")
        }
    };

    Some(TaskSpec {
        kind,
        seed,
        initial: SceneState {
            gripper_xy: start,
            aperture: 1.0,
            objects,
            held_index: None,
            goal_xy: goal,
        },
        target_object,
        base_object,
        speed: rng.random_range(0.022..0.038),
        instruction,
    })
}

fn drop_point(
    kind: TaskKind,
    goal: (f64, f64),
    objects: &[SceneObject],
    base_object: Option<usize>,
) -> (f64, f64) {
    match kind {
        TaskKind::Stack => objects[base_object.unwrap()].center,
        TaskKind::Pick => goal, // carry heads toward the ring but stops early
        _ => goal,
    }
}

fn sub(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 - b.0, a.1 - b.1)
}

fn unit(v: (f64, f64)) -> Option<(f64, f64)> {
    let n = (v.0 * v.0 + v.1 * v.1).sqrt();
    if n < 1e-9 {
        None
    } else {
        Some((v.0 / n, v.1 / n))
    }
}

/// Script phases with the state index at which each ends.
#[derive(Debug, Clone)]
pub struct ScriptInfo {
    pub spec: TaskSpec,
    /// `(phase name, index of the state that closes the phase)`.
    pub phases: Vec<(&'static str, usize)>,
}

/// One leg of the motion plan.
struct Leg {
    to: (f64, f64),
    /// Pass-through waypoints get corner rounding; phase boundaries are hit
    /// exactly and recorded under this name.
    phase_end: Option<&'static str>,
    /// Per-leg speed override (the release drift is slower).
    speed: Option<f64>,
}

/// Sample straight legs at (at most) the leg speed per step; every leg
/// endpoint is an exact sample.
fn sample_path(
    start: (f64, f64),
    legs: &[Leg],
    base_speed: f64,
) -> (Vec<(f64, f64)>, Vec<(&'static str, usize)>) {
    // First expand pass-through corners into Bezier arcs.
    let mut points: Vec<((f64, f64), Option<&'static str>, f64)> = vec![(start, None, base_speed)];
    for (li, leg) in legs.iter().enumerate() {
        let speed = leg.speed.unwrap_or(base_speed);
        let from = points.last().unwrap().0;
        let is_corner = leg.phase_end.is_none() && li + 1 < legs.len();
        if is_corner {
            let next_target = legs[li + 1].to;
            let in_dir = unit(sub(leg.to, from));
            let out_dir = unit(sub(next_target, leg.to));
            if let (Some(din), Some(dout)) = (in_dir, out_dir) {
                let rho = BLEND_RADIUS
                    .min(dist(from, leg.to) / 2.0)
                    .min(dist(leg.to, next_target) / 2.0);
                let p_in = (leg.to.0 - din.0 * rho, leg.to.1 - din.1 * rho);
                let p_out = (leg.to.0 + dout.0 * rho, leg.to.1 + dout.1 * rho);
                points.push((p_in, None, speed));
                // quadratic Bezier p_in -> leg.to -> p_out
                let arc_steps = ((2.0 * rho) / speed).ceil().max(2.0) as usize;
                for s in 1..arc_steps {
                    let t = s as f64 / arc_steps as f64;
                    let a = 1.0 - t;
                    let x = a * a * p_in.0 + 2.0 * a * t * leg.to.0 + t * t * p_out.0;
                    let y = a * a * p_in.1 + 2.0 * a * t * leg.to.1 + t * t * p_out.1;
                    points.push(((x, y), None, speed));
                }
                points.push((p_out, None, speed));
                continue;
            }
        }
        points.push((leg.to, leg.phase_end, speed));
    }

    // Then walk the polyline at constant speed, keeping labeled points exact.
    let mut positions = vec![start];
    let mut phases = Vec::new();
    for win in 1..points.len() {
        let (to, label, speed) = points[win];
        let from = *positions.last().unwrap();
        let d = dist(from, to);
        if d > 1e-12 {
            let n = (d / speed).ceil().max(1.0) as usize;
            for i in 1..=n {
                let t = i as f64 / n as f64;
                positions.push((from.0 + (to.0 - from.0) * t, from.1 + (to.1 - from.1) * t));
            }
            // land exactly on the waypoint
            *positions.last_mut().unwrap() = to;
        }
        if let Some(name) = label {
            phases.push((name, positions.len() - 1));
        }
    }
    (positions, phases)
}

/// Generate a scripted demonstration; see [`script_trajectory_with_info`]
/// for the phase breakdown.
pub fn script_trajectory(kind: TaskKind, seed: u64, resolution: usize) -> Result<Trajectory> {
    script_trajectory_with_info(kind, seed, resolution).map(|(t, _)| t)
}

/// Generate a scripted demonstration along with phase boundaries.
pub fn script_trajectory_with_info(
    kind: TaskKind,
    seed: u64,
    resolution: usize,
) -> Result<(Trajectory, ScriptInfo)> {
    let spec = TaskSpec::sample(kind, seed)?;
    let start = spec.initial.gripper_xy;
    let goal = spec.initial.goal_xy;
    let objects = &spec.initial.objects;
    let obj = objects[spec.target_object].center;

    let mut legs: Vec<Leg> = Vec::new();
    match kind {
        TaskKind::Reach => {
            legs.push(Leg { to: goal, phase_end: Some("approach"), speed: None });
        }
        TaskKind::Pick | TaskKind::PickPlace | TaskKind::Stack => {
            let drop = drop_point(kind, goal, objects, spec.base_object);
            let u = unit(sub(drop, obj)).expect("layout guarantees separation");
            let pregrasp = (obj.0 - 0.1 * u.0, obj.1 - 0.1 * u.1);
            legs.push(Leg { to: pregrasp, phase_end: None, speed: None });
            legs.push(Leg { to: obj, phase_end: Some("approach"), speed: None });
            match kind {
                TaskKind::Pick => {
                    // carry a little toward the ring, ending while held
                    let carry = (obj.0 + 0.12 * u.0, obj.1 + 0.12 * u.1);
                    legs.push(Leg { to: carry, phase_end: Some("carry"), speed: None });
                }
                _ => {
                    legs.push(Leg { to: drop, phase_end: Some("transport"), speed: None });
                    let drift = (
                        drop.0 + u.0 * RELEASE_DRIFT * RELEASE_RAMP as f64,
                        drop.1 + u.1 * RELEASE_DRIFT * RELEASE_RAMP as f64,
                    );
                    legs.push(Leg {
                        to: drift,
                        phase_end: Some("release"),
                        speed: Some(RELEASE_DRIFT),
                    });
                }
            }
        }
    }

    // Keep demonstrations between 20 and 80 frames regardless of layout by
    // adapting the sampled speed to the plan length.
    let mut plan_len = 0.0;
    let mut prev = start;
    for leg in legs.iter().filter(|l| l.speed.is_none()) {
        plan_len += dist(prev, leg.to);
        prev = leg.to;
    }
    let speed = spec.speed.clamp(plan_len / 70.0, plan_len / 22.0).min(0.045);

    let (positions, mut phases) = sample_path(start, &legs, speed);
    let n_states = positions.len();

    // Aperture timeline.
    let mut apertures = vec![1.0f64; n_states];
    if kind != TaskKind::Reach {
        let arrival = phases
            .iter()
            .find(|(name, _)| *name == "approach")
            .map(|(_, i)| *i)
            .expect("approach phase exists");
        assert!(arrival >= GRASP_RAMP, "approach leg shorter than the grasp ramp");
        // close onto the object over the last GRASP_RAMP moving steps
        for (j, ap) in apertures.iter_mut().enumerate().skip(arrival - GRASP_RAMP + 1) {
            if j <= arrival {
                let k = j - (arrival - GRASP_RAMP);
                *ap = 1.0 - (1.0 - GRIP_CLOSED) * k as f64 / GRASP_RAMP as f64;
            } else {
                *ap = GRIP_CLOSED;
            }
        }
        for ap in apertures.iter_mut().skip(arrival + 1) {
            *ap = GRIP_CLOSED;
        }
        if matches!(kind, TaskKind::PickPlace | TaskKind::Stack) {
            let drop_idx = phases
                .iter()
                .find(|(name, _)| *name == "transport")
                .map(|(_, i)| *i)
                .expect("transport phase exists");
            // open while drifting past the drop point
            for j in (drop_idx + 1)..n_states {
                let k = (j - drop_idx).min(RELEASE_RAMP);
                apertures[j] = GRIP_CLOSED + (1.0 - GRIP_CLOSED) * k as f64 / RELEASE_RAMP as f64;
            }
        }
    }

    // Assemble actions and roll the simulator.
    let mut actions = Vec::with_capacity(n_states - 1);
    for i in 0..n_states - 1 {
        actions.push(Action {
            dx: positions[i + 1].0 - positions[i].0,
            dy: positions[i + 1].1 - positions[i].1,
            d_aperture: apertures[i + 1] - apertures[i],
        });
    }

    let mut states = vec![spec.initial.clone()];
    let mut clamped = Vec::with_capacity(actions.len());
    for a in &actions {
        let (next, flags) = step_full(states.last().unwrap(), a);
        clamped.push(flags.any());
        states.push(next);
    }

    let observations = states
        .iter()
        .map(|s| render(s, resolution))
        .collect::<Result<Vec<_>>>()?;

    // Scripts must satisfy their own task predicate.
    let final_state = states.last().unwrap();
    debug_assert!(
        kind.success(&spec, final_state),
        "script for {} (seed {seed}) failed its own task",
        kind.name()
    );

    if phases.last().map(|(_, i)| *i) != Some(n_states - 1) {
        phases.push(("tail", n_states - 1));
    }

    let traj = Trajectory {
        states,
        observations,
        actions,
        clamped,
        instruction: spec.instruction.clone(),
        task_id: format!("{}_{seed}", kind.name()),
    };
    Ok((traj, ScriptInfo { spec, phases }))
}
