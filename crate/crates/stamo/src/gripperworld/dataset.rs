//! On-disk trajectory datasets.
//!
//! Layout:
//!
//! ```text
//! <root>/
//!   manifest.json            # config snapshot + hash, seed, renderer version, counts
//!   traj_<id>/
//!     frames/<step:04>.png
//!     actions.csv            # step,dx,dy,d_aperture,clamped
//!     states.csv             # full scene state per step
//!     meta.json              # task, instruction, seed
//! ```
//!
//! Generation is a pure function of the config: rerunning with the same
//! config produces byte-identical files. Trajectories are generated in
//! parallel (each one is independent) and written to disk in index order.

use super::{
    script_trajectory_with_info, Action, SceneObject, SceneState, TaskKind, Trajectory,
    RENDERER_VERSION,
};
use crate::error::{Error, Result};
use crate::imageio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Share of trajectories per task family.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TaskMix {
    pub reach: u32,
    pub pick: u32,
    pub pick_place: u32,
    pub stack: u32,
}

impl Default for TaskMix {
    fn default() -> Self {
        TaskMix { reach: 1, pick: 1, pick_place: 1, stack: 1 }
    }
}

impl TaskMix {
    pub fn weights(&self) -> [(TaskKind, u32); 4] {
        [
            (TaskKind::Reach, self.reach),
            (TaskKind::Pick, self.pick),
            (TaskKind::PickPlace, self.pick_place),
            (TaskKind::Stack, self.stack),
        ]
    }

    pub fn only(kind: TaskKind) -> TaskMix {
        let mut mix = TaskMix { reach: 0, pick: 0, pick_place: 0, stack: 0 };
        match kind {
            TaskKind::Reach => mix.reach = 1,
            TaskKind::Pick => mix.pick = 1,
            TaskKind::PickPlace => mix.pick_place = 1,
            TaskKind::Stack => mix.stack = 1,
        }
        mix
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub task_mix: TaskMix,
    pub n_trajectories: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            task_mix: TaskMix::default(),
            n_trajectories: 64,
            resolution: 64,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    /// FNV-1a over the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }

    /// Task of the i-th trajectory: tasks cycle according to mix weights.
    pub fn task_for_index(&self, index: usize) -> TaskKind {
        let weights = self.task_mix.weights();
        let total: u32 = weights.iter().map(|(_, w)| w).sum();
        assert!(total > 0, "task mix must have at least one nonzero weight");
        let slot = (index as u32) % total;
        let mut acc = 0;
        for (kind, w) in weights {
            acc += w;
            if slot < acc {
                return kind;
            }
        }
        unreachable!()
    }

    pub fn trajectory_seed(&self, index: usize) -> u64 {
        self.seed
            .wrapping_mul(0x100000001b3)
            .wrapping_add(index as u64)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub config_hash: String,
    pub seed: u64,
    pub renderer_version: String,
    pub n_trajectories: usize,
    pub n_frames: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrajMeta {
    task: String,
    instruction: String,
    seed: u64,
}

/// Generate and persist a dataset. Refuses to write into an existing
/// non-empty directory unless `overwrite` is set.
pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path, overwrite: bool) -> Result<DatasetManifest> {
    if out_dir.exists() {
        let non_empty = fs::read_dir(out_dir)
            .map_err(|e| Error::io(out_dir.display().to_string(), e))?
            .next()
            .is_some();
        if non_empty {
            if !overwrite {
                return Err(Error::Dataset(format!(
                    "output directory {} is not empty; pass overwrite to replace it",
                    out_dir.display()
                )));
            }
            fs::remove_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let trajs: Vec<(Trajectory, TaskKind, u64)> = (0..config.n_trajectories)
        .into_par_iter()
        .map(|i| {
            let kind = config.task_for_index(i);
            let seed = config.trajectory_seed(i);
            script_trajectory_with_info(kind, seed, config.resolution)
                .map(|(t, _)| (t, kind, seed))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut n_frames = 0;
    for (i, (traj, kind, seed)) in trajs.iter().enumerate() {
        let dir = out_dir.join(format!("traj_{i:05}"));
        let frames = dir.join("frames");
        fs::create_dir_all(&frames).map_err(|e| Error::io(frames.display().to_string(), e))?;

        for (s, obs) in traj.observations.iter().enumerate() {
            imageio::save_png(&frames.join(format!("{s:04}.png")), obs)?;
        }
        write_actions_csv(&dir.join("actions.csv"), &traj.actions, &traj.clamped)?;
        write_states_csv(&dir.join("states.csv"), &traj.states)?;
        let meta = TrajMeta {
            task: kind.name().to_string(),
            instruction: traj.instruction.clone(),
            seed: *seed,
        };
        write_json(&dir.join("meta.json"), &meta)?;
        n_frames += traj.observations.len();
    }

    let manifest = DatasetManifest {
        config: config.clone(),
        config_hash: config.content_hash(),
        seed: config.seed,
        renderer_version: RENDERER_VERSION.to_string(),
        n_trajectories: config.n_trajectories,
        n_frames,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn fmt_f(v: f64) -> String {
    // shortest representation that parses back to the same f64
    format!("{v}")
}

fn write_actions_csv(path: &Path, actions: &[Action], clamped: &[bool]) -> Result<()> {
    let mut out = String::from("step,dx,dy,d_aperture,clamped\n");
    for (i, (a, c)) in actions.iter().zip(clamped.iter()).enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{}\n",
            fmt_f(a.dx),
            fmt_f(a.dy),
            fmt_f(a.d_aperture),
            if *c { 1 } else { 0 }
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_states_csv(path: &Path, states: &[SceneState]) -> Result<()> {
    let n_objects = states.first().map(|s| s.objects.len()).unwrap_or(0);
    let mut header = String::from("step,gripper_x,gripper_y,aperture,held_index,goal_x,goal_y");
    for i in 0..n_objects {
        header.push_str(&format!(",obj{i}_x,obj{i}_y,obj{i}_radius,obj{i}_color"));
    }
    header.push('\n');
    let mut out = header;
    for (i, s) in states.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{},{}",
            fmt_f(s.gripper_xy.0),
            fmt_f(s.gripper_xy.1),
            fmt_f(s.aperture),
            s.held_index.map(|h| h as i64).unwrap_or(-1),
            fmt_f(s.goal_xy.0),
            fmt_f(s.goal_xy.1),
        ));
        for o in &s.objects {
            out.push_str(&format!(
                ",{},{},{},{}",
                fmt_f(o.center.0),
                fmt_f(o.center.1),
                fmt_f(o.radius),
                o.color_id
            ));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// A trajectory loaded back from disk.
#[derive(Debug, Clone)]
pub struct StoredTrajectory {
    pub task: TaskKind,
    pub instruction: String,
    pub seed: u64,
    pub states: Vec<SceneState>,
    pub actions: Vec<Action>,
    pub clamped: Vec<bool>,
    pub frame_paths: Vec<PathBuf>,
}

impl StoredTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn load_frame(&self, index: usize) -> Result<super::Observation> {
        imageio::load_png(&self.frame_paths[index])
    }
}

/// An opened dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub trajectories: Vec<StoredTrajectory>,
}

impl Dataset {
    pub fn n_frames(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;

    let mut trajectories = Vec::with_capacity(manifest.n_trajectories);
    for i in 0..manifest.n_trajectories {
        let dir = root.join(format!("traj_{i:05}"));
        let meta_text = fs::read_to_string(dir.join("meta.json"))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        let meta: TrajMeta = serde_json::from_str(&meta_text)?;
        let states = read_states_csv(&dir.join("states.csv"))?;
        let (actions, clamped) = read_actions_csv(&dir.join("actions.csv"))?;
        if actions.len() + 1 != states.len() {
            return Err(Error::Dataset(format!(
                "trajectory {i}: {} actions vs {} states",
                actions.len(),
                states.len()
            )));
        }
        let frame_paths: Vec<PathBuf> = (0..states.len())
            .map(|s| dir.join("frames").join(format!("{s:04}.png")))
            .collect();
        trajectories.push(StoredTrajectory {
            task: TaskKind::parse(&meta.task)?,
            instruction: meta.instruction,
            seed: meta.seed,
            states,
            actions,
            clamped,
            frame_paths,
        });
    }
    Ok(Dataset { root: root.to_path_buf(), manifest, trajectories })
}

fn parse_f(field: &str, path: &Path) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|e| Error::Dataset(format!("{}: bad float '{field}': {e}", path.display())))
}

fn read_actions_csv(path: &Path) -> Result<(Vec<Action>, Vec<bool>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut actions = Vec::new();
    let mut clamped = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Dataset(format!("{}: bad row '{line}'", path.display())));
        }
        actions.push(Action {
            dx: parse_f(fields[1], path)?,
            dy: parse_f(fields[2], path)?,
            d_aperture: parse_f(fields[3], path)?,
        });
        clamped.push(fields[4] == "1");
    }
    Ok((actions, clamped))
}

fn read_states_csv(path: &Path) -> Result<Vec<SceneState>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Dataset(format!("{}: empty", path.display())))?;
    let n_objects = header.split(',').filter(|f| f.ends_with("_x") && f.starts_with("obj")).count();

    let mut states = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 + 4 * n_objects {
            return Err(Error::Dataset(format!("{}: bad row '{line}'", path.display())));
        }
        let held: i64 = fields[4]
            .parse()
            .map_err(|e| Error::Dataset(format!("{}: bad held_index: {e}", path.display())))?;
        let mut objects = Vec::with_capacity(n_objects);
        for o in 0..n_objects {
            let base = 7 + 4 * o;
            objects.push(SceneObject {
                center: (parse_f(fields[base], path)?, parse_f(fields[base + 1], path)?),
                radius: parse_f(fields[base + 2], path)?,
                color_id: fields[base + 3].parse().map_err(|e| {
                    Error::Dataset(format!("{}: bad color: {e}", path.display()))
                })?,
            });
        }
        states.push(SceneState {
            gripper_xy: (parse_f(fields[1], path)?, parse_f(fields[2], path)?),
            aperture: parse_f(fields[3], path)?,
            objects,
            held_index: if held < 0 { None } else { Some(held as usize) },
            goal_xy: (parse_f(fields[5], path)?, parse_f(fields[6], path)?),
        });
    }
    Ok(states)
}
