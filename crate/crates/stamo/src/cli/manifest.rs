//! Run-directory manifests.
//!
//! Every command records what it ran, with which config and seeds, a content
//! hash of its inputs, and the complete list of files it produced. A run
//! directory validates iff every listed output exists.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// FNV-1a over the bytes of every input file, in argument order.
    pub input_hash: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// Paths relative to the run directory, sorted.
    pub outputs: Vec<String>,
}

fn fnv1a(h: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *h = (*h ^ b as u64).wrapping_mul(0x100000001b3);
    }
}

/// Content hash over a list of input files (directories hash their
/// manifest/index files rather than every blob).
pub fn hash_inputs(paths: &[PathBuf]) -> Result<String> {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in paths {
        fnv1a(&mut h, p.display().to_string().as_bytes());
        let file = if p.is_dir() {
            ["manifest.json", "index.json", "config.json"]
                .iter()
                .map(|n| p.join(n))
                .find(|c| c.exists())
        } else {
            Some(p.clone())
        };
        if let Some(f) = file {
            let bytes = std::fs::read(&f).map_err(|e| Error::io(f.display().to_string(), e))?;
            fnv1a(&mut h, &bytes);
        }
    }
    Ok(format!("{h:016x}"))
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Deterministic run id from the command identity (not the wall clock).
pub fn run_id(command: &str, args: &[String], config: &serde_json::Value, seeds: &[u64]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    fnv1a(&mut h, command.as_bytes());
    for a in args {
        fnv1a(&mut h, a.as_bytes());
    }
    fnv1a(&mut h, config.to_string().as_bytes());
    for s in seeds {
        fnv1a(&mut h, &s.to_le_bytes());
    }
    format!("{command}-{h:012x}")
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(dir: &Path) -> Result<RunManifest> {
        let path = dir.join(MANIFEST_NAME);
        let text =
            std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every declared output must exist.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        for o in &self.outputs {
            if !dir.join(o).exists() {
                return Err(Error::Domain(format!(
                    "manifest lists missing output '{o}' in {}",
                    dir.display()
                )));
            }
        }
        Ok(())
    }
}

/// Collects output paths while a command runs, then finalizes the manifest.
pub struct RunRecorder {
    pub dir: PathBuf,
    command: String,
    args: Vec<String>,
    config: serde_json::Value,
    seeds: Vec<u64>,
    input_hash: String,
    started: u64,
    outputs: Vec<String>,
}

impl RunRecorder {
    pub fn begin(
        dir: PathBuf,
        command: &str,
        args: Vec<String>,
        config: serde_json::Value,
        seeds: Vec<u64>,
        inputs: &[PathBuf],
    ) -> Result<RunRecorder> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(RunRecorder {
            dir,
            command: command.to_string(),
            args,
            config,
            seeds,
            input_hash: hash_inputs(inputs)?,
            started: now_ms(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Register a produced file (path relative to the run dir).
    pub fn record(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    /// Register every file under a subdirectory that already exists on disk.
    pub fn record_tree(&mut self, sub: &str) -> Result<()> {
        let root = self.dir.join(sub);
        let mut stack = vec![root.clone()];
        while let Some(d) = stack.pop() {
            for entry in
                std::fs::read_dir(&d).map_err(|e| Error::io(d.display().to_string(), e))?
            {
                let entry = entry.map_err(|e| Error::io(d.display().to_string(), e))?;
                let p = entry.path();
                if p.is_dir() {
                    stack.push(p);
                } else if let Ok(rel) = p.strip_prefix(&self.dir) {
                    self.outputs.push(rel.to_string_lossy().replace('\\', "/"));
                }
            }
        }
        Ok(())
    }

    /// Write the manifest and verify the outputs; returns the manifest.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.outputs.sort();
        self.outputs.dedup();
        let manifest = RunManifest {
            run_id: run_id(&self.command, &self.args, &self.config, &self.seeds),
            command: self.command,
            args: self.args,
            config: self.config,
            seeds: self.seeds,
            input_hash: self.input_hash,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            outputs: self.outputs,
        };
        manifest.write(&self.dir)?;
        manifest.validate(&self.dir)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_validates_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = RunRecorder::begin(
            dir.path().to_path_buf(),
            "demo",
            vec!["--x".into()],
            serde_json::json!({"a": 1}),
            vec![7],
            &[],
        )
        .unwrap();
        std::fs::write(rec.path("out.csv"), "a,b\n1,2\n").unwrap();
        rec.record("out.csv");
        let manifest = rec.finish().unwrap();
        assert!(manifest.outputs.contains(&"out.csv".to_string()));
        assert!(manifest.validate(dir.path()).is_ok());

        // a missing output fails validation
        std::fs::remove_file(dir.path().join("out.csv")).unwrap();
        assert!(manifest.validate(dir.path()).is_err());
    }

    #[test]
    fn run_ids_depend_on_identity_not_time() {
        let cfg = serde_json::json!({"k": 1});
        let a = run_id("probe", &["--x".into()], &cfg, &[1, 2]);
        let b = run_id("probe", &["--x".into()], &cfg, &[1, 2]);
        let c = run_id("probe", &["--y".into()], &cfg, &[1, 2]);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
