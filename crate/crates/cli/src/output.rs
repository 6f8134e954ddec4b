use std::path::{Path, PathBuf};

use anyhow::Context;
use phonoguard_core::io::write_atomic;
use serde::Serialize;

/// Collects the files a command writes so the run manifest can list them.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn record(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        self.record(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.bytes(name, &buf)
    }

    /// Render with `f` into memory, then write atomically.
    pub fn with<F>(&mut self, name: &str, f: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> phonoguard_core::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.bytes(name, &buf)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Run record written last by every command. It holds the wall-clock
/// duration, so it is the one output that differs between identical runs.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub tool_version: &'a str,
    pub seed: u64,
    pub config_path: Option<&'a Path>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub errors: Vec<String>,
    pub duration_secs: f64,
}

pub const RUN_MANIFEST: &str = "run_manifest.json";
