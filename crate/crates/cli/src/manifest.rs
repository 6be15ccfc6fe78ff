//! Run manifests and cleanup of partial outputs.
//!
//! Every command writes a manifest recording its config hash, seeds, the
//! crate version, and a content hash per emitted file; a seeded rerun of
//! the same command reproduces each output byte for byte.

use mpclearn_core::hash::fnv1a64;
use std::io;
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Collects outputs for the manifest and deletes them all if the command
/// fails before `commit`.
pub struct OutputGuard {
    out_dir: PathBuf,
    command: String,
    entries: Vec<(PathBuf, u64)>,
    seeds: Vec<(String, u64)>,
    config_hash: u64,
    master_seed: u64,
    committed: bool,
}

impl OutputGuard {
    pub fn new(out_dir: &Path, command: &str, config_hash: u64, master_seed: u64) -> io::Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            command: command.to_string(),
            entries: Vec::new(),
            seeds: Vec::new(),
            config_hash,
            master_seed,
            committed: false,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn record_seed(&mut self, stage: &str, seed: u64) {
        self.seeds.push((stage.to_string(), seed));
    }

    /// Writes a file under the output directory and tracks it.
    pub fn write_file(&mut self, name: &str, contents: &str) -> io::Result<PathBuf> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        self.entries
            .push((path.clone(), fnv1a64(contents.as_bytes())));
        Ok(path)
    }

    /// Finishes the run: writes `manifest-<command>.txt` and disarms the
    /// cleanup.
    pub fn commit(mut self) -> io::Result<PathBuf> {
        let mut text = String::new();
        text.push_str(&format!("command: {}\n", self.command));
        text.push_str(&format!("version: mpclearn {VERSION}\n"));
        text.push_str(&format!("config_hash: {:016x}\n", self.config_hash));
        text.push_str(&format!("master_seed: {}\n", self.master_seed));
        for (stage, seed) in &self.seeds {
            text.push_str(&format!("stage_seed.{stage}: {seed}\n"));
        }
        for (path, hash) in &self.entries {
            let name = path
                .strip_prefix(&self.out_dir)
                .unwrap_or(path)
                .display()
                .to_string();
            text.push_str(&format!("output: {name} fnv1a64={hash:016x}\n"));
        }
        let manifest_path = self.out_dir.join(format!("manifest-{}.txt", self.command));
        std::fs::write(&manifest_path, text)?;
        self.committed = true;
        Ok(manifest_path)
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for (path, _) in &self.entries {
                let _ = std::fs::remove_file(path);
            }
        }
    }
}
