//! Output directories, atomic writes and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "PULSEQML_OUT";

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    file.write_all(contents)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// SHA-256 of the compact JSON form; object keys are already sorted.
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stream seed for one sweep cell, derived from the run seed and the cell's identity.
pub fn cell_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub version: String,
    pub started: String,
    pub finished: String,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
}

/// A run's output directory; every file written through it lands in the manifest.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    started: String,
    outputs: Vec<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunDir {
    pub fn create(root: PathBuf, command: &str, config: serde_json::Value, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(&root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root, command: command.to_string(), config, seed, started: now(), outputs: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.root.join(name);
        write_atomic(&path, contents.as_ref())?;
        self.record(name);
        Ok(path)
    }

    /// Lists a file written elsewhere, e.g. by a worker thread.
    pub fn record(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn finish(self) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            config_hash: config_hash(&self.config),
            config: self.config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started,
            finished: now(),
            outputs: self.outputs,
        };
        write_atomic(&self.root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(manifest)
    }
}

/// `--out` if given, else `$PULSEQML_OUT/<command>`, else `runs/<command>`.
pub fn resolve_out(out: Option<&Path>, command: &str) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from).join(command),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":[2,3]}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&json!({"a": [2, 3], "b": 1})));
        assert_ne!(config_hash(&a), config_hash(&json!({"a": [2, 3], "b": 2})));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn cell_seeds_differ_by_part() {
        assert_eq!(cell_seed(1, &["fig4a", "2", "3"]), cell_seed(1, &["fig4a", "2", "3"]));
        assert_ne!(cell_seed(1, &["fig4a", "2", "3"]), cell_seed(1, &["fig4a", "23", ""]));
        assert_ne!(cell_seed(1, &["a"]), cell_seed(2, &["a"]));
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(dir.path().join("r"), "test", json!({"x": 1}), Some(3)).unwrap();
        run.write("a.csv", "1\n").unwrap();
        run.write("a.csv", "2\n").unwrap();
        run.record("b.csv");
        let m = run.finish().unwrap();
        assert_eq!(m.outputs, vec!["a.csv", "b.csv"]);
        assert_eq!(fs::read_to_string(dir.path().join("r/a.csv")).unwrap(), "2\n");
        let back: RunManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("r").join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back, m);
        let leftovers: Vec<_> = fs::read_dir(dir.path().join("r"))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
