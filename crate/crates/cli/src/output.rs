//! Atomic experiment directories.
//!
//! Everything is written into a hidden staging directory next to the target
//! and renamed into place only after the manifest is written. A failed run
//! drops the staging directory, so the target either holds a complete
//! result or is left as it was.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub seeds: Vec<u64>,
    /// SHA-256 of the canonical JSON form of `config`.
    pub config_sha256: String,
    /// The effective configuration after command-line overrides.
    pub config: ExperimentConfig,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(
        command: &str,
        inputs: &[&Path],
        config: &ExperimentConfig,
    ) -> Result<Self, CliError> {
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            seed: None,
            seeds: Vec::new(),
            config_sha256: config_hash(config)?,
            config: config.clone(),
            artifacts: Vec::new(),
        })
    }
}

pub fn config_hash(config: &ExperimentConfig) -> Result<String, CliError> {
    let canonical = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&canonical)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub struct Staging {
    target: PathBuf,
    dir: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self, CliError> {
        let name = target.file_name().ok_or_else(|| {
            CliError::Usage(format!("`{}` is not a directory name", target.display()))
        })?;
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
        let dir = parent.join(format!(
            ".{}.partial-{}",
            name.to_string_lossy(),
            std::process::id()
        ));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        fs::create_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Staging {
            target: target.to_path_buf(),
            dir,
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes the manifest, listing every staged file, and moves the
    /// directory into place, replacing any previous result.
    pub fn commit(mut self, mut manifest: Manifest) -> Result<PathBuf, CliError> {
        manifest.artifacts = list_files(&self.dir, &self.dir)?;
        manifest.artifacts.push(MANIFEST_FILE.to_string());
        manifest.artifacts.sort();
        fairinject::io::write_json(&self.file(MANIFEST_FILE), &manifest)?;
        if self.target.exists() {
            let old = self.dir.with_extension("old");
            fs::rename(&self.target, &old).map_err(|e| CliError::io(&self.target, e))?;
            fs::rename(&self.dir, &self.target).map_err(|e| CliError::io(&self.target, e))?;
            fs::remove_dir_all(&old).map_err(|e| CliError::io(&old, e))?;
        } else {
            fs::rename(&self.dir, &self.target).map_err(|e| CliError::io(&self.target, e))?;
        }
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn list_files(root: &Path, dir: &Path) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            out.extend(list_files(root, &path)?);
        } else {
            let rel = path.strip_prefix(root).expect("inside root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(out)
}
