use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub description: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Output directory plus the list of files written into it.
pub struct Artifacts {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    artifact_version: &'static str,
    command: &'a str,
    threads: Option<usize>,
    config: &'a ExperimentConfig,
    status: &'a str,
    message: Option<&'a str>,
    summary: &'a serde_json::Value,
    artifacts: &'a [ArtifactEntry],
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Artifacts {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>, description: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, contents.as_ref()).with_context(|| format!("cannot write {}", path.display()))?;
        self.register(name, description)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize, description: &str) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text, description)
    }

    /// Records a file that was written into the directory by other code.
    pub fn register(&mut self, name: &str, description: &str) -> anyhow::Result<()> {
        let bytes = fs::read(self.path(name)).with_context(|| format!("artifact {name} is missing"))?;
        self.entries.retain(|e| e.path != name);
        self.entries.push(ArtifactEntry {
            path: name.to_string(),
            description: description.to_string(),
            bytes: bytes.len() as u64,
            sha256: digest(&bytes),
        });
        Ok(())
    }

    /// Registers every file named `{prefix}*` not yet listed (sidecars of another artifact).
    pub fn register_matching(&mut self, prefix: &str, description: &str) -> anyhow::Result<()> {
        let mut names: Vec<String> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.starts_with(prefix) && !self.entries.iter().any(|e| &e.path == n))
            .collect();
        names.sort();
        for n in names {
            self.register(&n, description)?;
        }
        Ok(())
    }

    pub fn finish(
        self,
        command: &str,
        threads: Option<usize>,
        config: &ExperimentConfig,
        status: &str,
        message: Option<&str>,
        summary: &serde_json::Value,
    ) -> anyhow::Result<PathBuf> {
        let manifest = Manifest {
            schema_version: crate::config::SCHEMA_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION"),
            command,
            threads,
            config,
            status,
            message,
            summary,
            artifacts: &self.entries,
        };
        let path = self.path(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
