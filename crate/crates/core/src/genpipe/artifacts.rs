//! Generated code artifacts and their on-disk layout.
//!
//! ```text
//! out/
//!   manifest.json
//!   plan.json
//!   controller.rhai
//!   models/<Class>.rhai
//!   summaries/<Class>.json
//! ```
//! Files are written in sorted order so equal sets give equal bytes.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::runtime::{Program, RuntimeError};
use super::schema::{ModelSpecification, NodeKind, PlanNode};
use super::templates::TEMPLATE_VERSION;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub class_name: String,
    pub kind: NodeKind,
    pub source: String,
    /// Interface extracted from `source`.
    pub summary: ModelSpecification,
}

impl CodeArtifact {
    /// Summary ports that the source never mentions.
    pub fn unmatched_ports(&self) -> Vec<&str> {
        self.summary.port_names().filter(|p| !self.source.contains(p)).collect()
    }
}

/// Everything `construct` produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactSet {
    pub root: String,
    pub plan: PlanNode,
    pub models: BTreeMap<String, CodeArtifact>,
    pub controller: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub kind: NodeKind,
    pub source: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub templates: String,
    pub root: String,
    pub controller: String,
    pub plan: String,
    pub models: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn read(dir: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(Self::FILE))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported manifest version {}", manifest.version),
            ));
        }
        Ok(manifest)
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

impl ArtifactSet {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: MANIFEST_VERSION,
            templates: TEMPLATE_VERSION.to_string(),
            root: self.root.clone(),
            controller: "controller.rhai".into(),
            plan: "plan.json".into(),
            models: self
                .models
                .values()
                .map(|a| {
                    let entry = ManifestEntry {
                        kind: a.kind,
                        source: format!("models/{}.rhai", a.class_name),
                        summary: format!("summaries/{}.json", a.class_name),
                    };
                    (a.class_name.clone(), entry)
                })
                .collect(),
        }
    }

    /// Relative path and contents of every file, sorted by path.
    pub fn files(&self) -> BTreeMap<PathBuf, String> {
        let manifest = self.manifest();
        let mut files = BTreeMap::new();
        files.insert(PathBuf::from(Manifest::FILE), pretty(&manifest));
        files.insert(PathBuf::from(&manifest.plan), pretty(&self.plan));
        files.insert(PathBuf::from(&manifest.controller), self.controller.clone());
        for (class, entry) in &manifest.models {
            let artifact = &self.models[class];
            files.insert(PathBuf::from(&entry.source), artifact.source.clone());
            files.insert(PathBuf::from(&entry.summary), pretty(&artifact.summary));
        }
        files
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        for (relative, contents) in self.files() {
            let path = dir.join(relative);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, contents)?;
        }
        Ok(())
    }

    pub fn program(&self) -> Result<Program, RuntimeError> {
        Program::new(
            &self.controller,
            self.models
                .values()
                .map(|a| (a.class_name.as_str(), a.kind, a.source.as_str())),
        )
    }
}
