//! `manifest.json`: every artifact in the output directory with its hash.
//! Entries from earlier commands are kept; rewriting a file replaces its
//! entry. The file carries no timestamps so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub sha256: String,
    pub bytes: u64,
    pub command: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    /// Keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Collects the files one command writes, then merges them into the manifest.
pub struct ArtifactWriter<'a> {
    out_dir: &'a Path,
    command: &'static str,
    written: Vec<(String, Artifact)>,
}

impl<'a> ArtifactWriter<'a> {
    pub fn new(out_dir: &'a Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            out_dir,
            command,
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push((
            name.to_owned(),
            Artifact {
                sha256: sha256_hex(contents),
                bytes: contents.len() as u64,
                command: self.command.to_owned(),
            },
        ));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<()> {
        let mut text = String::new();
        for item in items {
            text.push_str(&serde_json::to_string(item)?);
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn finish(self) -> Result<()> {
        let path = self.out_dir.join(MANIFEST_NAME);
        let mut manifest = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        };
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_owned();
        manifest.artifacts.extend(self.written);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
