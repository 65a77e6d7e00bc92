//! Run manifests and output files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use krs_core::config::ConfigMap;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Command plus fully resolved configuration; replaying it reruns the same
/// computation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: ConfigMap,
}

impl RunManifest {
    pub fn new(command: &str, config: ConfigMap) -> Self {
        Self {
            command: command.to_string(),
            version: VERSION.to_string(),
            config,
        }
    }

    pub fn to_map(&self) -> ConfigMap {
        let mut map = self.config.clone();
        map.set("command", &self.command);
        map.set("version", &self.version);
        map
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let Some(command) = map.get("command") else {
            bail!("manifest has no `command` entry");
        };
        let version = map.get("version").unwrap_or("unknown").to_string();
        let mut config = ConfigMap::new();
        for k in map.keys().filter(|k| *k != "command" && *k != "version") {
            config.set(k, map.get(k).unwrap_or_default());
        }
        Ok(Self {
            command: command.to_string(),
            version,
            config,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let map = ConfigMap::load(path).with_context(|| format!("reading manifest {}", path.display()))?;
        Self::from_map(&map)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let text = format!("# krs run manifest\n{}", self.to_map().to_text());
        write_text(dir, MANIFEST_FILE, &text)
    }
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip() {
        let mut config = ConfigMap::new();
        config.set("rho", 0.05);
        config.set("input", "/tmp/a b.png");
        let m = RunManifest::new("deblur", config);
        let dir = tempfile::tempdir().unwrap();
        let path = m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn manifest_needs_command() {
        assert!(RunManifest::from_map(&ConfigMap::parse("rho = 1").unwrap()).is_err());
    }
}
