//! One JSON record per command invocation describing what was run and what
//! it produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    pub fn hash_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Component name to identifier, e.g. `encoder` to `tiny-encoder:seed=0`.
    pub backbones: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_ms: u64,
}

impl RunManifest {
    pub fn new(
        command: impl Into<String>,
        args: Vec<String>,
        config_hash: String,
        seed: u64,
    ) -> Self {
        Self {
            command: command.into(),
            args,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash,
            seed,
            backbones: BTreeMap::new(),
            artifacts: Vec::new(),
            wall_clock_ms: 0,
        }
    }

    pub fn backbone(&mut self, role: &str, id: String) {
        self.backbones.insert(role.into(), id);
    }

    /// Records the files in `paths` with their digests.
    pub fn add_artifacts<P: AsRef<Path>>(
        &mut self,
        paths: impl IntoIterator<Item = P>,
    ) -> Result<()> {
        for p in paths {
            self.artifacts.push(Artifact::hash_file(p.as_ref())?);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(Error::io(&path))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.bin");
        std::fs::write(&f, b"abc").unwrap();
        let mut m = RunManifest::new("train", vec!["--smoke".into()], "h".into(), 3);
        m.backbone("encoder", "tiny".into());
        m.add_artifacts([&f]).unwrap();
        assert_eq!(
            m.artifacts[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let p = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(&p).unwrap(), m);
    }
}
