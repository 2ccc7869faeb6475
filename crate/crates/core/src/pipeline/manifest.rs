//! Run manifests: what went in, what came out, and with which settings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{PipelineConfig, SeedsConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&data),
            bytes: data.len() as u64,
        })
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub version: String,
    /// SHA-256 of the resolved configuration in canonical TOML.
    pub config_sha256: String,
    pub seeds: SeedsConfig,
    /// Subcommand results such as the chosen k or final error rates.
    pub values: BTreeMap<String, toml::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: PipelineConfig,
}

impl Manifest {
    pub fn new(subcommand: &str, config: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config.to_toml()?.as_bytes()),
            seeds: config.seeds,
            values: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: config.clone(),
        })
    }

    pub fn value(&mut self, key: &str, v: impl Into<toml::Value>) {
        self.values.insert(key.to_string(), v.into());
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("cannot serialize manifest: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trip() {
        let cfg = PipelineConfig::parse(
            "[paths]\ninput = \"t.csv\"\noutput_dir = \"o\"\n[seeds]\ncluster = 1\nsplit = 2\nstage1 = 3\nstage2 = 4\n",
            Path::new("/x"),
        )
        .unwrap();
        let mut m = Manifest::new("cluster", &cfg).unwrap();
        m.value("chosen_k", 3i64);
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, b"abc").unwrap();
        m.outputs.push(FileDigest::of(&f).unwrap());
        let p = dir.path().join("m.toml");
        m.write(&p).unwrap();
        let back = Manifest::load(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.values["chosen_k"].as_integer(), Some(3));
    }
}
