//! Stamped JSON artifacts: every persisted file records the config hash,
//! master seed and code version it was produced under.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Stamp {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Stamp {
            config_hash: config_hash.into(),
            seed,
            version: VERSION.to_string(),
        }
    }

    /// One-line form used in headers of text artifacts.
    pub fn header(&self) -> String {
        format!(
            "config_hash={} seed={} version={}",
            self.config_hash, self.seed, self.version
        )
    }

    pub fn parse_header(line: &str) -> Option<Stamp> {
        let mut hash = None;
        let mut seed = None;
        let mut version = None;
        for field in line.trim_start_matches('#').split_whitespace() {
            match field.split_once('=')? {
                ("config_hash", v) => hash = Some(v.to_string()),
                ("seed", v) => seed = v.parse().ok(),
                ("version", v) => version = Some(v.to_string()),
                _ => {}
            }
        }
        Some(Stamp {
            config_hash: hash?,
            seed: seed?,
            version: version?,
        })
    }

    pub fn check(&self, expected: &Stamp, path: &Path) -> Result<()> {
        if self.config_hash != expected.config_hash {
            return Err(Error::StaleArtifact {
                path: path.to_path_buf(),
                found: self.config_hash.clone(),
                expected: expected.config_hash.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    stamp: Stamp,
    payload: T,
}

pub fn write_json<T: Serialize>(path: &Path, stamp: &Stamp, payload: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Borrowed<'a, T> {
        stamp: &'a Stamp,
        payload: &'a T,
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(&Borrowed { stamp, payload })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a stamped artifact, failing if it was produced under another config.
pub fn read_json<T: DeserializeOwned>(path: &Path, expected: &Stamp) -> Result<T> {
    let (stamp, payload) = read_json_unchecked(path)?;
    stamp.check(expected, path)?;
    Ok(payload)
}

pub fn read_json_unchecked<T: DeserializeOwned>(path: &Path) -> Result<(Stamp, T)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope<T> = serde_json::from_str(&text)?;
    Ok((env.stamp, env.payload))
}
