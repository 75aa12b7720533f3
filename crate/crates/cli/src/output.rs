use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Provenance block attached to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
}

impl Meta {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self, CliError> {
        let config = serde_json::to_value(config)?;
        let digest = Sha256::digest(serde_json::to_string(&config)?.as_bytes());
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            config,
        })
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `<path>.meta.json`, written next to CSV artifacts.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let drawn = rand::random::<u64>();
        println!("seed: {drawn} (drawn from system entropy)");
        drawn
    })
}

pub fn delimiter_byte(c: char) -> Result<u8, CliError> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| CliError::Usage(format!("delimiter {c:?} is not a single ASCII character")))
}
