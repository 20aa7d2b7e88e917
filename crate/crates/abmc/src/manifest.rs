//! Run manifests: what ran, with which configuration and seed, and for how long.

use std::path::Path;
use std::time::Instant;

use abmc_core::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::write_json;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// SHA-256 of the canonical configuration JSON.
    pub config_sha256: String,
    pub seed: u64,
    pub abmc_version: String,
    pub core_version: String,
    pub jobs: usize,
    pub wall_time_seconds: f64,
    pub status: String,
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub struct ManifestTimer {
    command: String,
    config_sha256: String,
    seed: u64,
    jobs: usize,
    start: Instant,
}

impl ManifestTimer {
    pub fn start(command: &str, canonical_config: &str, seed: u64, jobs: usize) -> Self {
        ManifestTimer {
            command: command.into(),
            config_sha256: sha256_hex(canonical_config),
            seed,
            jobs,
            start: Instant::now(),
        }
    }

    pub fn finish(self, path: &Path, status: &str) -> Result<Manifest> {
        let m = Manifest {
            command: self.command,
            config_sha256: self.config_sha256,
            seed: self.seed,
            abmc_version: env!("CARGO_PKG_VERSION").into(),
            core_version: abmc_core::VERSION.into(),
            jobs: self.jobs,
            wall_time_seconds: self.start.elapsed().as_secs_f64(),
            status: status.into(),
        };
        write_json(path, &m)?;
        Ok(m)
    }
}
