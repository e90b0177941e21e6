//! Stage manifests: enough provenance to rerun any stage byte-for-byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct StageManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub wall_ms: u64,
    pub outputs: Vec<String>,
    /// Full canonical config, so the stage can be rerun from the manifest
    /// alone.
    pub config: String,
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    wall_ms: u64,
    outputs: &[String],
) -> Result<(), CliError> {
    let manifest = StageManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_hash: format!("{:016x}", cfg.hash()),
        wall_ms,
        outputs: outputs.to_vec(),
        config: cfg.canonical(),
    };
    std::fs::create_dir_all(dir).map_err(crate::stage)?;
    std::fs::write(
        dir.join(format!("manifest-{command}.json")),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(crate::stage)
}
