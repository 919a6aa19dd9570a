//! Provenance sidecars written next to every artifact.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Serialize)]
struct Sidecar<'a> {
    artifact: String,
    command: &'a str,
    tool_version: &'a str,
    seed: Option<u64>,
    config_hash: String,
    config: &'a serde_json::Value,
    inputs: Vec<String>,
}

/// SHA-256 of the canonical JSON form of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    artifact.with_file_name(name)
}

/// Writes `<artifact>.meta.json`.
pub fn write_sidecar(
    artifact: &Path,
    command: &str,
    seed: Option<u64>,
    config: &impl Serialize,
    inputs: &[PathBuf],
) -> Result<(), CliError> {
    let config = serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?;
    let sidecar = Sidecar {
        artifact: artifact.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        seed,
        config_hash: config_hash(&config),
        config: &config,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = sidecar_path(artifact);
    std::fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = serde_json::json!({"seed": 1, "lr": 0.001});
        let b = serde_json::json!({"seed": 2, "lr": 0.001});
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("out/la.json")), PathBuf::from("out/la.json.meta.json"));
    }
}
