//! Run manifests: a JSON record written next to every output directory so a
//! run can be reproduced exactly and its inputs re-verified by digest.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use fcm_core::{ActivationSpec, Error, GaConfig, Result, SyntheticSpec};
use serde::Serialize;

/// Everything needed to reproduce a run: the full command line, the resolved
/// seed and configuration, SHA-256 digests of every input file, the digest of
/// the dataset actually used, and the list of files written.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    /// argv as invoked, with the binary path reduced to its file name.
    pub command: Vec<String>,
    pub subcommand: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exhaustive_restarts: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ga_config: Option<GaConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_spec: Option<SyntheticSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<ActivationSpec>,
    /// Input file path -> SHA-256 hex digest of the file bytes.
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_digest: Option<String>,
    /// Files written by the run, relative to the output directory and
    /// excluding the manifest itself.
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, argv: &[String]) -> Self {
        let mut command = argv.to_vec();
        if let Some(first) = command.first_mut() {
            if let Some(name) = Path::new(first.as_str()).file_name() {
                *first = name.to_string_lossy().into_owned();
            }
        }
        Self {
            tool: "fcm",
            version: env!("CARGO_PKG_VERSION"),
            command,
            subcommand,
            seed: None,
            mode: None,
            restarts: None,
            exhaustive_restarts: None,
            sample_size: None,
            threads: None,
            ga_config: None,
            synth_spec: None,
            activation: None,
            inputs: BTreeMap::new(),
            dataset_digest: None,
            outputs: Vec::new(),
            duration_seconds: 0.0,
        }
    }

    /// Writes the manifest as `manifest.json` in `dir`, stamping the elapsed
    /// time since `started`.
    pub fn write(mut self, dir: &Path, started: Instant) -> Result<()> {
        self.duration_seconds = started.elapsed().as_secs_f64();
        let mut text = serde_json::to_string_pretty(&self)
            .map_err(|e| Error::InvalidData(format!("manifest serialization: {e}")))?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}
