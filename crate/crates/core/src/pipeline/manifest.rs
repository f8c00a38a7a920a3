use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::{sha256_hex, write_atomic, PipelineError};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub frames: usize,
    pub pairs: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: PathBuf,
    pub sha256: String,
    pub config_hash: String,
}

/// Record of one command invocation, written at its end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    /// Wall time per stage, in seconds.
    pub stage_seconds: BTreeMap<String, f64>,
    pub counts: Counts,
    pub outputs: Vec<OutputEntry>,
    /// Command-specific details such as timing summaries.
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            config: config.clone(),
            stage_seconds: BTreeMap::new(),
            counts: Counts::default(),
            outputs: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    /// Records an already-written output file with its content hash.
    pub fn add_output(&mut self, path: &Path) -> Result<(), PipelineError> {
        let bytes = fs::read(path).map_err(PipelineError::io(path))?;
        self.outputs.push(OutputEntry {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
            config_hash: self.config_hash.clone(),
        });
        Ok(())
    }

    pub fn path_for(config: &PipelineConfig, command: &str) -> PathBuf {
        config.output_dir.join("manifests").join(format!("{command}.json"))
    }

    pub fn write(&self) -> Result<PathBuf, PipelineError> {
        let path = Self::path_for(&self.config, &self.command);
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&path, &json)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<RunManifest, PipelineError> {
        let bytes = fs::read(path).map_err(PipelineError::io(path))?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_output_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            output_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let out = dir.path().join("a.csv");
        fs::write(&out, "x\n").unwrap();
        let mut m = RunManifest::new("eval", &cfg);
        m.add_output(&out).unwrap();
        m.stage_seconds.insert("total".into(), 0.5);
        let path = m.write().unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.outputs[0].config_hash, cfg.hash());
        assert_eq!(back.outputs[0].sha256, sha256_hex(b"x\n"));
    }
}
