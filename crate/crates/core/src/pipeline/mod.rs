//! Command-level orchestration over a single config file.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod poses;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use commands::{
    cmd_ablate, cmd_bench, cmd_convert_gt, cmd_eval, cmd_infer, cmd_run_vo, cmd_synth_dataset,
    cmd_train, AblateSummary, BenchSummary, ConvertSummary, EvalInputs, EvalSummary, InferSummary,
    RunVoSummary, TrainSummary,
};
pub use config::{PipelineConfig, CONFIG_TEMPLATE};
pub use manifest::{OutputEntry, RunManifest};
pub use poses::{align_to_gt, read_pose_csv, write_pose_csv, AlignedPair, PoseFile, PoseRow, TranslationScale};

use crate::euroc::EurocError;
use crate::frontend::FrontendError;
use crate::metrics::MetricsError;
use crate::refiner::RefinerError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] EurocError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Model(#[from] RefinerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {message}", path.display())]
    Alignment { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Model(RefinerError::Divergence { .. })
            | PipelineError::Metrics(MetricsError::NonFinite) => 3,
            PipelineError::Model(RefinerError::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError {
        let path = path.to_path_buf();
        move |source| PipelineError::Io { path, source }
    }
}

/// Independent stream seed for the component `name`.
pub fn named_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(PipelineError::io(&tmp))?;
    f.write_all(contents).map_err(PipelineError::io(&tmp))?;
    f.sync_all().map_err(PipelineError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(PipelineError::io(path))
}

/// Mean, median and 95th percentile of a sample, in the sample's units.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct Summary {
    pub samples: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        // Nearest-rank percentile.
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Summary {
            samples: n,
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            p95: v[rank - 1],
        }
    }

    pub fn scaled(&self, k: f64) -> Summary {
        Summary {
            samples: self.samples,
            mean: self.mean * k,
            median: self.median * k,
            p95: self.p95 * k,
        }
    }
}
