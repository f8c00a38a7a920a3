//! Per-degree-of-freedom refinement: one small fully-connected network per
//! DoF trained on its own target, then frozen and combined behind a linear
//! fusion head.

pub mod activation;
pub mod combined;
pub mod io;
pub mod mlp;
pub mod train;

use std::path::PathBuf;

pub use activation::Activation;
pub use combined::{combine_branches, infer, train_combined, CombinedModel, FusionHead, FusionReport};
pub use io::{decode_model, encode_model, load_model, save_model};
pub use mlp::{gradient_check, Gradients, Layer, MlpBranch, Normalization};
pub use train::{split_tail, train_branch, EpochLoss, Optimizer, TrainConfig, TrainedBranch, TrainingSample};

#[derive(Debug, thiserror::Error)]
pub enum RefinerError {
    #[error("too few usable samples: got {got}, need {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("training diverged for dof {dof} at epoch {epoch}")]
    Divergence { dof: usize, epoch: usize },
    #[error("no branch for dof {0}")]
    MissingBranch(usize),
    #[error("two branches for dof {0}")]
    DuplicateBranch(usize),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model format version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
