use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{named_seed, sha256_hex, PipelineError};
use crate::euroc::DatasetLayout;
use crate::frontend::{CameraIntrinsics, FrontendConfig, GeometryMode};
use crate::metrics::AngleUnit;
use crate::refiner::{Activation, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    pub camera: String,
    /// Frames this close outside ground-truth coverage clamp to the boundary pose.
    pub max_extrapolation_ns: i64,
    /// Only the first `max_frames` frames are used; 0 means all.
    pub max_frames: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            root: PathBuf::from("data/V1_01_easy/mav0"),
            camera: "cam0".into(),
            max_extrapolation_ns: 0,
            max_frames: 0,
        }
    }
}

/// Contiguous time blocks: train, then validation, then held-out test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.8,
            validation: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rigidly align the chained estimate to ground truth before ATE.
    pub align: bool,
    pub units: AngleUnit,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            align: true,
            units: AngleUnit::Rad,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub activations: Vec<Activation>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            activations: vec![
                Activation::LeakyRelu,
                Activation::Selu,
                Activation::Tanh,
                Activation::Relu,
                Activation::Sigmoid,
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub min_pairs: usize,
    pub infer_calls: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            min_pairs: 200,
            infer_calls: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every random stream (RANSAC, weight init, shuffling).
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Overrides `frontend.mode`.
    pub mode: GeometryMode,
    pub dataset: DatasetConfig,
    pub camera: CameraIntrinsics,
    pub frontend: FrontendConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    pub bench: BenchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            mode: GeometryMode::Essential,
            dataset: DatasetConfig::default(),
            // EuRoC cam0.
            camera: CameraIntrinsics::new(458.654, 457.296, 367.215, 248.375),
            frontend: FrontendConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Documented defaults, as written by `init-config`.
pub const CONFIG_TEMPLATE: &str = r#"# dofvo pipeline configuration. Every value shown is the default.

# Root of every random stream; RANSAC, weight init and shuffling derive
# named sub-seeds from it.
seed = 0
# Directory for CSVs, models, curves and manifests.
output_dir = "out"
# Two-view geometry: "essential" (calibrated) or "fundamental" (pixel F, then E = KᵀFK).
mode = "essential"

[dataset]
# EuRoC sequence root in ASL layout (contains cam0/ and state_groundtruth_estimate0/).
root = "data/V1_01_easy/mav0"
camera = "cam0"
# Frames up to this many ns outside ground-truth coverage clamp to the boundary pose.
max_extrapolation_ns = 0
# Use only the first N frames; 0 means all.
max_frames = 0

[camera]
# Pinhole intrinsics in pixels (EuRoC cam0).
fx = 458.654
fy = 457.296
cx = 367.215
cy = 248.375

[frontend]
# Median track displacement (px) below which a pair is declared low-parallax.
min_flow_px = 0.5

[frontend.features]
block_size = 3
harris_k = 0.04
max_features = 500
# Harris candidates below quality_level · max response are dropped.
quality_level = 0.01
min_distance = 8.0
border = 4
# Shi-Tomasi patch half-width (7×7 for 3).
patch_radius = 3
shi_tomasi_quality = 0.01

[frontend.flow]
# Odd window side in pixels.
window = 21
pyramid_levels = 3
max_iterations = 30
epsilon = 0.01
# Largest mean absolute intensity difference over the window.
max_residual = 0.1
min_eigenvalue = 1e-6
# Forward-backward consistency bound in px; 0 disables.
max_fb_error = 0.5

[frontend.ransac]
max_iterations = 2000
adaptive = true
confidence = 0.999
# Sampson-distance inlier threshold in px.
threshold_px = 1.0
# Levenberg-Marquardt polish of the model on its inliers.
refine = true

[train]
hidden = [32, 32]
# relu, leaky_relu, elu, selu, tanh or sigmoid.
activation = "tanh"
learning_rate = 0.001
# adam or sgd_momentum (momentum 0.9).
optimizer = "adam"
# Training needs at least 10 · batch_size usable pairs.
batch_size = 64
epochs = 200
# Epochs without validation improvement before stopping; 0 disables.
patience = 30
# Learning rate anneals (cosine) down to learning_rate · final_lr_ratio.
final_lr_ratio = 0.01
# Inputs fed to every branch, in tx ty tz rx ry rz order.
input_mask = [true, true, true, true, true, true]

[split]
# Contiguous blocks in time order; the remainder is the held-out test block.
train = 0.8
validation = 0.1

[eval]
# Rigid SE(3) alignment before ATE (--no-align disables).
align = true
# Rotation columns in "rad" or "deg".
units = "rad"

[ablate]
activations = ["leaky_relu", "selu", "tanh", "relu", "sigmoid"]

[bench]
min_pairs = 200
infer_calls = 10000
"#;

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
        Self::parse(&text).map_err(|e| PipelineError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<PipelineConfig, String> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        let k = &self.camera;
        if !(k.fx > 0.0 && k.fy > 0.0 && k.fx.is_finite() && k.fy.is_finite()) {
            return Err("camera.fx and camera.fy must be positive".into());
        }
        if !(k.cx.is_finite() && k.cy.is_finite() && k.cx >= 0.0 && k.cy >= 0.0) {
            return Err("camera.cx and camera.cy must be non-negative".into());
        }
        let s = &self.split;
        if !(s.train > 0.0 && s.validation > 0.0 && s.train + s.validation <= 1.0 + 1e-12) {
            return Err("split.train and split.validation must be positive and sum to at most 1".into());
        }
        let r = &self.frontend.ransac;
        if !(r.threshold_px > 0.0) || r.max_iterations == 0 || !(r.confidence > 0.0 && r.confidence < 1.0) {
            return Err("frontend.ransac needs threshold_px > 0, max_iterations > 0, 0 < confidence < 1".into());
        }
        let f = &self.frontend.flow;
        if f.window < 3 || f.window.is_multiple_of(2) {
            return Err("frontend.flow.window must be odd and at least 3".into());
        }
        if self.frontend.features.max_features < 8 {
            return Err("frontend.features.max_features must be at least 8".into());
        }
        if !(self.frontend.min_flow_px >= 0.0) {
            return Err("frontend.min_flow_px must be non-negative".into());
        }
        if self.ablate.activations.is_empty() {
            return Err("ablate.activations must not be empty".into());
        }
        if self.bench.min_pairs == 0 || self.bench.infer_calls == 0 {
            return Err("bench.min_pairs and bench.infer_calls must be positive".into());
        }
        self.train.validate().map_err(|e| e.to_string())
    }

    /// Checks that the dataset root exists; needed by the image-reading commands.
    pub fn validate_dataset(&self) -> Result<DatasetLayout, PipelineError> {
        if !self.dataset.root.is_dir() {
            return Err(PipelineError::Io {
                path: self.dataset.root.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root does not exist"),
            });
        }
        Ok(DatasetLayout::new(&self.dataset.root, &self.dataset.camera))
    }

    /// Frontend settings with the top-level mode applied and the RANSAC seed for pair `index`.
    pub fn frontend_for_pair(&self, index: usize) -> FrontendConfig {
        let mut f = self.frontend.clone();
        f.mode = self.mode;
        f.ransac.seed = named_seed(self.seed, &format!("ransac/{index}"));
        f
    }

    /// Training settings with the split's validation share and the training sub-seed.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = named_seed(self.seed, "train");
        t.validation_fraction = self.split.validation / (self.split.train + self.split.validation);
        t
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}
