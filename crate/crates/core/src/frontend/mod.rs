//! Frame-to-frame monocular frontend: Harris detection with Shi-Tomasi
//! filtering, pyramidal Lucas-Kanade tracking, robust epipolar geometry and
//! SVD pose recovery.

pub mod epipolar;
pub mod features;
pub mod flow;
pub mod pose;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use epipolar::{
    estimate_essential, estimate_fundamental, CameraIntrinsics, EssentialMatrix,
    FundamentalMatrix, RansacConfig,
};
pub use features::{harris_corners, shi_tomasi_rescore, Feature, FeatureConfig, FeatureSet};
pub use flow::{track_features, Correspondence, Correspondences, FlowConfig, TrackStatus};
pub use pose::{recover_pose, triangulate, RecoveredPose, Triangulation};

use crate::image::{GrayImage, ImageError, MIN_IMAGE_DIM};
use crate::se3::{transform_to_dof, DofVector, Transform};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("insufficient correspondences: got {got}, need {need}")]
    InsufficientCorrespondences { got: usize, need: usize },
    #[error("degenerate geometry: no consensus model")]
    DegenerateGeometry,
    #[error("cheirality ambiguous: votes {votes:?}")]
    CheiralityAmbiguous { votes: [usize; 4] },
    #[error("invalid intrinsics {0:?}")]
    InvalidIntrinsics(CameraIntrinsics),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrontendError {
    #[error("image dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryMode {
    #[default]
    Essential,
    Fundamental,
}

impl fmt::Display for GeometryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometryMode::Essential => "essential",
            GeometryMode::Fundamental => "fundamental",
        })
    }
}

impl std::str::FromStr for GeometryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "essential" => Ok(GeometryMode::Essential),
            "fundamental" => Ok(GeometryMode::Fundamental),
            other => Err(format!("unknown geometry mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub features: FeatureConfig,
    pub flow: FlowConfig,
    pub ransac: RansacConfig,
    pub mode: GeometryMode,
    /// Median track displacement below which a pair is declared low-parallax.
    pub min_flow_px: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            features: FeatureConfig::default(),
            flow: FlowConfig::default(),
            ransac: RansacConfig::default(),
            mode: GeometryMode::Essential,
            min_flow_px: 0.5,
        }
    }
}

/// Why a pair produced the identity fallback.
#[derive(Clone, Debug, PartialEq)]
pub enum FailureReason {
    NoFeatures,
    TrackingCollapse,
    LowParallax,
    Geometry(GeometryError),
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureReason::NoFeatures => f.write_str("no features"),
            FailureReason::TrackingCollapse => f.write_str("tracking collapse"),
            FailureReason::LowParallax => f.write_str("low parallax"),
            FailureReason::Geometry(e) => write!(f, "{e}"),
        }
    }
}

/// Wall time per stage, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub harris: f64,
    pub shi_tomasi: f64,
    pub track: f64,
    pub estimate: f64,
    pub recover: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairDiagnostics {
    pub features: usize,
    pub tracked: usize,
    pub inliers: usize,
    pub median_flow_px: f64,
    pub gimbal_lock: bool,
    pub failure: Option<FailureReason>,
    pub timings: StageTimings,
}

/// Raw frontend output for one frame pair: the pose of frame b expressed in
/// frame a, with unit-norm translation (or identity on failure).
#[derive(Clone, Debug, PartialEq)]
pub struct PairResult {
    pub dof: DofVector,
    pub diagnostics: PairDiagnostics,
}

impl PairResult {
    pub fn failed(&self) -> bool {
        self.diagnostics.failure.is_some()
    }
}

fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn process_pair(
    img_a: &GrayImage,
    img_b: &GrayImage,
    k: &CameraIntrinsics,
    cfg: &FrontendConfig,
) -> Result<PairResult, FrontendError> {
    let start = Instant::now();
    if img_a.width() != img_b.width() || img_a.height() != img_b.height() {
        return Err(FrontendError::DimensionMismatch {
            a: (img_a.width(), img_a.height()),
            b: (img_b.width(), img_b.height()),
        });
    }
    img_a.check_min_size(MIN_IMAGE_DIM)?;
    k.validate(img_a.width(), img_a.height())?;

    let mut diag = PairDiagnostics::default();
    let fail = |mut diag: PairDiagnostics, reason: FailureReason| {
        diag.failure = Some(reason);
        diag.timings.total = seconds_since(start);
        Ok(PairResult {
            dof: DofVector::zero(),
            diagnostics: diag,
        })
    };

    let t = Instant::now();
    let corners = harris_corners(img_a, &cfg.features);
    diag.timings.harris = seconds_since(t);
    let t = Instant::now();
    let features = shi_tomasi_rescore(img_a, &corners, &cfg.features);
    diag.timings.shi_tomasi = seconds_since(t);
    diag.features = features.len();
    if features.len() < 8 {
        return fail(diag, FailureReason::NoFeatures);
    }

    let t = Instant::now();
    let tracks = track_features(img_a, img_b, &features, &cfg.flow)?;
    diag.timings.track = seconds_since(t);
    diag.tracked = tracks.len();
    if tracks.len() < 8 {
        return fail(diag, FailureReason::TrackingCollapse);
    }
    let mut flows: Vec<f64> = tracks.pairs().iter().map(|p| (p.b - p.a).norm()).collect();
    flows.sort_by(f64::total_cmp);
    diag.median_flow_px = flows[flows.len() / 2];
    if diag.median_flow_px < cfg.min_flow_px {
        return fail(diag, FailureReason::LowParallax);
    }

    let t = Instant::now();
    let essential = match cfg.mode {
        GeometryMode::Essential => estimate_essential(&tracks, k, &cfg.ransac),
        GeometryMode::Fundamental => estimate_fundamental(&tracks, &cfg.ransac).and_then(|f| {
            Ok(EssentialMatrix {
                matrix: epipolar::essential_from_fundamental(&f.matrix, k)?,
                inliers: f.inliers,
            })
        }),
    };
    diag.timings.estimate = seconds_since(t);
    let essential = match essential {
        Ok(e) => e,
        Err(e) => return fail(diag, FailureReason::Geometry(e)),
    };
    diag.inliers = essential.inlier_count();

    let t = Instant::now();
    let recovered = recover_pose(&essential, &tracks, k);
    diag.timings.recover = seconds_since(t);
    let recovered = match recovered {
        Ok(p) => p,
        Err(e) => return fail(diag, FailureReason::Geometry(e)),
    };

    // (R, t) maps frame-a points into frame b; the pose of b in a is its inverse.
    let rt = recovered.rotation.transpose();
    let pose_b_in_a = Transform::new(rt, -rt.rotate(&recovered.translation_direction));
    let (dof, gimbal_lock) = transform_to_dof(&pose_b_in_a);
    diag.gimbal_lock = gimbal_lock;
    diag.timings.total = seconds_since(start);
    Ok(PairResult {
        dof,
        diagnostics: diag,
    })
}

/// Rescales the unit-direction translation by the ground-truth step length.
pub fn apply_gt_scale(raw: &DofVector, gt: &DofVector) -> DofVector {
    let s = gt.translation().norm();
    DofVector::new(raw.tx * s, raw.ty * s, raw.tz * s, raw.rx, raw.ry, raw.rz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{dof_to_transform, relative_pose};
    use crate::synthetic::{fixture_pose, SpriteWorld};
    use nalgebra::Vector3;
    use rand::SeedableRng;

    fn rendered_pair() -> (GrayImage, GrayImage, CameraIntrinsics, Transform) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let world = SpriteWorld::random(
            &mut rng,
            350,
            Vector3::new(-6.0, -4.0, 5.0),
            Vector3::new(9.0, 4.0, 12.0),
        );
        let k = CameraIntrinsics::new(300.0, 300.0, 159.5, 119.5);
        let (pa, pb) = (fixture_pose(0.20), fixture_pose(0.25));
        (
            world.render(&pa, &k, 320, 240),
            world.render(&pb, &k, 320, 240),
            k,
            relative_pose(&pa, &pb),
        )
    }

    fn errors(result: &PairResult, truth: &Transform) -> (f64, f64) {
        let est = dof_to_transform(&result.dof);
        let rot = est.rotation.angle_to(&truth.rotation).to_degrees();
        let (a, b) = (est.translation, truth.translation);
        let dir = a.cross(&b).norm().atan2(a.dot(&b)).to_degrees();
        (rot, dir)
    }

    #[test]
    fn rendered_pair_recovers_known_motion() {
        let (a, b, k, truth) = rendered_pair();
        let r = process_pair(&a, &b, &k, &FrontendConfig::default()).unwrap();
        assert!(!r.failed(), "{:?}", r.diagnostics);
        assert!((r.dof.translation().norm() - 1.0).abs() < 1e-9);
        let (rot, dir) = errors(&r, &truth);
        assert!(rot < 0.5, "rotation error {rot}°");
        assert!(dir < 2.0, "direction error {dir}°");
    }

    #[test]
    fn fundamental_mode_on_rendered_pair() {
        let (a, b, k, truth) = rendered_pair();
        let cfg = FrontendConfig {
            mode: GeometryMode::Fundamental,
            ..FrontendConfig::default()
        };
        let r = process_pair(&a, &b, &k, &cfg).unwrap();
        assert!(!r.failed(), "{:?}", r.diagnostics);
        let (rot, dir) = errors(&r, &truth);
        assert!(rot < 1.0 && dir < 4.0, "{rot}° {dir}°");
    }

    #[test]
    fn identical_frames_are_low_parallax() {
        let (a, _, k, _) = rendered_pair();
        let r = process_pair(&a, &a, &k, &FrontendConfig::default()).unwrap();
        assert_eq!(r.diagnostics.failure, Some(FailureReason::LowParallax));
        assert_eq!(r.dof, DofVector::zero());
    }

    #[test]
    fn flat_frames_fail_with_identity() {
        let a = GrayImage::filled(64, 64, 1.0);
        let k = CameraIntrinsics::guess(64, 64);
        let r = process_pair(&a, &a, &k, &FrontendConfig::default()).unwrap();
        assert!(r.failed());
        assert_eq!(r.diagnostics.failure, Some(FailureReason::NoFeatures));
        assert_eq!(r.dof, DofVector::zero());
    }

    #[test]
    fn mismatched_frames_are_an_error() {
        let a = GrayImage::filled(64, 64, 1.0);
        let b = GrayImage::filled(64, 48, 1.0);
        let k = CameraIntrinsics::guess(64, 64);
        assert!(matches!(
            process_pair(&a, &b, &k, &FrontendConfig::default()),
            Err(FrontendError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gt_scale_examples() {
        let unit = DofVector::new(1.0, 0.0, 0.0, 0.1, 0.2, 0.3);
        let gt = DofVector::new(0.0, 0.2, 0.0, 0.0, 0.0, 0.0);
        let s = apply_gt_scale(&unit, &gt);
        assert!((s.tx - 0.2).abs() < 1e-15);
        assert_eq!((s.rx, s.ry, s.rz), (0.1, 0.2, 0.3));

        assert_eq!(apply_gt_scale(&DofVector::zero(), &gt), DofVector::zero());

        let d = 1.0 / 3f64.sqrt();
        let diag = apply_gt_scale(
            &DofVector::new(d, d, d, 0.0, 0.0, 0.0),
            &DofVector::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0),
        );
        for v in [diag.tx, diag.ty, diag.tz] {
            assert!((v - 0.1 / 3f64.sqrt()).abs() < 1e-12);
        }
    }
}
