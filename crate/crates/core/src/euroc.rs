//! EuRoC ASL-format ingestion and per-frame-pair relative ground truth.
//!
//! Ground truth is interpolated to camera timestamps (lerp for position,
//! slerp for orientation) and treated as the camera pose; the body-to-camera
//! extrinsic is not applied.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::format::sig9;
use crate::image::{GrayImage, ImageError, MIN_IMAGE_DIM};
use crate::se3::{
    quat_to_rotation, relative_pose, rotation_to_quat, transform_to_dof, DofVector, Quaternion,
    Se3Error, Transform,
};

/// Quaternion renormalizations larger than this are counted as warnings.
const RENORMALIZATION_WARNING: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EurocError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}:{line}: timestamp not strictly increasing")]
    NonMonotonic { path: PathBuf, line: u64 },
    #[error("{path}: need at least 2 frames, found {count}")]
    TooFewFrames { path: PathBuf, count: usize },
    #[error("{path}:{line}: {source}")]
    Quaternion {
        path: PathBuf,
        line: u64,
        #[source]
        source: Se3Error,
    },
    #[error("timestamp {t} ns outside ground-truth coverage [{start}, {end}]")]
    OutOfRange { t: i64, start: i64, end: i64 },
    #[error("no frame pair overlaps the ground truth ({dropped} pairs dropped)")]
    EmptyOverlap { dropped: usize },
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("{path}: unsupported image: {message}")]
    UnsupportedImage { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
}

/// One row of a camera index (`cam0/data.csv`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub timestamp: i64,
    pub image_filename: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthRecord {
    pub timestamp: i64,
    pub position: Vector3<f64>,
    pub orientation: Quaternion,
}

impl GroundTruthRecord {
    pub fn pose(&self) -> Transform {
        let r = quat_to_rotation(&self.orientation).expect("orientation normalized at load");
        Transform::new(r, self.position)
    }

    pub fn from_pose(timestamp: i64, pose: &Transform) -> Self {
        GroundTruthRecord {
            timestamp,
            position: pose.translation,
            orientation: rotation_to_quat(&pose.rotation),
        }
    }
}

/// Loaded ground truth plus the count of rows whose quaternion needed a
/// renormalization above 1e-3.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub records: Vec<GroundTruthRecord>,
    pub normalization_warnings: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssociatedPair {
    pub frame_a: FrameRecord,
    pub frame_b: FrameRecord,
    pub gt_relative: Transform,
    pub gt_dof: DofVector,
}

#[derive(Clone, Debug)]
pub struct PairSet {
    pub pairs: Vec<AssociatedPair>,
    /// Consecutive pairs discarded for lying outside ground-truth coverage.
    pub dropped: usize,
    /// Interpolated absolute pose at `pairs[0].frame_a`.
    pub start_pose: Transform,
}

/// Paths of one EuRoC sequence in ASL layout.
#[derive(Clone, Debug)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub camera: String,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>, camera: impl Into<String>) -> Self {
        DatasetLayout {
            root: root.into(),
            camera: camera.into(),
        }
    }

    pub fn camera_index(&self) -> PathBuf {
        self.root.join("mav0").join(&self.camera).join("data.csv")
    }

    pub fn image_dir(&self) -> PathBuf {
        self.root.join("mav0").join(&self.camera).join("data")
    }

    pub fn image_path(&self, frame: &FrameRecord) -> PathBuf {
        self.image_dir().join(&frame.image_filename)
    }

    pub fn groundtruth(&self) -> PathBuf {
        self.root
            .join("mav0")
            .join("state_groundtruth_estimate0")
            .join("data.csv")
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, EurocError> {
    let file = fs::File::open(path).map_err(|source| EurocError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> EurocError {
    EurocError::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_rows(
    path: &Path,
    mut each: impl FnMut(u64, &csv::StringRecord) -> Result<(), EurocError>,
) -> Result<(), EurocError> {
    let mut reader = csv_reader(path)?;
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(path, line, e.to_string())
        })?;
        if !more {
            return Ok(());
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        each(line, &record)?;
    }
}

/// Reads `timestamp [ns],filename` rows; `#` lines are skipped.
pub fn load_camera_index(path: &Path) -> Result<Vec<FrameRecord>, EurocError> {
    let mut frames: Vec<FrameRecord> = Vec::new();
    read_rows(path, |line, rec| {
        if rec.len() < 2 {
            return Err(malformed(path, line, "expected timestamp and filename"));
        }
        let timestamp: i64 = rec[0]
            .parse()
            .map_err(|_| malformed(path, line, format!("bad timestamp {:?}", &rec[0])))?;
        if let Some(prev) = frames.last() {
            if timestamp <= prev.timestamp {
                return Err(EurocError::NonMonotonic {
                    path: path.to_path_buf(),
                    line,
                });
            }
        }
        frames.push(FrameRecord {
            timestamp,
            image_filename: rec[1].to_string(),
        });
        Ok(())
    })?;
    if frames.len() < 2 {
        return Err(EurocError::TooFewFrames {
            path: path.to_path_buf(),
            count: frames.len(),
        });
    }
    Ok(frames)
}

/// Reads `timestamp, p_x, p_y, p_z, q_w, q_x, q_y, q_z[, ...]`.
pub fn load_groundtruth(path: &Path) -> Result<GroundTruth, EurocError> {
    let mut records: Vec<GroundTruthRecord> = Vec::new();
    let mut warnings = 0;
    read_rows(path, |line, rec| {
        if rec.len() < 8 {
            return Err(malformed(
                path,
                line,
                format!("expected at least 8 columns, found {}", rec.len()),
            ));
        }
        let timestamp: i64 = rec[0]
            .parse()
            .map_err(|_| malformed(path, line, format!("bad timestamp {:?}", &rec[0])))?;
        let mut v = [0.0f64; 7];
        for (i, slot) in v.iter_mut().enumerate() {
            let field = &rec[i + 1];
            *slot = field
                .parse()
                .map_err(|_| malformed(path, line, format!("bad number {field:?}")))?;
            if !slot.is_finite() {
                return Err(malformed(path, line, format!("non-finite value {field:?}")));
            }
        }
        let raw = Quaternion::new(v[3], v[4], v[5], v[6]);
        let orientation = raw.normalized().map_err(|source| EurocError::Quaternion {
            path: path.to_path_buf(),
            line,
            source,
        })?;
        if (raw.norm() - 1.0).abs() > RENORMALIZATION_WARNING {
            warnings += 1;
        }
        if let Some(prev) = records.last() {
            if timestamp <= prev.timestamp {
                return Err(EurocError::NonMonotonic {
                    path: path.to_path_buf(),
                    line,
                });
            }
        }
        records.push(GroundTruthRecord {
            timestamp,
            position: Vector3::new(v[0], v[1], v[2]),
            orientation,
        });
        Ok(())
    })?;
    Ok(GroundTruth {
        records,
        normalization_warnings: warnings,
    })
}

/// Writes ground truth in the EuRoC column order with full round-trip precision.
pub fn write_groundtruth(path: &Path, records: &[GroundTruthRecord]) -> std::io::Result<()> {
    let mut out = String::from("#timestamp,p_x,p_y,p_z,q_w,q_x,q_y,q_z\n");
    for r in records {
        let q = r.orientation;
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.timestamp, r.position.x, r.position.y, r.position.z, q.w, q.x, q.y, q.z
        ));
    }
    fs::write(path, out)
}

pub fn write_camera_index(path: &Path, frames: &[FrameRecord]) -> std::io::Result<()> {
    let mut out = String::from("#timestamp [ns],filename\n");
    for f in frames {
        out.push_str(&format!("{},{}\n", f.timestamp, f.image_filename));
    }
    fs::write(path, out)
}

/// Pose at `t`: exact record on a timestamp hit, otherwise lerp/slerp between
/// the bracketing records.
pub fn interpolate_gt(gt: &[GroundTruthRecord], t: i64) -> Result<Transform, EurocError> {
    let (first, last) = match (gt.first(), gt.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(EurocError::EmptyGroundTruth),
    };
    if t < first.timestamp || t > last.timestamp {
        return Err(EurocError::OutOfRange {
            t,
            start: first.timestamp,
            end: last.timestamp,
        });
    }
    match gt.binary_search_by_key(&t, |r| r.timestamp) {
        Ok(i) => Ok(gt[i].pose()),
        Err(i) => {
            let (a, b) = (&gt[i - 1], &gt[i]);
            let s = (t - a.timestamp) as f64 / (b.timestamp - a.timestamp) as f64;
            let position = a.position + (b.position - a.position) * s;
            let q = a.orientation.slerp(&b.orientation, s);
            let r = quat_to_rotation(&q).expect("slerp of unit quaternions");
            Ok(Transform::new(r, position))
        }
    }
}

/// One relative ground-truth target per consecutive frame pair inside coverage.
///
/// Timestamps within `max_extrapolation` ns outside the coverage window are
/// clamped to the boundary pose; pairs further out are dropped and counted.
pub fn build_pairs(
    frames: &[FrameRecord],
    gt: &[GroundTruthRecord],
    max_extrapolation: i64,
) -> Result<PairSet, EurocError> {
    let (start, end) = match (gt.first(), gt.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => return Err(EurocError::EmptyGroundTruth),
    };
    let pose_at = |t: i64| -> Option<Transform> {
        if t < start - max_extrapolation || t > end + max_extrapolation {
            return None;
        }
        interpolate_gt(gt, t.clamp(start, end)).ok()
    };
    let mut pairs = Vec::new();
    let mut dropped = 0;
    let mut start_pose = None;
    for w in frames.windows(2) {
        match (pose_at(w[0].timestamp), pose_at(w[1].timestamp)) {
            (Some(pa), Some(pb)) => {
                let gt_relative = relative_pose(&pa, &pb);
                let (gt_dof, _) = transform_to_dof(&gt_relative);
                start_pose.get_or_insert(pa);
                pairs.push(AssociatedPair {
                    frame_a: w[0].clone(),
                    frame_b: w[1].clone(),
                    gt_relative,
                    gt_dof,
                });
            }
            _ => dropped += 1,
        }
    }
    match start_pose {
        Some(start_pose) => Ok(PairSet {
            pairs,
            dropped,
            start_pose,
        }),
        None => Err(EurocError::EmptyOverlap { dropped }),
    }
}

/// One row of the relative ground-truth CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeGtRow {
    pub timestamp_a: i64,
    pub timestamp_b: i64,
    pub dof: DofVector,
}

pub const RELATIVE_GT_HEADER: &str = "timestamp_a_ns,timestamp_b_ns,tx,ty,tz,rx,ry,rz";

pub fn write_relative_gt(path: &Path, rows: &[RelativeGtRow]) -> std::io::Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "{RELATIVE_GT_HEADER}")?;
    for r in rows {
        let d = r.dof;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.timestamp_a,
            r.timestamp_b,
            sig9(d.tx),
            sig9(d.ty),
            sig9(d.tz),
            sig9(d.rx),
            sig9(d.ry),
            sig9(d.rz)
        )?;
    }
    Ok(())
}

pub fn read_relative_gt(path: &Path) -> Result<Vec<RelativeGtRow>, EurocError> {
    let mut rows = Vec::new();
    read_rows(path, |line, rec| {
        if rec.get(0) == Some("timestamp_a_ns") {
            return Ok(());
        }
        if rec.len() < 8 {
            return Err(malformed(path, line, "expected 8 columns"));
        }
        let ts = |i: usize| -> Result<i64, EurocError> {
            rec[i]
                .parse()
                .map_err(|_| malformed(path, line, format!("bad timestamp {:?}", &rec[i])))
        };
        let mut v = [0.0; 6];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = rec[i + 2]
                .parse()
                .map_err(|_| malformed(path, line, format!("bad number {:?}", &rec[i + 2])))?;
        }
        rows.push(RelativeGtRow {
            timestamp_a: ts(0)?,
            timestamp_b: ts(1)?,
            dof: DofVector::from_array(v),
        });
        Ok(())
    })?;
    Ok(rows)
}

pub fn load_image(path: &Path) -> Result<GrayImage, EurocError> {
    load_image_with_min_dim(path, MIN_IMAGE_DIM)
}

/// Loads an 8/16-bit grayscale or RGB(A) PNG/PNM as intensities in [0, 1].
pub fn load_image_with_min_dim(path: &Path, min_dim: usize) -> Result<GrayImage, EurocError> {
    let bytes = fs::read(path).map_err(|source| EurocError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let unsupported = |message: String| EurocError::UnsupportedImage {
        path: path.to_path_buf(),
        message,
    };
    let dynamic = image::load_from_memory(&bytes).map_err(|e| unsupported(e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let luminance = |r: f32, g: f32, b: f32| 0.299 * r + 0.587 * g + 0.114 * b;
    let data: Vec<f32> = match &dynamic {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.as_raw().iter().map(|&v| v as f32 / 255.0).collect()
        }
        image::DynamicImage::ImageLumaA8(buf) => {
            buf.pixels().map(|p| p.0[0] as f32 / 255.0).collect()
        }
        image::DynamicImage::ImageLuma16(buf) => {
            buf.as_raw().iter().map(|&v| v as f32 / 65535.0).collect()
        }
        image::DynamicImage::ImageRgb8(buf) => buf
            .pixels()
            .map(|p| luminance(p.0[0] as f32, p.0[1] as f32, p.0[2] as f32) / 255.0)
            .collect(),
        image::DynamicImage::ImageRgba8(buf) => buf
            .pixels()
            .map(|p| luminance(p.0[0] as f32, p.0[1] as f32, p.0[2] as f32) / 255.0)
            .collect(),
        other => return Err(unsupported(format!("pixel format {:?}", other.color()))),
    };
    let img = GrayImage::new(w, h, data).map_err(|source| EurocError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    img.check_min_size(min_dim)
        .map_err(|source| EurocError::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(img)
}

/// Writes intensities as an 8-bit grayscale PNG (values clamped to [0, 1]).
pub fn save_png(path: &Path, img: &GrayImage) -> Result<(), EurocError> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::save_buffer(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| EurocError::UnsupportedImage {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
