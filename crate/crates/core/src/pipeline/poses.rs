//! Per-pair pose CSVs written by the frontend and the refiner.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{write_atomic, PipelineError};
use crate::euroc::RelativeGtRow;
use crate::format::sig9;
use crate::frontend::apply_gt_scale;
use crate::se3::DofVector;

pub const POSE_HEADER: &str = "timestamp_a_ns,timestamp_b_ns,tx,ty,tz,rx,ry,rz,inliers,failed";

/// Whether translations are unit directions or metric steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TranslationScale {
    Unit,
    Metric,
}

impl TranslationScale {
    fn tag(self) -> &'static str {
        match self {
            TranslationScale::Unit => "unit",
            TranslationScale::Metric => "metric",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseRow {
    pub timestamp_a: i64,
    pub timestamp_b: i64,
    pub dof: DofVector,
    pub inliers: usize,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseFile {
    pub scale: TranslationScale,
    pub rows: Vec<PoseRow>,
}

pub fn pose_csv_text(file: &PoseFile) -> String {
    let mut out = format!("# translation={}\n{POSE_HEADER}\n", file.scale.tag());
    for r in &file.rows {
        let d = r.dof;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.timestamp_a,
            r.timestamp_b,
            sig9(d.tx),
            sig9(d.ty),
            sig9(d.tz),
            sig9(d.rx),
            sig9(d.ry),
            sig9(d.rz),
            r.inliers,
            r.failed as u8
        );
    }
    out
}

pub fn write_pose_csv(path: &Path, file: &PoseFile) -> Result<(), PipelineError> {
    write_atomic(path, pose_csv_text(file).as_bytes())
}

pub fn read_pose_csv(path: &Path) -> Result<PoseFile, PipelineError> {
    let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
    let bad = |line: usize, message: String| PipelineError::Format {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate();
    let scale = match lines.next().map(|(_, l)| l.trim()) {
        Some("# translation=unit") => TranslationScale::Unit,
        Some("# translation=metric") => TranslationScale::Metric,
        _ => return Err(bad(1, "expected '# translation=unit|metric'".into())),
    };
    match lines.next() {
        Some((_, h)) if h.trim() == POSE_HEADER => {}
        _ => return Err(bad(2, format!("expected header {POSE_HEADER}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 10 {
            return Err(bad(i + 1, format!("expected 10 columns, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<i64>().map_err(|_| bad(i + 1, format!("bad integer {s:?}")));
        let mut v = [0.0; 6];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = f[k + 2]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad number {:?}", f[k + 2])))?;
        }
        let failed = match f[9] {
            "0" => false,
            "1" => true,
            other => return Err(bad(i + 1, format!("bad failed flag {other:?}"))),
        };
        rows.push(PoseRow {
            timestamp_a: int(f[0])?,
            timestamp_b: int(f[1])?,
            dof: DofVector::from_array(v),
            inliers: int(f[8])? as usize,
            failed,
        });
    }
    Ok(PoseFile { scale, rows })
}

/// An estimate joined to its ground-truth target, translation in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignedPair {
    pub timestamp_a: i64,
    pub timestamp_b: i64,
    pub estimate: DofVector,
    pub gt: DofVector,
    pub failed: bool,
}

/// Pairs every ground-truth row with the estimate of the same frame pair, in
/// ground-truth order. Estimates outside ground-truth coverage are ignored;
/// a ground-truth row without an estimate is an error naming that row.
pub fn align_to_gt(
    est: &PoseFile,
    gt: &[RelativeGtRow],
    est_path: &Path,
) -> Result<Vec<AlignedPair>, PipelineError> {
    let index: HashMap<(i64, i64), &PoseRow> =
        est.rows.iter().map(|r| ((r.timestamp_a, r.timestamp_b), r)).collect();
    if gt.is_empty() {
        return Err(PipelineError::Alignment {
            path: est_path.to_path_buf(),
            message: "relative ground truth is empty".into(),
        });
    }
    gt.iter()
        .enumerate()
        .map(|(i, g)| {
            let r = index.get(&(g.timestamp_a, g.timestamp_b)).ok_or_else(|| PipelineError::Alignment {
                path: est_path.to_path_buf(),
                message: format!(
                    "ground-truth row {} ({} -> {}) has no matching estimate",
                    i + 1,
                    g.timestamp_a,
                    g.timestamp_b
                ),
            })?;
            let estimate = match est.scale {
                TranslationScale::Unit => apply_gt_scale(&r.dof, &g.dof),
                TranslationScale::Metric => r.dof,
            };
            Ok(AlignedPair {
                timestamp_a: g.timestamp_a,
                timestamp_b: g.timestamp_b,
                estimate,
                gt: g.dof,
                failed: r.failed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PoseFile {
        PoseFile {
            scale: TranslationScale::Unit,
            rows: vec![
                PoseRow {
                    timestamp_a: 10,
                    timestamp_b: 20,
                    dof: DofVector::new(0.6, 0.0, 0.8, 0.01, -0.02, 0.125),
                    inliers: 42,
                    failed: false,
                },
                PoseRow {
                    timestamp_a: 20,
                    timestamp_b: 30,
                    dof: DofVector::zero(),
                    inliers: 0,
                    failed: true,
                },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.csv");
        write_pose_csv(&p, &sample()).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# translation=unit\ntimestamp_a_ns,"));
        assert!(text.contains("\n10,20,0.6,0,0.8,0.01,-0.02,0.125,42,0\n"));
        assert_eq!(read_pose_csv(&p).unwrap(), sample());
    }

    #[test]
    fn unit_rows_take_gt_step_length() {
        let gt = [
            RelativeGtRow {
                timestamp_a: 10,
                timestamp_b: 20,
                dof: DofVector::new(0.0, 0.0, 2.0, 0.0, 0.0, 0.0),
            },
            RelativeGtRow {
                timestamp_a: 20,
                timestamp_b: 30,
                dof: DofVector::zero(),
            },
        ];
        let a = align_to_gt(&sample(), &gt, Path::new("raw.csv")).unwrap();
        assert!((a[0].estimate.tx - 1.2).abs() < 1e-15 && (a[0].estimate.tz - 1.6).abs() < 1e-15);
        assert!(a[1].failed);
    }

    #[test]
    fn missing_estimate_names_the_row() {
        let gt = [RelativeGtRow {
            timestamp_a: 11,
            timestamp_b: 20,
            dof: DofVector::zero(),
        }];
        let err = align_to_gt(&sample(), &gt, Path::new("raw.csv")).unwrap_err();
        assert!(err.to_string().contains("row 1 (11 -> 20)"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_missing_scale_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.csv");
        fs::write(&p, format!("{POSE_HEADER}\n")).unwrap();
        assert!(matches!(read_pose_csv(&p), Err(PipelineError::Format { .. })));
    }
}
