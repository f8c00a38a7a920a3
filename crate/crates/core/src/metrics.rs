//! Relative and absolute trajectory error, reported per axis as RMSE.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{
    compose, dof_to_transform, orthonormalize, quat_to_rotation, relative_pose, rotation_to_euler,
    rotation_to_quat, DofVector, Quaternion, Transform,
};

/// Chained rotations are re-projected onto SO(3) this often.
pub const REORTHONORMALIZE_EVERY: usize = 100;

pub const RPE_HEADER: [&str; 7] = [
    "RPE Trans. X",
    "RPE Trans. Y",
    "RPE Trans. Z",
    "RPE Trans.",
    "RPE Rot. RX",
    "RPE Rot. RY",
    "RPE Rot. RZ",
];

pub const ATE_HEADER: [&str; 4] = ["ATE Trans. X", "ATE Trans. Y", "ATE Trans. Z", "Mean ATE"];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {est} estimates vs {gt} ground-truth entries")]
    LengthMismatch { est: usize, gt: usize },
    #[error("no usable pairs ({failed} failed)")]
    NoUsablePairs { failed: usize },
    #[error("empty input")]
    Empty,
    #[error("timestamps differ at pose {index}: {est} vs {gt}")]
    MisalignedTimestamps { index: usize, est: i64, gt: i64 },
    #[error("need at least 2 poses, got {0}")]
    TooFewPoses(usize),
    #[error("timestamp not strictly increasing at pose {0}")]
    NonMonotonic(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Timestamped absolute poses, strictly increasing in time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    poses: Vec<(i64, Transform)>,
}

impl Trajectory {
    pub fn new(poses: Vec<(i64, Transform)>) -> Result<Self, MetricsError> {
        if poses.len() < 2 {
            return Err(MetricsError::TooFewPoses(poses.len()));
        }
        if let Some(i) = (1..poses.len()).find(|&i| poses[i].0 <= poses[i - 1].0) {
            return Err(MetricsError::NonMonotonic(i));
        }
        Ok(Trajectory { poses })
    }

    pub fn poses(&self) -> &[(i64, Transform)] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Integrates per-pair motions from `start`; `timestamps` has one more entry than `rels`.
pub fn chain_relative(
    start: &Transform,
    timestamps: &[i64],
    rels: &[DofVector],
) -> Result<Trajectory, MetricsError> {
    if timestamps.len() != rels.len() + 1 {
        return Err(MetricsError::LengthMismatch {
            est: rels.len() + 1,
            gt: timestamps.len(),
        });
    }
    if !rels.iter().all(DofVector::is_finite) {
        return Err(MetricsError::NonFinite);
    }
    let mut poses = Vec::with_capacity(timestamps.len());
    let mut pose = *start;
    poses.push((timestamps[0], pose));
    for (i, rel) in rels.iter().enumerate() {
        pose = compose(&pose, &dof_to_transform(rel));
        if (i + 1) % REORTHONORMALIZE_EVERY == 0 {
            pose.rotation = orthonormalize(pose.rotation.matrix()).map_err(|_| MetricsError::NonFinite)?;
        }
        poses.push((timestamps[i + 1], pose));
    }
    Trajectory::new(poses)
}

pub fn rmse(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok((values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt())
}

fn rmse_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (sum / n.max(1) as f64).sqrt()
}

/// Translations in meters, rotations in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RpeReport {
    pub rpe_trans_x: f64,
    pub rpe_trans_y: f64,
    pub rpe_trans_z: f64,
    /// RMSE over all 3N translation error components.
    pub rpe_trans_mean: f64,
    pub rpe_rot_rx: f64,
    pub rpe_rot_ry: f64,
    pub rpe_rot_rz: f64,
    pub pairs: usize,
    pub failed: usize,
}

impl RpeReport {
    fn values(&self, units: AngleUnit) -> [f64; 7] {
        let k = units.per_radian();
        [
            self.rpe_trans_x,
            self.rpe_trans_y,
            self.rpe_trans_z,
            self.rpe_trans_mean,
            self.rpe_rot_rx * k,
            self.rpe_rot_ry * k,
            self.rpe_rot_rz * k,
        ]
    }
}

/// Per-axis position RMSE in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    pub ate_x: f64,
    pub ate_y: f64,
    pub ate_z: f64,
    /// Arithmetic mean of the three axis values.
    pub ate_mean: f64,
    pub poses: usize,
}

impl AteReport {
    fn values(&self) -> [f64; 4] {
        [self.ate_x, self.ate_y, self.ate_z, self.ate_mean]
    }
}

/// Pair errors are Δ = gt⁻¹·est; `failed` may be empty, otherwise it marks
/// pairs to exclude.
pub fn compute_rpe(
    est: &[DofVector],
    gt: &[DofVector],
    failed: &[bool],
) -> Result<RpeReport, MetricsError> {
    if est.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if !failed.is_empty() && failed.len() != est.len() {
        return Err(MetricsError::LengthMismatch {
            est: failed.len(),
            gt: gt.len(),
        });
    }
    let is_failed = |i: usize| failed.get(i).copied().unwrap_or(false);
    let errors: Vec<[f64; 6]> = (0..est.len())
        .filter(|&i| !is_failed(i))
        .map(|i| {
            // Δ is exactly the identity here; skip the rounding of RᵀR.
            if est[i] == gt[i] {
                return [0.0; 6];
            }
            let delta = relative_pose(&dof_to_transform(&gt[i]), &dof_to_transform(&est[i]));
            let e = rotation_to_euler(&delta.rotation).angles;
            let t = delta.translation;
            [t.x, t.y, t.z, e.rx, e.ry, e.rz]
        })
        .collect();
    let failed_count = est.len() - errors.len();
    if errors.is_empty() {
        return Err(MetricsError::NoUsablePairs {
            failed: failed_count,
        });
    }
    if errors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let axis = |k: usize| rmse_of(errors.iter().map(|e| e[k]));
    Ok(RpeReport {
        rpe_trans_x: axis(0),
        rpe_trans_y: axis(1),
        rpe_trans_z: axis(2),
        rpe_trans_mean: rmse_of(errors.iter().flat_map(|e| e[..3].to_vec())),
        rpe_rot_rx: axis(3),
        rpe_rot_ry: axis(4),
        rpe_rot_rz: axis(5),
        pairs: errors.len(),
        failed: failed_count,
    })
}

/// Rigid (R, t) minimizing Σ‖dst − (R·src + t)‖², without scale.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = src.len().max(1) as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    (r, mu_d - r * mu_s)
}

/// Position errors gt − est, optionally after rigidly aligning est onto gt.
pub fn compute_ate(est: &Trajectory, gt: &Trajectory, align: bool) -> Result<AteReport, MetricsError> {
    if est.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if let Some(i) = (0..est.len()).find(|&i| est.poses[i].0 != gt.poses[i].0) {
        return Err(MetricsError::MisalignedTimestamps {
            index: i,
            est: est.poses[i].0,
            gt: gt.poses[i].0,
        });
    }
    let mut p_est: Vec<Vector3<f64>> = est.poses.iter().map(|p| p.1.translation).collect();
    let p_gt: Vec<Vector3<f64>> = gt.poses.iter().map(|p| p.1.translation).collect();
    if p_est.iter().chain(&p_gt).any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(MetricsError::NonFinite);
    }
    if align {
        let (r, t) = align_rigid(&p_est, &p_gt);
        p_est.iter_mut().for_each(|p| *p = r * *p + t);
    }
    let axis = |k: usize| rmse_of(p_est.iter().zip(&p_gt).map(|(e, g)| g[k] - e[k]));
    let (x, y, z) = (axis(0), axis(1), axis(2));
    Ok(AteReport {
        ate_x: x,
        ate_y: y,
        ate_z: z,
        ate_mean: (x + y + z) / 3.0,
        poses: est.len(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Rad,
    Deg,
}

impl AngleUnit {
    pub fn per_radian(self) -> f64 {
        match self {
            AngleUnit::Rad => 1.0,
            AngleUnit::Deg => 180.0 / std::f64::consts::PI,
        }
    }
}

impl std::str::FromStr for AngleUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rad" => Ok(AngleUnit::Rad),
            "deg" => Ok(AngleUnit::Deg),
            other => Err(format!("unknown angle unit {other:?}, expected deg or rad")),
        }
    }
}

impl std::fmt::Display for AngleUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AngleUnit::Rad => "rad",
            AngleUnit::Deg => "deg",
        })
    }
}

/// One table row; `None` marks a run that produced no report.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub rpe: Option<RpeReport>,
    pub ate: Option<AteReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTables {
    pub rpe_csv: String,
    pub ate_csv: String,
    pub rpe_text: String,
    pub ate_text: String,
}

fn cells(values: Option<Vec<f64>>, width: usize) -> Vec<String> {
    match values {
        Some(v) => v.iter().map(|x| format!("{x:.4}")).collect(),
        None => vec!["NaN".to_string(); width],
    }
}

fn csv_table(header: &[&str], rows: &[(String, Vec<String>)]) -> String {
    let mut out = format!("Activation,{}\n", header.join(","));
    for (label, values) in rows {
        let _ = writeln!(out, "{label},{}", values.join(","));
    }
    out
}

fn text_table(caption: &str, header: &[&str], rows: &[(String, Vec<String>)]) -> String {
    let mut columns: Vec<Vec<String>> = vec![std::iter::once("Activation".to_string())
        .chain(rows.iter().map(|r| r.0.clone()))
        .collect()];
    for (k, h) in header.iter().enumerate() {
        columns.push(
            std::iter::once(h.to_string())
                .chain(rows.iter().map(|r| r.1[k].clone()))
                .collect(),
        );
    }
    let widths: Vec<usize> = columns.iter().map(|c| c.iter().map(|s| s.len()).max().unwrap_or(0)).collect();
    let mut out = format!("{caption}\n");
    for line in 0..=rows.len() {
        let row: Vec<String> = columns
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(k, (c, w))| {
                if k == 0 {
                    format!("{:<w$}", c[line])
                } else {
                    format!("{:>w$}", c[line])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", row.join("  ").trim_end());
    }
    out
}

/// Rows keep the given order; values print with 4 decimals.
pub fn emit_ablation_table(rows: &[AblationRow], units: AngleUnit) -> AblationTables {
    let rpe_rows: Vec<(String, Vec<String>)> = rows
        .iter()
        .map(|r| (r.label.clone(), cells(r.rpe.map(|x| x.values(units).to_vec()), RPE_HEADER.len())))
        .collect();
    let ate_rows: Vec<(String, Vec<String>)> = rows
        .iter()
        .map(|r| (r.label.clone(), cells(r.ate.map(|x| x.values().to_vec()), ATE_HEADER.len())))
        .collect();
    AblationTables {
        rpe_csv: csv_table(&RPE_HEADER, &rpe_rows),
        ate_csv: csv_table(&ATE_HEADER, &ate_rows),
        rpe_text: text_table(
            &format!("RPE (translation m, rotation {units})"),
            &RPE_HEADER,
            &rpe_rows,
        ),
        ate_text: text_table("ATE (m)", &ATE_HEADER, &ate_rows),
    }
}

fn seconds_text(ns: i64) -> String {
    let sign = if ns < 0 { "-" } else { "" };
    let a = ns.unsigned_abs();
    format!("{sign}{}.{:09}", a / 1_000_000_000, a % 1_000_000_000)
}

fn parse_seconds(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if frac.len() > 9 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) || int.is_empty() {
        return None;
    }
    let frac_ns: i64 = format!("{frac:0<9}").parse().ok()?;
    let ns = int.parse::<i64>().ok()?.checked_mul(1_000_000_000)?.checked_add(frac_ns)?;
    Some(if neg { -ns } else { ns })
}

/// One line per pose: `timestamp_s tx ty tz qx qy qz qw`.
pub fn trajectory_to_text(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (t, pose) in &traj.poses {
        let p = pose.translation;
        let q = rotation_to_quat(&pose.rotation);
        let _ = writeln!(
            out,
            "{} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            seconds_text(*t),
            p.x,
            p.y,
            p.z,
            q.x,
            q.y,
            q.z,
            q.w
        );
    }
    out
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), MetricsError> {
    fs::write(path, trajectory_to_text(traj)).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, MetricsError> {
    let text = fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |line: usize, message: String| MetricsError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut poses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(bad(i + 1, format!("expected 8 fields, found {}", fields.len())));
        }
        let t = parse_seconds(fields[0]).ok_or_else(|| bad(i + 1, format!("bad timestamp {:?}", fields[0])))?;
        let mut v = [0.0; 7];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = fields[k + 1]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad number {:?}", fields[k + 1])))?;
        }
        let q = Quaternion::new(v[6], v[3], v[4], v[5]);
        let r = quat_to_rotation(&q).map_err(|e| bad(i + 1, e.to_string()))?;
        poses.push((t, Transform::new(r, Vector3::new(v[0], v[1], v[2]))));
    }
    Trajectory::new(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    // Oracle: homogeneous 4×4 arithmetic with its own Euler formulas and a
    // general matrix inverse; nothing from se3 is reused.
    fn oracle_matrix(d: &[f64; 6]) -> Matrix4<f64> {
        let (sx, cx) = d[3].sin_cos();
        let (sy, cy) = d[4].sin_cos();
        let (sz, cz) = d[5].sin_cos();
        Matrix4::new(
            cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx, d[0],
            sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx, d[1],
            -sy, cy * sx, cy * cx, d[2],
            0.0, 0.0, 0.0, 1.0,
        )
    }

    fn oracle_rpe(est: &[[f64; 6]], gt: &[[f64; 6]]) -> [f64; 7] {
        let mut sq = [0.0; 6];
        for (e, g) in est.iter().zip(gt) {
            let d = oracle_matrix(g).try_inverse().unwrap() * oracle_matrix(e);
            let err = [
                d[(0, 3)],
                d[(1, 3)],
                d[(2, 3)],
                d[(2, 1)].atan2(d[(2, 2)]),
                (-d[(2, 0)]).atan2((d[(0, 0)].powi(2) + d[(1, 0)].powi(2)).sqrt()),
                d[(1, 0)].atan2(d[(0, 0)]),
            ];
            for k in 0..6 {
                sq[k] += err[k] * err[k];
            }
        }
        let n = est.len() as f64;
        let a = sq.map(|s| (s / n).sqrt());
        [a[0], a[1], a[2], ((sq[0] + sq[1] + sq[2]) / (3.0 * n)).sqrt(), a[3], a[4], a[5]]
    }

    fn random_dof(rng: &mut ChaCha8Rng) -> [f64; 6] {
        [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        ]
    }

    fn ts(n: usize) -> Vec<i64> {
        (0..n as i64).map(|i| 1_000 + 50 * i).collect()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[-2.5; 7]).unwrap(), 2.5);
        assert!(matches!(rmse(&[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn zero_rels_stay_at_start() {
        let start = Transform::from_translation(1.0, 2.0, 3.0);
        let t = chain_relative(&start, &ts(5), &[DofVector::zero(); 4]).unwrap();
        assert!(t.poses().iter().all(|p| p.1 == start));
    }

    #[test]
    fn pure_translation_chain() {
        let step = DofVector::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0);
        let t = chain_relative(&Transform::identity(), &ts(4), &[step; 3]).unwrap();
        assert!((t.poses()[3].1.translation - Vector3::new(0.3, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn square_walk() {
        let step = DofVector::new(0.1, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2);
        let t = chain_relative(&Transform::identity(), &ts(4), &[step; 3]).unwrap();
        let want = [[0.1, 0.0, 0.0], [0.1, 0.1, 0.0], [0.0, 0.1, 0.0]];
        for (p, w) in t.poses()[1..].iter().zip(want) {
            assert!((p.1.translation - Vector3::from(w)).norm() < 1e-15, "{}", p.1.translation);
        }
    }

    #[test]
    fn chain_rejects_bad_lengths_and_timestamps() {
        assert!(matches!(
            chain_relative(&Transform::identity(), &ts(3), &[DofVector::zero(); 3]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            chain_relative(&Transform::identity(), &[5, 5], &[DofVector::zero()]),
            Err(MetricsError::NonMonotonic(1))
        ));
    }

    #[test]
    fn long_chain_stays_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rels: Vec<DofVector> = (0..5000).map(|_| DofVector::from_array(random_dof(&mut rng))).collect();
        let t = chain_relative(&Transform::identity(), &ts(5001), &rels).unwrap();
        let last = t.poses().last().unwrap().1;
        assert!(crate::se3::orthogonality_error(last.rotation.matrix()) < 1e-12);
    }

    #[test]
    fn identical_inputs_give_zero_reports() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rels: Vec<DofVector> = (0..10).map(|_| DofVector::from_array(random_dof(&mut rng))).collect();
        let r = compute_rpe(&rels, &rels, &[]).unwrap();
        assert_eq!(r.values(AngleUnit::Rad), [0.0; 7]);
        let t = chain_relative(&Transform::identity(), &ts(11), &rels).unwrap();
        let a = compute_ate(&t, &t, true).unwrap();
        assert!(a.values().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(compute_ate(&t, &t, false).unwrap().values(), [0.0; 4]);
    }

    #[test]
    fn constant_offset_rpe() {
        let gt = vec![DofVector::zero(); 6];
        let est = vec![DofVector::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0); 6];
        let r = compute_rpe(&est, &gt, &[]).unwrap();
        assert!((r.rpe_trans_x - 0.1).abs() < 1e-15);
        assert_eq!([r.rpe_trans_y, r.rpe_trans_z, r.rpe_rot_rx, r.rpe_rot_ry, r.rpe_rot_rz], [0.0; 5]);
        assert!((r.rpe_trans_mean - 0.1 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn failed_pairs_are_excluded_and_counted() {
        let gt = vec![DofVector::zero(); 4];
        let mut est = vec![DofVector::zero(); 4];
        est[1] = DofVector::new(9.0, 9.0, 9.0, 0.0, 0.0, 0.0);
        let r = compute_rpe(&est, &gt, &[false, true, false, false]).unwrap();
        assert_eq!((r.pairs, r.failed, r.rpe_trans_x), (3, 1, 0.0));
        assert!(matches!(
            compute_rpe(&est, &gt, &[true; 4]),
            Err(MetricsError::NoUsablePairs { failed: 4 })
        ));
        assert!(matches!(compute_rpe(&est[..3], &gt, &[]), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn rpe_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.random_range(1..20);
            let est: Vec<[f64; 6]> = (0..n).map(|_| random_dof(&mut rng)).collect();
            let gt: Vec<[f64; 6]> = (0..n).map(|_| random_dof(&mut rng)).collect();
            let want = oracle_rpe(&est, &gt);
            let e: Vec<DofVector> = est.iter().copied().map(DofVector::from_array).collect();
            let g: Vec<DofVector> = gt.iter().copied().map(DofVector::from_array).collect();
            let got = compute_rpe(&e, &g, &[]).unwrap().values(AngleUnit::Rad);
            for k in 0..7 {
                assert!((got[k] - want[k]).abs() < 1e-12, "{k}: {} vs {}", got[k], want[k]);
            }
        }
    }

    #[test]
    fn ate_offset_without_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rels: Vec<DofVector> = (0..9).map(|_| DofVector::from_array(random_dof(&mut rng))).collect();
        let gt = chain_relative(&Transform::identity(), &ts(10), &rels).unwrap();
        let shifted = chain_relative(&Transform::from_translation(1.0, 0.0, 0.0), &ts(10), &[DofVector::zero(); 9]).unwrap();
        let est = Trajectory::new(
            gt.poses()
                .iter()
                .zip(shifted.poses())
                .map(|(g, s)| (g.0, compose(&s.1, &g.1)))
                .collect(),
        )
        .unwrap();
        let a = compute_ate(&est, &gt, false).unwrap();
        assert!((a.ate_x - 1.0).abs() < 1e-12);
        assert!(a.ate_y < 1e-12 && a.ate_z < 1e-12);
        assert!((a.ate_mean - 1.0 / 3.0).abs() < 1e-12);
        assert!(compute_ate(&est, &gt, true).unwrap().ate_mean < 1e-12);
    }

    #[test]
    fn ate_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(2..=20);
            let est: Vec<[f64; 6]> = (0..n).map(|_| random_dof(&mut rng)).collect();
            let gt: Vec<[f64; 6]> = (0..n).map(|_| random_dof(&mut rng)).collect();
            let mut sq = [0.0; 3];
            for (e, g) in est.iter().zip(&gt) {
                let (me, mg) = (oracle_matrix(e), oracle_matrix(g));
                for k in 0..3 {
                    sq[k] += (mg[(k, 3)] - me[(k, 3)]).powi(2);
                }
            }
            let want = sq.map(|s| (s / n as f64).sqrt());
            let traj = |v: &[[f64; 6]]| {
                Trajectory::new(
                    v.iter()
                        .enumerate()
                        .map(|(i, d)| (i as i64, dof_to_transform(&DofVector::from_array(*d))))
                        .collect(),
                )
                .unwrap()
            };
            let got = compute_ate(&traj(&est), &traj(&gt), false).unwrap();
            for (g, w) in [got.ate_x, got.ate_y, got.ate_z].iter().zip(want) {
                assert!((g - w).abs() < 1e-12);
            }
            assert_eq!(got.ate_mean, (got.ate_x + got.ate_y + got.ate_z) / 3.0);
        }
    }

    #[test]
    fn ate_rejects_misaligned_timestamps() {
        let a = Trajectory::new(vec![(0, Transform::identity()), (10, Transform::identity())]).unwrap();
        let b = Trajectory::new(vec![(0, Transform::identity()), (11, Transform::identity())]).unwrap();
        assert!(matches!(
            compute_ate(&a, &b, false),
            Err(MetricsError::MisalignedTimestamps { index: 1, .. })
        ));
        assert!(matches!(Trajectory::new(vec![]), Err(MetricsError::TooFewPoses(0))));
    }

    #[test]
    fn alignment_removes_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Vector3<f64>> = (0..12)
            .map(|_| Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        let motion = dof_to_transform(&DofVector::new(0.4, -1.0, 2.0, 0.3, -0.2, 1.1));
        let moved: Vec<Vector3<f64>> = pts.iter().map(|p| motion.transform_point(p)).collect();
        let (r, t) = align_rigid(&pts, &moved);
        assert!((r - motion.rotation.matrix()).amax() < 1e-12);
        assert!((t - motion.translation).norm() < 1e-12);
    }

    #[test]
    fn swapping_is_symmetric_without_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mk = |rng: &mut ChaCha8Rng| {
            DofVector::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0, 0.0, 0.0)
        };
        let a: Vec<DofVector> = (0..15).map(|_| mk(&mut rng)).collect();
        let b: Vec<DofVector> = (0..15).map(|_| mk(&mut rng)).collect();
        let ab = compute_rpe(&a, &b, &[]).unwrap();
        let ba = compute_rpe(&b, &a, &[]).unwrap();
        assert!((ab.rpe_trans_x - ba.rpe_trans_x).abs() < 1e-15);
        assert!((ab.rpe_trans_mean - ba.rpe_trans_mean).abs() < 1e-15);
        let doubled: Vec<DofVector> = a
            .iter()
            .zip(&b)
            .map(|(x, g)| DofVector::from_array(std::array::from_fn(|k| g.get(k) + 2.0 * (x.get(k) - g.get(k)))))
            .collect();
        let d = compute_rpe(&doubled, &b, &[]).unwrap();
        assert!((d.rpe_trans_y - 2.0 * ab.rpe_trans_y).abs() < 1e-14);
    }

    #[test]
    fn table_schema_and_formatting() {
        let rows = vec![
            AblationRow {
                label: "Tanh".into(),
                rpe: Some(RpeReport::default()),
                ate: Some(AteReport {
                    ate_x: 1.2642,
                    ate_y: 1.4221,
                    ate_z: 1.4629,
                    ate_mean: (1.2642 + 1.4221 + 1.4629) / 3.0,
                    poses: 3,
                }),
            },
            AblationRow {
                label: "SELU".into(),
                rpe: None,
                ate: None,
            },
        ];
        let t = emit_ablation_table(&rows, AngleUnit::Rad);
        let rpe: Vec<&str> = t.rpe_csv.lines().collect();
        assert_eq!(
            rpe[0],
            "Activation,RPE Trans. X,RPE Trans. Y,RPE Trans. Z,RPE Trans.,RPE Rot. RX,RPE Rot. RY,RPE Rot. RZ"
        );
        assert_eq!(rpe[1], "Tanh,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000");
        assert_eq!(rpe[2], "SELU,NaN,NaN,NaN,NaN,NaN,NaN,NaN");
        let ate: Vec<&str> = t.ate_csv.lines().collect();
        assert_eq!(ate[0], "Activation,ATE Trans. X,ATE Trans. Y,ATE Trans. Z,Mean ATE");
        assert_eq!(ate[1], "Tanh,1.2642,1.4221,1.4629,1.3831");
        assert_eq!(t.ate_text.lines().count(), 4);
        assert!(t.rpe_text.lines().nth(2).unwrap().starts_with("Tanh "));
    }

    #[test]
    fn degrees_scale_rotation_columns_only() {
        let r = RpeReport {
            rpe_trans_x: 1.0,
            rpe_rot_rz: std::f64::consts::PI,
            ..Default::default()
        };
        let row = [AblationRow { label: "x".into(), rpe: Some(r), ate: None }];
        let csv = emit_ablation_table(&row, AngleUnit::Deg).rpe_csv;
        assert_eq!(csv.lines().nth(1).unwrap(), "x,1.0000,0.0000,0.0000,0.0000,0.0000,0.0000,180.0000");
    }

    #[test]
    fn trajectory_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rels: Vec<DofVector> = (0..6).map(|_| DofVector::from_array(random_dof(&mut rng))).collect();
        let stamps: Vec<i64> = (0..7).map(|i| 1_403_715_273_262_142_976 + i * 50_000_000).collect();
        let t = chain_relative(&Transform::identity(), &stamps, &rels).unwrap();
        let text = trajectory_to_text(&t);
        assert!(text.starts_with("1403715273.262142976 "));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        write_trajectory(&path, &t).unwrap();
        let back = read_trajectory(&path).unwrap();
        for (a, b) in back.poses().iter().zip(t.poses()) {
            assert_eq!(a.0, b.0);
            assert!((a.1.translation - b.1.translation).norm() < 1e-8);
            assert!(a.1.rotation.angle_to(&b.1.rotation) < 1e-8);
        }
    }

    #[test]
    fn seconds_parse_exactly() {
        assert_eq!(parse_seconds("12.5"), Some(12_500_000_000));
        assert_eq!(parse_seconds("-0.000000001"), Some(-1));
        assert_eq!(parse_seconds("1.0000000001"), None);
        assert_eq!(seconds_text(-1), "-0.000000001");
    }
}
