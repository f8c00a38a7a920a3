//! Rotation and translation-direction recovery from an essential matrix,
//! disambiguated by cheirality voting over triangulated inliers.

use nalgebra::{Matrix3, Vector2, Vector3};

use super::epipolar::{CameraIntrinsics, EssentialMatrix};
use super::flow::Correspondences;
use super::GeometryError;
use crate::se3::Rotation;

/// Sine of the ray angle below which a point is treated as having no parallax.
const PARALLAX_SIN: f64 = 1e-12;

/// Motion of camera b relative to camera a in the sense X_b = R·X_a + t,
/// with |t| = 1 (monocular scale is unknown).
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredPose {
    pub rotation: Rotation,
    pub translation_direction: Vector3<f64>,
    pub inlier_count: usize,
    /// Positive-depth votes for (R₁, +t), (R₁, −t), (R₂, +t), (R₂, −t).
    pub cheirality_votes: [usize; 4],
    /// Index into `cheirality_votes` of the chosen candidate.
    pub chosen: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangulation {
    pub point: Vector3<f64>,
    pub depth_a: f64,
    pub depth_b: f64,
    /// Rays (near) parallel or zero baseline; excluded from voting.
    pub no_parallax: bool,
}

impl Triangulation {
    pub fn in_front_of_both(&self) -> bool {
        !self.no_parallax && self.depth_a > 0.0 && self.depth_b > 0.0
    }
}

/// Midpoint triangulation of normalized image points for the motion (R, t).
/// The point is returned in camera-a coordinates.
pub fn triangulate(
    x_a: &Vector2<f64>,
    x_b: &Vector2<f64>,
    rotation: &Rotation,
    translation: &Vector3<f64>,
) -> Triangulation {
    let rt = rotation.transpose();
    let center_b = -rt.rotate(translation);
    let ray_a = Vector3::new(x_a.x, x_a.y, 1.0);
    let ray_b = rt.rotate(&Vector3::new(x_b.x, x_b.y, 1.0));

    let a11 = ray_a.dot(&ray_a);
    let a12 = -ray_a.dot(&ray_b);
    let a22 = ray_b.dot(&ray_b);
    let det = a11 * a22 - a12 * a12;
    let sin2 = det / (a11 * a22);
    if translation.norm() < 1e-12 || sin2 < PARALLAX_SIN * PARALLAX_SIN {
        return Triangulation {
            point: Vector3::zeros(),
            depth_a: 0.0,
            depth_b: 0.0,
            no_parallax: true,
        };
    }
    let r1 = ray_a.dot(&center_b);
    let r2 = -ray_b.dot(&center_b);
    let lambda_a = (a22 * r1 - a12 * r2) / det;
    let lambda_b = (a11 * r2 - a12 * r1) / det;
    let point = 0.5 * (ray_a * lambda_a + center_b + ray_b * lambda_b);
    let in_b = rotation.rotate(&point) + translation;
    Triangulation {
        point,
        depth_a: point.z,
        depth_b: in_b.z,
        no_parallax: false,
    }
}

/// The four (R, t) candidates of an essential matrix, in voting order.
pub fn pose_candidates(e: &Matrix3<f64>) -> Result<[(Rotation, Vector3<f64>); 4], GeometryError> {
    let svd = e.svd(true, true);
    let (mut u, mut v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateGeometry),
    };
    // Order columns so the null direction is last.
    let s = svd.singular_values;
    let smallest = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(2);
    if smallest != 2 {
        u.swap_columns(smallest, 2);
        v_t.swap_rows(smallest, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = Rotation::from_matrix_unchecked(u * w * v_t);
    let r2 = Rotation::from_matrix_unchecked(u * w.transpose() * v_t);
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    Ok([(r1, t), (r1, -t), (r2, t), (r2, -t)])
}

pub fn recover_pose(
    e: &EssentialMatrix,
    c: &Correspondences,
    k: &CameraIntrinsics,
) -> Result<RecoveredPose, GeometryError> {
    let inliers: Vec<(Vector2<f64>, Vector2<f64>)> = c
        .pairs()
        .iter()
        .zip(&e.inliers)
        .filter(|(_, &m)| m)
        .map(|(p, _)| (k.normalize(&p.a), k.normalize(&p.b)))
        .collect();
    if inliers.len() < 5 {
        return Err(GeometryError::InsufficientCorrespondences {
            got: inliers.len(),
            need: 5,
        });
    }
    let candidates = pose_candidates(&e.matrix)?;
    let mut votes = [0usize; 4];
    let mut usable = [0usize; 4];
    for (i, (r, t)) in candidates.iter().enumerate() {
        for (xa, xb) in &inliers {
            let tri = triangulate(xa, xb, r, t);
            if !tri.no_parallax {
                usable[i] += 1;
                if tri.in_front_of_both() {
                    votes[i] += 1;
                }
            }
        }
    }
    let chosen = (0..4)
        .max_by(|&a, &b| votes[a].cmp(&votes[b]).then(b.cmp(&a)))
        .expect("four candidates");
    if usable[chosen] == 0 || 2 * votes[chosen] <= usable[chosen] {
        return Err(GeometryError::CheiralityAmbiguous { votes });
    }
    let (rotation, translation_direction) = candidates[chosen];
    Ok(RecoveredPose {
        rotation,
        translation_direction,
        inlier_count: inliers.len(),
        cheirality_votes: votes,
        chosen,
    })
}
