//! Rigid-body transform algebra.
//!
//! Rotations are stored as 3×3 matrices. Quaternions (Hamilton, scalar-first)
//! and Euler angles (R = Rz·Ry·Rx) appear only at I/O and metric boundaries.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Tolerance used when checking SO(3) membership.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Drift above which `compose` re-projects its product onto SO(3).
const COMPOSE_DRIFT: f64 = 1e-12;

/// Cosine of pitch below which the Euler extraction is treated as gimbal locked.
const GIMBAL_COS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("degenerate quaternion (norm {0:e})")]
    DegenerateQuaternion(f64),
    #[error("matrix cannot be projected onto SO(3): {0}")]
    DegenerateMatrix(&'static str),
    #[error("matrix is not a rotation (orthogonality error {orthogonality:e}, det {det})")]
    NotARotation { orthogonality: f64, det: f64 },
}

/// A 3×3 rotation matrix, R ∈ SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Checks orthogonality and determinant against [`ROTATION_TOLERANCE`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, Se3Error> {
        let orthogonality = orthogonality_error(&m);
        let det = m.determinant();
        if !orthogonality.is_finite()
            || orthogonality > ROTATION_TOLERANCE
            || (det - 1.0).abs() > ROTATION_TOLERANCE
        {
            return Err(Se3Error::NotARotation { orthogonality, det });
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix the caller knows to be a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Rotation::identity();
        }
        let k = axis / n;
        let kx = skew(&k);
        let m = Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos());
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Geodesic angle of this rotation, in radians.
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        // acos loses precision near zero; recover the small-angle regime from the skew part.
        let skew_part = Vector3::new(
            self.0[(2, 1)] - self.0[(1, 2)],
            self.0[(0, 2)] - self.0[(2, 0)],
            self.0[(1, 0)] - self.0[(0, 1)],
        );
        let s = 0.5 * skew_part.norm();
        s.atan2(c)
    }

    /// Angle of Rᵀ·other.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        Rotation(self.0.transpose() * other.0).angle()
    }

    /// Projects the product back onto SO(3) only if it has drifted.
    fn repaired(m: Matrix3<f64>) -> Rotation {
        if orthogonality_error(&m) > COMPOSE_DRIFT {
            orthonormalize(&m).unwrap_or(Rotation(m))
        } else {
            Rotation(m)
        }
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation::repaired(self.0 * rhs.0)
    }
}

/// A rigid-body transform (R, t) in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Transform {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Transform::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Transform::new(Rotation::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Transform::new(rotation, Vector3::zeros())
    }

    /// 4×4 homogeneous matrix with bottom row (0, 0, 0, 1).
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn compose(&self, other: &Transform) -> Transform {
        compose(self, other)
    }

    pub fn inverse(&self) -> Transform {
        invert(self)
    }
}

/// `a · b`: apply `b` first, then `a`.
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    Transform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation.rotate(&b.translation) + a.translation,
    }
}

/// T⁻¹ = (Rᵀ, −Rᵀp).
pub fn invert(t: &Transform) -> Transform {
    let rt = t.rotation.transpose();
    Transform {
        rotation: rt,
        translation: -rt.rotate(&t.translation),
    }
}

/// Pose of `world_b` expressed in the frame of `world_a`: T_a⁻¹ · T_b.
pub fn relative_pose(world_a: &Transform, world_b: &Transform) -> Transform {
    compose(&invert(world_a), world_b)
}

/// Nearest rotation in Frobenius norm, via SVD with determinant correction.
pub fn orthonormalize(m: &Matrix3<f64>) -> Result<Rotation, Se3Error> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Se3Error::DegenerateMatrix("non-finite entries"));
    }
    let det = m.determinant();
    if det <= 0.0 {
        return Err(Se3Error::DegenerateMatrix("non-positive determinant"));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Se3Error::DegenerateMatrix("svd failed")),
    };
    let mut correction = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        correction[(2, 2)] = -1.0;
    }
    let r = u * correction * v_t;
    if r.determinant() <= 0.0 {
        return Err(Se3Error::DegenerateMatrix("corrected product has det <= 0"));
    }
    Ok(Rotation(r))
}

/// Maximum absolute entry of RᵀR − I.
pub fn orthogonality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit quaternion, Hamilton convention, scalar first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Unit-norm copy with canonical non-negative scalar part.
    pub fn normalized(&self) -> Result<Quaternion, Se3Error> {
        let n = self.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Se3Error::DegenerateQuaternion(n));
        }
        let s = if self.w < 0.0 { -1.0 / n } else { 1.0 / n };
        Ok(Quaternion::new(self.w * s, self.x * s, self.y * s, self.z * s))
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Spherical linear interpolation along the shorter arc. `s` in [0, 1].
    pub fn slerp(&self, other: &Quaternion, s: f64) -> Quaternion {
        let mut b = *other;
        let mut d = self.dot(other);
        if d < 0.0 {
            b = Quaternion::new(-b.w, -b.x, -b.y, -b.z);
            d = -d;
        }
        let (wa, wb) = if d > 1.0 - 1e-12 {
            (1.0 - s, s)
        } else {
            let theta = d.clamp(-1.0, 1.0).acos();
            let st = theta.sin();
            (((1.0 - s) * theta).sin() / st, (s * theta).sin() / st)
        };
        let q = Quaternion::new(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        );
        q.normalized().unwrap_or(*self)
    }
}

/// Hamilton quaternion → rotation matrix. The input is normalized first.
pub fn quat_to_rotation(q: &Quaternion) -> Result<Rotation, Se3Error> {
    let q = q.normalized()?;
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Ok(Rotation(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )))
}

/// Four-branch (Shepperd) extraction; result has w ≥ 0.
pub fn rotation_to_quat(r: &Rotation) -> Quaternion {
    let m = r.matrix();
    let trace = m.trace();
    let q = if trace > m[(0, 0)] && trace > m[(1, 1)] && trace > m[(2, 2)] {
        let s = (1.0 + trace).sqrt() * 2.0;
        Quaternion::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    q.normalized().expect("rotation matrices give non-degenerate quaternions")
}

/// Euler angles for R = Rz(rz)·Ry(ry)·Rx(rx), in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EulerAngles {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

/// Result of factoring a rotation into Euler angles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerDecomposition {
    pub angles: EulerAngles,
    /// Pitch within 1e-6 of ±π/2: `rx` was set to 0 and the free angle folded into `rz`.
    pub gimbal_lock: bool,
}

pub fn euler_to_rotation(e: &EulerAngles) -> Rotation {
    Rotation(
        Rotation::about_z(e.rz).0 * Rotation::about_y(e.ry).0 * Rotation::about_x(e.rx).0,
    )
}

pub fn rotation_to_euler(r: &Rotation) -> EulerDecomposition {
    let m = r.matrix();
    let cos_pitch = m[(0, 0)].hypot(m[(1, 0)]);
    let sin_pitch = (-m[(2, 0)]).clamp(-1.0, 1.0);
    if cos_pitch < GIMBAL_COS {
        let ry = if sin_pitch > 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        EulerDecomposition {
            angles: EulerAngles {
                rx: 0.0,
                ry,
                rz: canonical_angle((-m[(0, 1)]).atan2(m[(1, 1)])),
            },
            gimbal_lock: true,
        }
    } else {
        EulerDecomposition {
            angles: EulerAngles {
                rx: canonical_angle(m[(2, 1)].atan2(m[(2, 2)])),
                ry: sin_pitch.atan2(cos_pitch),
                rz: canonical_angle(m[(1, 0)].atan2(m[(0, 0)])),
            },
            gimbal_lock: false,
        }
    }
}

/// Maps atan2's −π onto π so angles live in (−π, π].
fn canonical_angle(a: f64) -> f64 {
    if a <= -std::f64::consts::PI {
        a + 2.0 * std::f64::consts::PI
    } else {
        a
    }
}

/// Six-scalar pose decomposition: translation in meters, Euler angles in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DofVector {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

/// Column names of the six degrees of freedom, in index order.
pub const DOF_NAMES: [&str; 6] = ["tx", "ty", "tz", "rx", "ry", "rz"];

impl DofVector {
    pub fn new(tx: f64, ty: f64, tz: f64, rx: f64, ry: f64, rz: f64) -> Self {
        DofVector {
            tx,
            ty,
            tz,
            rx,
            ry,
            rz,
        }
    }

    pub fn zero() -> Self {
        DofVector::default()
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        DofVector::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz]
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.tx, self.ty, self.tz)
    }

    pub fn euler(&self) -> EulerAngles {
        EulerAngles {
            rx: self.rx,
            ry: self.ry,
            rz: self.rz,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn get(&self, index: usize) -> f64 {
        self.to_array()[index]
    }
}

impl fmt::Display for DofVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {}, {})",
            self.tx, self.ty, self.tz, self.rx, self.ry, self.rz
        )
    }
}

/// Translation copied verbatim; rotation factored as Rz·Ry·Rx.
pub fn transform_to_dof(t: &Transform) -> (DofVector, bool) {
    let e = rotation_to_euler(&t.rotation);
    let d = DofVector::new(
        t.translation.x,
        t.translation.y,
        t.translation.z,
        e.angles.rx,
        e.angles.ry,
        e.angles.rz,
    );
    (d, e.gimbal_lock)
}

pub fn dof_to_transform(d: &DofVector) -> Transform {
    Transform::new(euler_to_rotation(&d.euler()), d.translation())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_mat_close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) {
        let d = (a - b).amax();
        assert!(d <= tol, "matrices differ by {d:e}\n{a}\n{b}");
    }

    fn random_transform(seed: [f64; 7]) -> Transform {
        let q = Quaternion::new(seed[0], seed[1], seed[2], seed[3]);
        let r = quat_to_rotation(&q).unwrap_or(Rotation::identity());
        Transform::new(r, Vector3::new(seed[4], seed[5], seed[6]))
    }

    #[test]
    fn compose_identity_is_neutral() {
        let t = Transform::new(Rotation::about_x(0.3), Vector3::new(1.0, -2.0, 0.5));
        let c = compose(&Transform::identity(), &t);
        assert_mat_close(c.rotation.matrix(), t.rotation.matrix(), 1e-15);
        assert_eq!(c.translation, t.translation);
    }

    #[test]
    fn compose_two_quarter_turns() {
        let q = Transform::from_rotation(Rotation::about_z(FRAC_PI_2));
        let half = compose(&q, &q);
        // Rz(180°) by hand.
        let expected = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert_mat_close(half.rotation.matrix(), &expected, 1e-15);
        assert_eq!(half.translation, Vector3::zeros());
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = Transform::new(
            Rotation::from_axis_angle(&Vector3::new(1.0, 2.0, -0.5), 1.1),
            Vector3::new(0.3, 4.0, -2.0),
        );
        let c = compose(&t, &invert(&t));
        assert_mat_close(c.rotation.matrix(), &Matrix3::identity(), 1e-9);
        assert!(c.translation.norm() < 1e-9);
    }

    #[test]
    fn invert_cases() {
        let i = invert(&Transform::identity());
        assert_eq!(i, Transform::identity());

        let p = invert(&Transform::from_translation(1.0, 2.0, 3.0));
        assert_eq!(p.translation, Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(p.rotation, Rotation::identity());

        let t = Transform::new(Rotation::about_z(FRAC_PI_2), Vector3::new(1.0, 0.0, 0.0));
        let inv = invert(&t);
        assert_mat_close(
            inv.rotation.matrix(),
            Rotation::about_z(-FRAC_PI_2).matrix(),
            1e-15,
        );
        // −Rᵀp with Rᵀ = Rz(−90°): Rz(−90°)(1,0,0) = (0,−1,0), negated → (0,1,0).
        assert!((inv.translation - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn relative_pose_cases() {
        let t = Transform::new(Rotation::about_y(0.4), Vector3::new(2.0, 0.0, 1.0));
        let same = relative_pose(&t, &t);
        assert_mat_close(same.rotation.matrix(), &Matrix3::identity(), 1e-12);
        assert!(same.translation.norm() < 1e-12);

        let from_origin = relative_pose(&Transform::identity(), &t);
        assert_mat_close(from_origin.rotation.matrix(), t.rotation.matrix(), 1e-15);
        assert_eq!(from_origin.translation, t.translation);

        let a = Transform::from_translation(1.0, 0.0, 0.0);
        let b = Transform::from_translation(1.0, 1.0, 0.0);
        let rel = relative_pose(&a, &b);
        assert_eq!(rel.translation, Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(rel.rotation, Rotation::identity());

        // Frame a rotated 90° about z: the +y world step is +x in frame a.
        let a = Transform::new(Rotation::about_z(FRAC_PI_2), Vector3::new(1.0, 0.0, 0.0));
        let b = Transform::new(Rotation::about_z(FRAC_PI_2), Vector3::new(1.0, 1.0, 0.0));
        let rel = relative_pose(&a, &b);
        assert!((rel.translation - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn quaternion_cases() {
        let r = quat_to_rotation(&Quaternion::IDENTITY).unwrap();
        assert_eq!(r, Rotation::identity());

        let h = 0.5f64.sqrt();
        let r = quat_to_rotation(&Quaternion::new(h, 0.0, 0.0, h)).unwrap();
        assert_mat_close(r.matrix(), Rotation::about_z(FRAC_PI_2).matrix(), 1e-15);

        let r = quat_to_rotation(&Quaternion::new(0.0, 1.0, 0.0, 0.0)).unwrap();
        assert_mat_close(
            r.matrix(),
            &Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
            0.0,
        );

        assert!(matches!(
            quat_to_rotation(&Quaternion::new(0.0, 0.0, 0.0, 0.0)),
            Err(Se3Error::DegenerateQuaternion(_))
        ));
    }

    #[test]
    fn rotation_to_quat_cases() {
        assert_eq!(rotation_to_quat(&Rotation::identity()), Quaternion::IDENTITY);
        let q = rotation_to_quat(&Rotation::about_z(PI));
        assert!((q.w).abs() < 1e-15 && q.x.abs() < 1e-15 && q.y.abs() < 1e-15);
        assert!((q.z.abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quaternion_round_trip_many() {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = Quaternion::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let r = quat_to_rotation(&q).unwrap();
            let back = quat_to_rotation(&rotation_to_quat(&r)).unwrap();
            assert_mat_close(back.matrix(), r.matrix(), 1e-9);
            let qn = q.normalized().unwrap();
            let q2 = rotation_to_quat(&r);
            assert!(q2.w >= 0.0);
            assert!((qn.dot(&q2).abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn euler_cases() {
        assert_eq!(
            euler_to_rotation(&EulerAngles::default()).matrix(),
            &Matrix3::identity()
        );
        let r = euler_to_rotation(&EulerAngles {
            rx: 0.0,
            ry: 0.0,
            rz: FRAC_PI_2,
        });
        assert_mat_close(r.matrix(), Rotation::about_z(FRAC_PI_2).matrix(), 1e-15);
    }

    #[test]
    fn gimbal_lock_uses_canonical_branch() {
        for &pitch in &[FRAC_PI_2, -FRAC_PI_2] {
            let e = EulerAngles {
                rx: 0.7,
                ry: pitch,
                rz: -0.2,
            };
            let r = euler_to_rotation(&e);
            let d = rotation_to_euler(&r);
            assert!(d.gimbal_lock);
            assert_eq!(d.angles.rx, 0.0);
            assert_eq!(d.angles.ry, pitch);
            // The folded angle still reproduces the matrix.
            assert_mat_close(euler_to_rotation(&d.angles).matrix(), r.matrix(), 1e-9);
        }
        let d = rotation_to_euler(&euler_to_rotation(&EulerAngles {
            rx: 0.1,
            ry: 1.4,
            rz: 0.2,
        }));
        assert!(!d.gimbal_lock);
    }

    #[test]
    fn dof_cases() {
        let (d, lock) = transform_to_dof(&Transform::identity());
        assert_eq!(d, DofVector::zero());
        assert!(!lock);
        let (d, _) = transform_to_dof(&Transform::from_translation(1.0, 2.0, 3.0));
        assert_eq!(d, DofVector::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0));
        let t = dof_to_transform(&DofVector::new(0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2));
        assert_mat_close(t.rotation.matrix(), Rotation::about_z(FRAC_PI_2).matrix(), 1e-15);
    }

    /// Independent polar-decomposition oracle: Newton iteration X ← (X + X⁻ᵀ)/2.
    fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
        let mut x = *m;
        for _ in 0..50 {
            let inv_t = x.try_inverse().unwrap().transpose();
            x = (x + inv_t) * 0.5;
        }
        x
    }

    #[test]
    fn orthonormalize_cases() {
        let r = Rotation::from_axis_angle(&Vector3::new(0.3, -1.0, 0.2), 0.8);
        let o = orthonormalize(r.matrix()).unwrap();
        assert_mat_close(o.matrix(), r.matrix(), 1e-12);
        let again = orthonormalize(o.matrix()).unwrap();
        assert_mat_close(again.matrix(), o.matrix(), 1e-15);

        let perturbed = Matrix3::identity() + skew(&Vector3::new(1e-4, -2e-4, 0.5e-4));
        let o = orthonormalize(&perturbed).unwrap();
        assert!(orthogonality_error(o.matrix()) < 1e-12);
        assert!((o.matrix() - Matrix3::identity()).amax() < 1e-3);
        assert_mat_close(o.matrix(), &polar_rotation(&perturbed), 1e-12);

        let scaled = Matrix3::identity() * 1.0001;
        assert_mat_close(orthonormalize(&scaled).unwrap().matrix(), &Matrix3::identity(), 1e-15);

        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(orthonormalize(&reflection).is_err());
        assert!(orthonormalize(&Matrix3::from_element(f64::NAN)).is_err());
    }

    #[test]
    fn from_matrix_rejects_non_rotations() {
        assert!(Rotation::from_matrix(Matrix3::identity() * 2.0).is_err());
        assert!(Rotation::from_matrix(*Rotation::about_x(0.2).matrix()).is_ok());
    }

    #[test]
    fn slerp_midpoint_is_half_angle() {
        let a = Quaternion::IDENTITY;
        let b = rotation_to_quat(&Rotation::about_z(FRAC_PI_2));
        let mid = quat_to_rotation(&a.slerp(&b, 0.5)).unwrap();
        assert_mat_close(mid.matrix(), Rotation::about_z(PI / 4.0).matrix(), 1e-9);
    }

    fn coord() -> impl Strategy<Value = f64> {
        -5.0f64..5.0
    }

    proptest! {
        #[test]
        fn group_laws(
            a in proptest::array::uniform7(coord()),
            b in proptest::array::uniform7(coord()),
            c in proptest::array::uniform7(coord()),
        ) {
            let (a, b, c) = (random_transform(a), random_transform(b), random_transform(c));
            let left = compose(&compose(&a, &b), &c).to_homogeneous();
            let right = compose(&a, &compose(&b, &c)).to_homogeneous();
            prop_assert!((left - right).amax() < 1e-9);
            let back = invert(&invert(&a)).to_homogeneous();
            prop_assert!((back - a.to_homogeneous()).amax() < 1e-9);
            let prod = a.to_homogeneous() * invert(&a).to_homogeneous();
            prop_assert!((prod - Matrix4::identity()).amax() < 1e-9);
        }

        #[test]
        fn euler_round_trip(
            rx in -3.1f64..3.1,
            ry in -1.4f64..1.4,
            rz in -3.1f64..3.1,
            t in proptest::array::uniform3(coord()),
        ) {
            let d = DofVector::new(t[0], t[1], t[2], rx, ry, rz);
            let (back, lock) = transform_to_dof(&dof_to_transform(&d));
            prop_assert!(!lock);
            for (x, y) in d.to_array().iter().zip(back.to_array()) {
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", d, back);
            }
        }
    }
}
