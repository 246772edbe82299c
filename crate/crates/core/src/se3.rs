//! Rigid-body transforms and rotation-vector poses.
//!
//! Lengths are millimetres, angles radians. A [`RigidTransform`] is the
//! homogeneous `[R | t]` pair; a [`Pose`] is the same rigid motion expressed
//! as position plus rotation vector (axis scaled by angle).

use core::f64::consts::PI;
use core::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use num_traits::Float;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::Se3Error;

/// Orthonormality tolerance used when validating rotation matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform after checking `RᵀR = I` and `det R = +1`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, Se3Error> {
        if !is_rotation(&rotation, ORTHONORMAL_TOL) {
            return Err(Se3Error::NotARotation);
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Se3Error::NonFinite);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform from parts that are already known to be valid
    /// (products of valid transforms, Rodrigues output).
    pub(crate) fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        debug_assert!(is_rotation(&rotation, 1e-8), "rotation drifted: {rotation}");
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation_vector(rotation_vector: Vector3<f64>) -> Self {
        Self {
            rotation: rotation_vector_to_matrix(&rotation_vector),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self · other` as homogeneous transforms.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        Self::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self::from_parts(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Column `i` of the rotation: the frame's i-th axis in parent coordinates.
    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.rotation.column(i).into_owned()
    }

    /// Row-major `R` followed by `t`.
    pub fn to_flat(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[0],
            t[1],
            t[2],
        ]
    }

    pub fn from_flat(flat: &[f64; 12]) -> Result<Self, Se3Error> {
        let rotation = Matrix3::new(
            flat[0], flat[1], flat[2], flat[3], flat[4], flat[5], flat[6], flat[7], flat[8],
        );
        Self::new(rotation, Vector3::new(flat[9], flat[10], flat[11]))
    }

    /// Largest absolute elementwise difference against `other` (R and t).
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat().iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a RigidTransform> for &'a RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &'a RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_flat().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let flat = <[f64; 12]>::deserialize(d)?;
        RigidTransform::from_flat(&flat).map_err(serde::de::Error::custom)
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Expresses `target` in the coordinates of `frame`: `frame⁻¹ · target`.
pub fn relative_to_frame(frame: &RigidTransform, target: &RigidTransform) -> RigidTransform {
    frame.inverse().compose(target)
}

/// Position (mm) plus rotation vector (rad). Serialized as `[x, y, z, rx, ry, rz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: Vector3<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: Vector3<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn to_transform(&self) -> RigidTransform {
        pose_to_transform(self)
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        transform_to_pose(t)
    }

    pub fn to_array(&self) -> [f64; 6] {
        let p = &self.position;
        let o = &self.orientation;
        [p[0], p[1], p[2], o[0], o[1], o[2]]
    }

    pub fn from_array(a: &[f64; 6]) -> Self {
        Self::new(
            Vector3::new(a[0], a[1], a[2]),
            Vector3::new(a[3], a[4], a[5]),
        )
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 6]>::deserialize(d)?;
        if !a.iter().all(|v| v.is_finite()) {
            return Err(serde::de::Error::custom("non-finite pose component"));
        }
        Ok(Pose::from_array(&a))
    }
}

pub fn pose_to_transform(p: &Pose) -> RigidTransform {
    RigidTransform::from_parts(rotation_vector_to_matrix(&p.orientation), p.position)
}

pub fn transform_to_pose(t: &RigidTransform) -> Pose {
    Pose::new(*t.translation(), matrix_to_rotation_vector(t.rotation()))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Rodrigues' formula with series fallbacks near zero angle.
pub fn rotation_vector_to_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let theta = Float::sqrt(theta2);
    let k = skew(v);
    let (a, b) = if theta < 1e-4 {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (
            Float::sin(theta) / theta,
            (1.0 - Float::cos(theta)) / theta2,
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation angle of `r` in `[0, π]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let w = vee_antisym(r);
    let s = w.norm();
    let c = (r.trace() - 1.0) * 0.5;
    Float::atan2(s, c)
}

// vee((R − Rᵀ)/2) = sin θ · axis
fn vee_antisym(r: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5
}

/// Inverse of [`rotation_vector_to_matrix`] on the closed ball of radius π.
///
/// At angle exactly π the axis sign is ambiguous; the returned axis has its
/// first nonzero component positive.
pub fn matrix_to_rotation_vector(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = vee_antisym(r);
    let s = w.norm();
    let c = (r.trace() - 1.0) * 0.5;
    let theta = Float::atan2(s, c);
    if theta < 1e-6 {
        // θ/sinθ ≈ 1 + θ²/6
        return w * (1.0 + theta * theta / 6.0);
    }
    if s > 1e-4 || c > 0.0 {
        return w * (theta / s);
    }
    // Near π: recover the axis from the symmetric part (1 − cosθ)·n·nᵀ.
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
    let diag = [b[(0, 0)], b[(1, 1)], b[(2, 2)]];
    let mut k = 0;
    for i in 1..3 {
        if diag[i] > diag[k] {
            k = i;
        }
    }
    let mut axis = b.column(k).into_owned();
    axis /= axis.norm();
    let along = axis.dot(&w);
    if along.abs() > 1e-12 {
        if along < 0.0 {
            axis = -axis;
        }
    } else {
        axis = canonical_axis(axis);
    }
    axis * theta
}

fn canonical_axis(axis: Vector3<f64>) -> Vector3<f64> {
    for i in 0..3 {
        if axis[i].abs() > 1e-12 {
            return if axis[i] < 0.0 { -axis } else { axis };
        }
    }
    axis
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    if !r.iter().all(|v| v.is_finite()) {
        return false;
    }
    let e = r.transpose() * r - Matrix3::identity();
    e.iter().all(|v| v.abs() <= tol) && (r.determinant() - 1.0).abs() <= tol
}

/// Geodesic angle between two rotations.
pub fn rotation_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a.transpose() * b))
}

/// Rotation of `angle` about +z.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = (Float::sin(angle), Float::cos(angle));
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = a % two_pi;
    if w <= -PI {
        w += two_pi;
    } else if w > PI {
        w -= two_pi;
    }
    w
}
