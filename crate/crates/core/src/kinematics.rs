//! Forward and inverse kinematics for a 4-DOF steerable catheter.
//!
//! The distal bending section is a single constant-curvature arc. The two
//! knob angles are the Cartesian components of the bend, so the model is
//! smooth through the straight configuration: bend angle `√(θ1² + θ2²)`,
//! bend plane `atan2(θ2, θ1)`. Base motion is translation `d4` along +z
//! followed by bulk rotation `θ3` about +z.
//!
//! Poses in the *base* frame come out of [`CatheterModel::forward_kinematics`].
//! Guidance works in the *home* frame, i.e. relative to the tip at the
//! neutral joint state; [`CatheterModel::inverse_kinematics_home`] bridges
//! the two.

use core::f64::consts::PI;

use nalgebra::{Matrix4, Matrix6x4, Vector3, Vector4, Vector6};
use num_traits::Float;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::se3::{self, rot_z, rotation_vector_to_matrix, wrap_angle, Pose, RigidTransform};
use crate::KinematicsError;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    /// Anterior–posterior knob (rad).
    pub theta1: f64,
    /// Right–left knob (rad).
    pub theta2: f64,
    /// Bulk rotation (rad).
    pub theta3: f64,
    /// Insertion along the catheter axis (mm).
    pub d4: f64,
}

impl JointState {
    pub const fn new(theta1: f64, theta2: f64, theta3: f64, d4: f64) -> Self {
        Self {
            theta1,
            theta2,
            theta3,
            d4,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.theta1, self.theta2, self.theta3, self.d4]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// `self + delta` with the rotation re-wrapped into `(−π, π]`.
    pub fn apply(&self, delta: &JointDelta) -> JointState {
        JointState::new(
            self.theta1 + delta.theta1,
            self.theta2 + delta.theta2,
            wrap_angle(self.theta3 + delta.theta3),
            self.d4 + delta.d4,
        )
    }

    /// Wrap-aware `self − other`.
    pub fn delta_from(&self, other: &JointState) -> JointDelta {
        JointDelta::new(
            self.theta1 - other.theta1,
            self.theta2 - other.theta2,
            self.theta3 - other.theta3,
            self.d4 - other.d4,
        )
    }

    pub fn bend_angle(&self) -> f64 {
        Float::hypot(self.theta1, self.theta2)
    }
}

/// Signed joint-space move. The rotation component is always wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointDelta {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub d4: f64,
}

impl JointDelta {
    pub fn new(theta1: f64, theta2: f64, theta3: f64, d4: f64) -> Self {
        Self {
            theta1,
            theta2,
            theta3: wrap_angle(theta3),
            d4,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.theta1, self.theta2, self.theta3, self.d4]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn neg(&self) -> JointDelta {
        JointDelta::new(-self.theta1, -self.theta2, -self.theta3, -self.d4)
    }

    /// Euclidean norm with the translation scaled by 0.1 (mm → "decimetre-ish"),
    /// matching the scaling used for round-trip checks.
    pub fn norm(&self) -> f64 {
        let d = self.d4 * 0.1;
        Float::sqrt(
            self.theta1 * self.theta1
                + self.theta2 * self.theta2
                + self.theta3 * self.theta3
                + d * d,
        )
    }

    pub fn max_abs_component(&self) -> f64 {
        self.theta1
            .abs()
            .max(self.theta2.abs())
            .max(self.theta3.abs())
            .max(self.d4.abs() * 0.1)
    }
}

macro_rules! array4_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                self.to_array().serialize(s)
            }
        }
        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let a = <[f64; 4]>::deserialize(d)?;
                if !a.iter().all(|v| v.is_finite()) {
                    return Err(serde::de::Error::custom("non-finite joint component"));
                }
                Ok(<$ty>::from_array(a))
            }
        }
    };
}
array4_serde!(JointState);
array4_serde!(JointDelta);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointLimits {
    /// Per-knob limit, rad.
    pub bend: f64,
    /// Maximum insertion, mm.
    pub d4_max: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            bend: 2.0 * PI / 3.0,
            d4_max: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkSettings {
    pub max_iterations: u32,
    /// Initial Levenberg–Marquardt damping.
    pub damping: f64,
    /// Weighted residual below which a solution is accepted.
    pub tolerance: f64,
    /// Residual weight on position error, per mm.
    pub position_weight: f64,
    /// Residual weight on orientation error, per rad.
    pub orientation_weight: f64,
    /// Central-difference step for the numeric Jacobian.
    pub jacobian_step: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            damping: 1e-3,
            tolerance: 0.1,
            position_weight: 1.0,
            orientation_weight: 20.0,
            jacobian_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatheterModel {
    /// Length of the bending section, mm.
    pub bend_section_length: f64,
    /// Insertion of the neutral (home) configuration, mm.
    pub home_d4: f64,
    pub limits: JointLimits,
    pub ik: IkSettings,
}

impl Default for CatheterModel {
    fn default() -> Self {
        Self {
            bend_section_length: 60.0,
            home_d4: 60.0,
            limits: JointLimits::default(),
            ik: IkSettings::default(),
        }
    }
}

const SEED_BEND: f64 = 1.0;
const WRAP_SLACK: f64 = 1e-12;

impl CatheterModel {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.bend_section_length > 0.0) {
            return Err(KinematicsError::InvalidModel(
                "bend_section_length must be > 0",
            ));
        }
        if !(self.limits.bend > 0.0) || !(self.limits.d4_max > 0.0) {
            return Err(KinematicsError::InvalidModel(
                "joint limits must be positive",
            ));
        }
        if !(0.0..=self.limits.d4_max).contains(&self.home_d4) {
            return Err(KinematicsError::InvalidModel(
                "home_d4 outside insertion range",
            ));
        }
        Ok(())
    }

    /// The neutral joint state that defines the home view.
    pub fn neutral(&self) -> JointState {
        JointState::new(0.0, 0.0, 0.0, self.home_d4)
    }

    pub fn check_limits(&self, j: &JointState) -> Result<(), KinematicsError> {
        let lim = &self.limits;
        let reason = if !j.to_array().iter().all(|v| v.is_finite()) {
            Some("non-finite component")
        } else if j.theta1.abs() > lim.bend + WRAP_SLACK || j.theta2.abs() > lim.bend + WRAP_SLACK {
            Some("knob angle beyond bend limit")
        } else if j.theta3 <= -PI || j.theta3 > PI + WRAP_SLACK {
            Some("rotation outside (-pi, pi]")
        } else if j.d4 < -WRAP_SLACK || j.d4 > lim.d4_max + WRAP_SLACK {
            Some("insertion outside [0, d4_max]")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(KinematicsError::JointLimit { state: *j, reason }),
            None => Ok(()),
        }
    }

    /// Projects a joint state onto the limit box (rotation wrapped).
    pub fn clamp_to_limits(&self, j: &JointState) -> JointState {
        let b = self.limits.bend;
        JointState::new(
            j.theta1.clamp(-b, b),
            j.theta2.clamp(-b, b),
            wrap_angle(j.theta3),
            j.d4.clamp(0.0, self.limits.d4_max),
        )
    }

    /// Tip transform in the base frame, without limit checks.
    pub fn tip_transform(&self, j: &JointState) -> RigidTransform {
        let l = self.bend_section_length;
        let b2 = j.theta1 * j.theta1 + j.theta2 * j.theta2;
        // (1 − cos θb)/θb² and sin θb/θb, continuous through θb = 0
        let (f, sinc) = if b2 < 1e-8 {
            (0.5 - b2 / 24.0, 1.0 - b2 / 6.0)
        } else {
            let b = Float::sqrt(b2);
            ((1.0 - Float::cos(b)) / b2, Float::sin(b) / b)
        };
        let arc_tip = Vector3::new(l * f * j.theta1, l * f * j.theta2, l * sinc);
        // bend rotation: angle θb about (−sin φ, cos φ, 0)
        let arc_rot = rotation_vector_to_matrix(&Vector3::new(-j.theta2, j.theta1, 0.0));
        let base_rot = rot_z(j.theta3);
        RigidTransform::from_parts(
            base_rot * arc_rot,
            Vector3::new(0.0, 0.0, j.d4) + base_rot * arc_tip,
        )
    }

    /// Tip pose in the base frame.
    pub fn forward_kinematics(&self, j: &JointState) -> Result<Pose, KinematicsError> {
        self.check_limits(j)?;
        Ok(Pose::from_transform(&self.tip_transform(j)))
    }

    /// Tip transform at the neutral state: the home frame expressed in base coordinates.
    pub fn home_transform(&self) -> RigidTransform {
        self.tip_transform(&self.neutral())
    }

    /// Tip transform of `j` expressed in the home frame.
    pub fn pose_in_home(&self, j: &JointState) -> RigidTransform {
        se3::relative_to_frame(&self.home_transform(), &self.tip_transform(j))
    }

    fn weighted_residual(&self, target: &RigidTransform, j: &JointState) -> Vector6<f64> {
        let cur = self.tip_transform(j);
        let dp = (target.translation() - cur.translation()) * self.ik.position_weight;
        let dr = se3::matrix_to_rotation_vector(&(target.rotation() * cur.rotation().transpose()))
            * self.ik.orientation_weight;
        Vector6::new(dp[0], dp[1], dp[2], dr[0], dr[1], dr[2])
    }

    fn project(&self, q: &Vector4<f64>) -> JointState {
        self.clamp_to_limits(&JointState::new(q[0], q[1], q[2], q[3]))
    }

    fn jacobian(&self, target: &RigidTransform, j: &JointState) -> Matrix6x4<f64> {
        let h = self.ik.jacobian_step;
        let base = j.to_array();
        let mut jac = Matrix6x4::zeros();
        for col in 0..4 {
            let mut plus = base;
            let mut minus = base;
            plus[col] += h;
            minus[col] -= h;
            let rp = self.weighted_residual(target, &JointState::from_array(plus));
            let rm = self.weighted_residual(target, &JointState::from_array(minus));
            jac.set_column(col, &((rp - rm) / (2.0 * h)));
        }
        jac
    }

    /// Levenberg–Marquardt from one seed. Returns the refined state and its
    /// weighted residual norm.
    fn solve_from(&self, target: &RigidTransform, seed: JointState) -> (JointState, f64) {
        let mut q = seed;
        let mut r = self.weighted_residual(target, &q);
        let mut cost = r.norm_squared();
        let mut lambda = self.ik.damping;
        for _ in 0..self.ik.max_iterations {
            if cost < 1e-24 {
                break;
            }
            let jac = self.jacobian(target, &q);
            let jtj = jac.transpose() * jac;
            let g = jac.transpose() * r;
            let mut accepted = false;
            while lambda < 1e10 {
                let damped =
                    jtj + Matrix4::from_diagonal(&jtj.diagonal().map(|d| d.max(1e-9))) * lambda;
                let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                    lambda *= 10.0;
                    continue;
                };
                let cand = self.project(&(Vector4::from(q.to_array()) + step));
                let rc = self.weighted_residual(target, &cand);
                let cc = rc.norm_squared();
                if cc < cost {
                    let moved = cand.delta_from(&q).max_abs_component();
                    q = cand;
                    r = rc;
                    cost = cc;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if moved < 1e-14 {
                        lambda = 1e10;
                    }
                    break;
                }
                lambda *= 4.0;
            }
            if !accepted || lambda >= 1e10 {
                break;
            }
        }
        (q, Float::sqrt(cost))
    }

    fn seeds(&self) -> impl Iterator<Item = JointState> + '_ {
        let neutral = self.neutral();
        core::iter::once(neutral).chain((0..8).map(move |k| {
            let phi = k as f64 * PI / 4.0;
            JointState::new(
                SEED_BEND * Float::cos(phi),
                SEED_BEND * Float::sin(phi),
                0.0,
                neutral.d4,
            )
        }))
    }

    /// Joint state whose tip best matches `target` (base frame), under the
    /// weighted pose residual. Tries the neutral seed first, then eight seeds
    /// spread around the bend plane.
    pub fn inverse_kinematics_transform(
        &self,
        target: &RigidTransform,
    ) -> Result<JointState, KinematicsError> {
        let reach = self.limits.d4_max + self.bend_section_length;
        let dist = target.translation().norm();
        if dist > reach {
            return Err(KinematicsError::Unreachable {
                residual: (dist - reach) * self.ik.position_weight,
            });
        }
        let mut best = f64::INFINITY;
        for seed in self.seeds() {
            let (q, res) = self.solve_from(target, seed);
            if res < self.ik.tolerance {
                return Ok(q);
            }
            best = best.min(res);
        }
        Err(KinematicsError::Unreachable { residual: best })
    }

    pub fn inverse_kinematics(&self, s: &Pose) -> Result<JointState, KinematicsError> {
        self.inverse_kinematics_transform(&s.to_transform())
    }

    /// IK for a pose expressed in the home frame.
    pub fn inverse_kinematics_home(
        &self,
        s_home: &RigidTransform,
    ) -> Result<JointState, KinematicsError> {
        self.inverse_kinematics_transform(&self.home_transform().compose(s_home))
    }

    /// `IK(s_i) − IK(s_j)` for two home-frame poses, rotation wrapped.
    pub fn joint_delta(&self, s_i: &Pose, s_j: &Pose) -> Result<JointDelta, KinematicsError> {
        let ji = self.inverse_kinematics_home(&s_i.to_transform())?;
        let jj = self.inverse_kinematics_home(&s_j.to_transform())?;
        Ok(ji.delta_from(&jj))
    }

    /// Move from the current view to the goal.
    ///
    /// `s_curr_home` is the pose of the home frame seen from the current
    /// transducer; inverting it gives the current transducer in home
    /// coordinates so both IK calls share one reference frame.
    pub fn guidance_delta(
        &self,
        s_home_goal: &Pose,
        s_curr_home: &Pose,
    ) -> Result<JointDelta, KinematicsError> {
        let goal = self.inverse_kinematics_home(&s_home_goal.to_transform())?;
        let current = self.inverse_kinematics_home(&s_curr_home.to_transform().inverse())?;
        Ok(goal.delta_from(&current))
    }
}
