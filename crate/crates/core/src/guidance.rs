//! The closed guidance loop.
//!
//! A session owns one scene, one catheter and the current joint state. Setting
//! a goal queries the estimator once with the home slice for the goal pose in
//! the home frame; each step then estimates where home lies as seen from the
//! current slice, converts both poses to joints and moves by the difference.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::estimator::{EstimationContext, PoseEstimator};
use crate::fan::{fan_metrics, render_home_pose, FanGeometry, FanMetrics, FanParams, SliceImage};
use crate::kinematics::{CatheterModel, JointDelta, JointState};
use crate::nn::QuantilePrediction;
use crate::phantom::{build_target_states, AnatomyScene, TargetState, ViewClass};
use crate::se3::{rotation_angle, Pose, RigidTransform};
use crate::{derive_seed, GuidanceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    Idle,
    Guiding,
    Reached,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    /// Every step applies the advised delta.
    Auto,
    /// Steps only advise; the operator applies moves.
    Interactive,
}

/// Per-step magnitude limits. A delta over any limit is scaled down as a
/// whole, so its direction and signs are kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepClamp {
    /// Knob limit (rad), applied to each of θ1, θ2.
    pub bend: f64,
    pub rotation: f64,
    /// Insertion limit (mm).
    pub insertion: f64,
}

impl Default for StepClamp {
    fn default() -> Self {
        Self {
            bend: 0.15,
            rotation: 0.3,
            insertion: 5.0,
        }
    }
}

impl StepClamp {
    pub fn unlimited() -> Self {
        Self {
            bend: f64::INFINITY,
            rotation: f64::INFINITY,
            insertion: f64::INFINITY,
        }
    }

    /// Returns the clamped delta and whether clamping changed it.
    pub fn apply(&self, d: &JointDelta) -> (JointDelta, bool) {
        let ratio = [
            d.theta1.abs() / self.bend,
            d.theta2.abs() / self.bend,
            d.theta3.abs() / self.rotation,
            d.d4.abs() / self.insertion,
        ]
        .into_iter()
        .fold(0.0, f64::max);
        if ratio <= 1.0 {
            return (*d, false);
        }
        let s = 1.0 / ratio;
        (
            JointDelta::new(d.theta1 * s, d.theta2 * s, d.theta3 * s, d.d4 * s),
            true,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub clamp: StepClamp,
    pub max_steps: usize,
    /// Normalized-distance threshold of the reached condition.
    pub reach_distance: f64,
    /// Pose tolerance used for the HOME goal, which has no target volume.
    pub home_position_tolerance: f64,
    pub home_orientation_tolerance: f64,
    pub noise_seed: u64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            clamp: StepClamp::default(),
            max_steps: 40,
            reach_distance: 0.5,
            home_position_tolerance: 2.0,
            home_orientation_tolerance: 0.05,
            noise_seed: 0,
        }
    }
}

/// Advice for the current state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub goal: ViewClass,
    /// Unclamped `IK(S_home^g) − IK(S_home^curr)`.
    pub raw: JointDelta,
    /// `raw` after the per-step clamp.
    pub delta: JointDelta,
    pub clamped: bool,
    /// Estimated pose of home as seen from the current transducer.
    pub current_estimate: QuantilePrediction,
    /// Estimated goal pose in the home frame.
    pub goal_estimate: QuantilePrediction,
    /// Deltas toward the q02 and q98 goal poses, when IK succeeds for both.
    pub bounds: Option<[JointDelta; 2]>,
}

/// One committed move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceStep {
    pub step_index: usize,
    pub joints_before: JointState,
    pub joints: JointState,
    /// The joint change actually realised (after clamping and limit clipping).
    pub delta: JointDelta,
    pub guidance: Option<Guidance>,
    /// Ground-truth fan metrics against the goal volume after the move.
    pub metrics: Option<FanMetrics>,
    pub goal_satisfied: bool,
    pub status: SessionStatus,
}

pub struct GuidanceSession {
    id: String,
    scene: AnatomyScene,
    catheter: CatheterModel,
    targets: BTreeMap<ViewClass, TargetState>,
    fan: FanParams,
    config: GuidanceConfig,
    mode: GuidanceMode,
    estimator: Arc<dyn PoseEstimator>,
    joints: JointState,
    slice: SliceImage,
    goal: Option<ViewClass>,
    goal_estimate: Option<QuantilePrediction>,
    status: SessionStatus,
    history: Vec<GuidanceStep>,
    goal_start: usize,
    last_guidance: Option<Guidance>,
    failure: Option<String>,
}

impl fmt::Debug for GuidanceSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GuidanceSession")
            .field("id", &self.id)
            .field("estimator", &self.estimator.name())
            .field("joints", &self.joints)
            .field("goal", &self.goal)
            .field("status", &self.status)
            .field("steps", &self.history.len())
            .finish()
    }
}

/// Deterministic session id for a scene and starting state.
pub fn session_id(scene_seed: u64, start: &JointState) -> String {
    let mut parts = [scene_seed, 0, 0, 0, 0];
    for (p, v) in parts[1..].iter_mut().zip(start.to_array()) {
        *p = v.to_bits();
    }
    format!("{:016x}", derive_seed(&parts))
}

impl GuidanceSession {
    pub fn start(
        scene: AnatomyScene,
        catheter: CatheterModel,
        start: JointState,
        estimator: Arc<dyn PoseEstimator>,
        fan: FanParams,
        config: GuidanceConfig,
        mode: GuidanceMode,
    ) -> Result<Self, GuidanceError> {
        catheter.check_limits(&start)?;
        let targets = build_target_states(&scene, &catheter)?;
        let slice = render_at(&scene, &catheter, &fan, config.noise_seed, &start);
        Ok(Self {
            id: session_id(scene.seed, &start),
            scene,
            catheter,
            targets,
            fan,
            config,
            mode,
            estimator,
            joints: start,
            slice,
            goal: None,
            goal_estimate: None,
            status: SessionStatus::Idle,
            history: Vec::new(),
            goal_start: 0,
            last_guidance: None,
            failure: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn mode(&self) -> GuidanceMode {
        self.mode
    }

    pub fn joints(&self) -> JointState {
        self.joints
    }

    pub fn goal(&self) -> Option<ViewClass> {
        self.goal
    }

    pub fn goal_estimate(&self) -> Option<&QuantilePrediction> {
        self.goal_estimate.as_ref()
    }

    pub fn slice(&self) -> &SliceImage {
        &self.slice
    }

    pub fn scene(&self) -> &AnatomyScene {
        &self.scene
    }

    pub fn catheter(&self) -> &CatheterModel {
        &self.catheter
    }

    pub fn targets(&self) -> &BTreeMap<ViewClass, TargetState> {
        &self.targets
    }

    pub fn config(&self) -> &GuidanceConfig {
        &self.config
    }

    pub fn fan_params(&self) -> &FanParams {
        &self.fan
    }

    pub fn history(&self) -> &[GuidanceStep] {
        &self.history
    }

    /// Steps taken toward the current goal.
    pub fn goal_history(&self) -> &[GuidanceStep] {
        &self.history[self.goal_start..]
    }

    pub fn last_guidance(&self) -> Option<&Guidance> {
        self.last_guidance.as_ref()
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    pub fn estimator_name(&self) -> &'static str {
        self.estimator.name()
    }

    fn context(&self) -> EstimationContext<'_> {
        EstimationContext {
            scene: &self.scene,
            targets: &self.targets,
        }
    }

    fn fail(&mut self, msg: String) -> GuidanceError {
        self.status = SessionStatus::Failed;
        self.failure = Some(msg.clone());
        GuidanceError::EstimatorFailure(msg)
    }

    /// Selects a goal and estimates its pose from the home slice.
    pub fn set_goal(&mut self, goal: ViewClass) -> Result<(), GuidanceError> {
        let home = self.catheter.neutral();
        let home_slice = render_at(
            &self.scene,
            &self.catheter,
            &self.fan,
            self.config.noise_seed,
            &home,
        );
        self.goal = Some(goal);
        self.goal_start = self.history.len();
        self.last_guidance = None;
        self.failure = None;
        self.goal_estimate = None;
        self.status = SessionStatus::Guiding;
        let estimate = match self.estimator.estimate(&home_slice, goal, &self.context()) {
            Ok(e) => e,
            Err(e) => return Err(self.fail(e.to_string())),
        };
        self.goal_estimate = Some(estimate);
        if goal == ViewClass::HOME && self.goal_condition(&self.joints)?.1 {
            self.status = SessionStatus::Reached;
        }
        Ok(())
    }

    /// Guidance for the current state without moving.
    pub fn guidance(&mut self) -> Result<Guidance, GuidanceError> {
        let (goal, goal_estimate) = match (self.goal, self.goal_estimate) {
            (Some(g), Some(e)) => (g, e),
            _ => return Err(GuidanceError::InvalidStatus(self.status)),
        };
        let current_estimate =
            match self
                .estimator
                .estimate(&self.slice, ViewClass::HOME, &self.context())
            {
                Ok(e) => e,
                Err(e) => return Err(self.fail(e.to_string())),
            };
        let current = current_estimate.median();
        let raw = match self
            .catheter
            .guidance_delta(&goal_estimate.median(), &current)
        {
            Ok(d) => d,
            Err(e) => {
                return Err(self.fail(format!("no joint solution for the estimated poses: {e}")))
            }
        };
        let bounds = self
            .catheter
            .guidance_delta(&goal_estimate.quantile_pose(0), &current)
            .and_then(|lo| {
                Ok([
                    lo,
                    self.catheter
                        .guidance_delta(&goal_estimate.quantile_pose(2), &current)?,
                ])
            })
            .ok();
        let (delta, clamped) = self.config.clamp.apply(&raw);
        let g = Guidance {
            goal,
            raw,
            delta,
            clamped,
            current_estimate,
            goal_estimate,
            bounds,
        };
        self.last_guidance = Some(g);
        Ok(g)
    }

    /// One iteration of the loop. In auto mode the advised delta is applied;
    /// in interactive mode the state is left untouched and only advice returned.
    pub fn step(&mut self) -> Result<(Guidance, Option<GuidanceStep>), GuidanceError> {
        if self.status != SessionStatus::Guiding {
            return Err(GuidanceError::InvalidStatus(self.status));
        }
        let g = self.guidance()?;
        if self.mode == GuidanceMode::Interactive {
            return Ok((g, None));
        }
        let target = self.catheter.clamp_to_limits(&self.joints.apply(&g.delta));
        let step = self.commit(target, Some(g))?;
        Ok((g, Some(step)))
    }

    /// Joint state reached by `delta` after clamping, clipped to the limits.
    pub fn feasible_target(&self, delta: &JointDelta) -> JointState {
        let (d, _) = self.config.clamp.apply(delta);
        self.catheter.clamp_to_limits(&self.joints.apply(&d))
    }

    /// Operator move: clamped, then rejected if it leaves the joint limits.
    pub fn apply_delta(&mut self, delta: &JointDelta) -> Result<GuidanceStep, GuidanceError> {
        let (d, _) = self.config.clamp.apply(delta);
        let target = self.joints.apply(&d);
        self.catheter.check_limits(&target)?;
        let guidance = self.last_guidance.filter(|g| g.delta == d);
        self.commit(target, guidance)
    }

    fn commit(
        &mut self,
        target: JointState,
        guidance: Option<Guidance>,
    ) -> Result<GuidanceStep, GuidanceError> {
        let before = self.joints;
        self.joints = target;
        self.slice = render_at(
            &self.scene,
            &self.catheter,
            &self.fan,
            self.config.noise_seed,
            &target,
        );
        self.last_guidance = None;
        let (metrics, satisfied) = match self.goal {
            Some(_) => self.goal_condition(&target)?,
            None => (None, false),
        };
        if self.status == SessionStatus::Guiding {
            let previous = self.history.len() > self.goal_start
                && self.history.last().is_some_and(|s| s.goal_satisfied);
            let settled = guidance.is_some_and(|g| !g.clamped);
            if satisfied && (previous || settled) {
                self.status = SessionStatus::Reached;
            } else if self.history.len() + 1 - self.goal_start >= self.config.max_steps {
                self.status = SessionStatus::Failed;
                self.failure = Some(format!(
                    "goal not reached within {} steps",
                    self.config.max_steps
                ));
            }
        }
        let step = GuidanceStep {
            step_index: self.history.len(),
            joints_before: before,
            joints: target,
            delta: target.delta_from(&before),
            guidance,
            metrics,
            goal_satisfied: satisfied,
            status: self.status,
        };
        self.history.push(step);
        Ok(step)
    }

    /// Ground-truth metrics against the goal and whether the reached
    /// condition holds at `joints`.
    pub fn goal_condition(
        &self,
        joints: &JointState,
    ) -> Result<(Option<FanMetrics>, bool), GuidanceError> {
        let Some(goal) = self.goal else {
            return Ok((None, false));
        };
        let pose = self.catheter.pose_in_home(joints);
        match self.scene.target_mesh(goal) {
            Some(mesh) => {
                let fan = FanGeometry::from_transform(&self.scene.home_to_world(&pose), &self.fan);
                let m = fan_metrics(&fan, mesh)?;
                Ok((
                    Some(m),
                    m.in_volume && m.normalized_distance < self.config.reach_distance,
                ))
            }
            None => {
                let ok = pose.translation().norm() < self.config.home_position_tolerance
                    && rotation_angle(pose.rotation()) < self.config.home_orientation_tolerance;
                Ok((None, ok))
            }
        }
    }

    /// Runs auto steps until the goal is reached or the session fails.
    pub fn run_to_completion(&mut self) -> Result<SessionStatus, GuidanceError> {
        while self.status == SessionStatus::Guiding {
            self.step()?;
        }
        Ok(self.status)
    }
}

/// Slice at `joints`; the noise seed depends only on the scene, the base seed
/// and the joint values, so revisiting a state reproduces its slice.
pub fn render_at(
    scene: &AnatomyScene,
    catheter: &CatheterModel,
    fan: &FanParams,
    base_seed: u64,
    joints: &JointState,
) -> SliceImage {
    let j = joints.to_array();
    let seed = derive_seed(&[
        base_seed,
        scene.seed,
        j[0].to_bits(),
        j[1].to_bits(),
        j[2].to_bits(),
        j[3].to_bits(),
    ]);
    render_home_pose(scene, &catheter.pose_in_home(joints), fan, seed)
}

/// `n` evenly spaced states from `a` to `b` inclusive, rotation taken the short way.
pub fn interpolate_joints(a: &JointState, b: &JointState, n: usize) -> Vec<JointState> {
    let d = b.delta_from(a);
    (0..n)
        .map(|i| {
            let t = if n > 1 {
                i as f64 / (n - 1) as f64
            } else {
                0.0
            };
            a.apply(&JointDelta::new(
                d.theta1 * t,
                d.theta2 * t,
                d.theta3 * t,
                d.d4 * t,
            ))
        })
        .collect()
}

/// Goal fan predicted from one trajectory point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedFan {
    /// Predicted goal transducer position in the home frame (mm).
    pub position: [f64; 3],
    /// Centre of the far edge of the predicted fan in the home frame (mm).
    pub endpoint: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimate {
    pub goal: ViewClass,
    pub predictions: Vec<PredictedFan>,
    pub position_std: [f64; 3],
    pub endpoint_std: [f64; 3],
}

/// Queries the estimator for `goal` along `trajectory` and maps each answer
/// into the home frame using the known acquisition pose.
#[allow(clippy::too_many_arguments)]
pub fn estimate_state_trajectory(
    scene: &AnatomyScene,
    catheter: &CatheterModel,
    targets: &BTreeMap<ViewClass, TargetState>,
    estimator: &dyn PoseEstimator,
    fan: &FanParams,
    noise_seed: u64,
    trajectory: &[JointState],
    goal: ViewClass,
) -> Result<TrajectoryEstimate, GuidanceError> {
    let ctx = EstimationContext { scene, targets };
    let mut predictions = Vec::with_capacity(trajectory.len());
    for j in trajectory {
        catheter.check_limits(j)?;
        let slice = render_at(scene, catheter, fan, noise_seed, j);
        let rel = estimator
            .estimate(&slice, goal, &ctx)
            .map_err(|e| GuidanceError::EstimatorFailure(e.to_string()))?;
        let predicted: RigidTransform = catheter
            .pose_in_home(j)
            .compose(&rel.median().to_transform());
        let geometry = FanGeometry::from_transform(&predicted, fan);
        let p = predicted.translation();
        let e = geometry.bottom_center();
        predictions.push(PredictedFan {
            position: [p[0], p[1], p[2]],
            endpoint: [e[0], e[1], e[2]],
        });
    }
    let position_std = axis_std(predictions.iter().map(|p| p.position));
    let endpoint_std = axis_std(predictions.iter().map(|p| p.endpoint));
    Ok(TrajectoryEstimate {
        goal,
        predictions,
        position_std,
        endpoint_std,
    })
}

/// Population standard deviation per axis.
pub fn axis_std(points: impl Iterator<Item = [f64; 3]> + Clone) -> [f64; 3] {
    let n = points.clone().count();
    if n == 0 {
        return [0.0; 3];
    }
    let mut mean = [0.0; 3];
    for p in points.clone() {
        for a in 0..3 {
            mean[a] += p[a] / n as f64;
        }
    }
    let mut var = [0.0; 3];
    for p in points {
        for a in 0..3 {
            var[a] += (p[a] - mean[a]) * (p[a] - mean[a]) / n as f64;
        }
    }
    var.map(Float::sqrt)
}

/// Cartesian distance (mm) and rotation angle (rad) between two home-frame poses.
pub fn pose_error(a: &RigidTransform, b: &Pose) -> (f64, f64) {
    let bt = b.to_transform();
    let d = a.inverse().compose(&bt);
    (d.translation().norm(), rotation_angle(d.rotation()))
}
