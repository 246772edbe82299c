//! The transition function `M(I, g)`: from a slice and a queried view to a
//! quantile estimate of that view's transducer pose, expressed in the frame
//! of the transducer that acquired the slice.
//!
//! Two implementations share the trait: the geometric oracle, which reads the
//! acquisition pose from the slice metadata, and the learned regressor.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::fan::{render_home_pose, FanParams, SliceImage};
use crate::kinematics::{CatheterModel, JointState};
use crate::nn::{pool_image, PoseLabel, PoseRegressor, QuantilePrediction, TrainSample};
use crate::phantom::{AnatomyScene, TargetState, ViewClass};
use crate::se3::{Pose, RigidTransform};
use crate::{derive_seed, EstimatorError};

/// Scene knowledge available to an estimator at query time. Only the oracle
/// reads it.
#[derive(Debug, Clone, Copy)]
pub struct EstimationContext<'a> {
    pub scene: &'a AnatomyScene,
    pub targets: &'a BTreeMap<ViewClass, TargetState>,
}

pub trait PoseEstimator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Pose of `target` relative to the transducer that acquired `image`.
    fn estimate(
        &self,
        image: &SliceImage,
        target: ViewClass,
        ctx: &EstimationContext<'_>,
    ) -> Result<QuantilePrediction, EstimatorError>;
}

/// Acquisition pose of `image` in the home frame.
pub fn acquisition_pose_home(scene: &AnatomyScene, image: &SliceImage) -> RigidTransform {
    scene
        .world_to_home
        .inverse()
        .compose(&image.meta.pose.to_transform())
}

/// `T_curr⁻¹ · T_target` with both poses in the home frame.
pub fn relative_target(
    current_home: &RigidTransform,
    target_home: &RigidTransform,
) -> RigidTransform {
    current_home.inverse().compose(target_home)
}

/// Ground-truth stand-in for the learned model. Bounds are `q50 ∓ margin`
/// per axis; optional Gaussian noise is added to `q50`, seeded by the slice's
/// noise seed so identical slices give identical answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleEstimator {
    pub position_margin: f64,
    pub orientation_margin: f64,
    pub position_noise: f64,
    pub orientation_noise: f64,
    pub seed: u64,
}

impl Default for OracleEstimator {
    fn default() -> Self {
        Self::exact()
    }
}

impl OracleEstimator {
    pub fn exact() -> Self {
        Self {
            position_margin: 2.0,
            orientation_margin: 0.05,
            position_noise: 0.0,
            orientation_noise: 0.0,
            seed: 0,
        }
    }

    pub fn noisy(position_noise: f64, orientation_noise: f64, seed: u64) -> Self {
        Self {
            position_noise,
            orientation_noise,
            seed,
            ..Self::exact()
        }
    }

    fn noise(&self, image: &SliceImage, target: ViewClass) -> [f64; 6] {
        let mut out = [0.0; 6];
        if self.position_noise <= 0.0 && self.orientation_noise <= 0.0 {
            return out;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
            self.seed,
            image.meta.noise_seed,
            image.meta.scene_seed,
            target.index() as u64,
        ]));
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for (i, v) in out.iter_mut().enumerate() {
            let s = if i < 3 {
                self.position_noise
            } else {
                self.orientation_noise
            };
            *v = s * unit.sample(&mut rng);
        }
        out
    }
}

impl PoseEstimator for OracleEstimator {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn estimate(
        &self,
        image: &SliceImage,
        target: ViewClass,
        ctx: &EstimationContext<'_>,
    ) -> Result<QuantilePrediction, EstimatorError> {
        let goal = ctx
            .targets
            .get(&target)
            .ok_or(EstimatorError::NoGroundTruth)?;
        let current = acquisition_pose_home(ctx.scene, image);
        let rel = Pose::from_transform(&relative_target(&current, &goal.pose.to_transform()));
        let n = self.noise(image, target);
        let mut v = rel.to_array();
        for (x, e) in v.iter_mut().zip(n) {
            *x += e;
        }
        Ok(QuantilePrediction::from_pose(
            &Pose::from_array(&v),
            self.position_margin,
            self.orientation_margin,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedEstimator {
    pub model: PoseRegressor,
}

impl LearnedEstimator {
    pub fn new(model: PoseRegressor) -> Self {
        Self { model }
    }
}

impl PoseEstimator for LearnedEstimator {
    fn name(&self) -> &'static str {
        "learned"
    }

    fn estimate(
        &self,
        image: &SliceImage,
        target: ViewClass,
        _ctx: &EstimationContext<'_>,
    ) -> Result<QuantilePrediction, EstimatorError> {
        Ok(self.model.forward(image, target)?)
    }
}

/// Box around the neutral state from which starting (and training) states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StartDistribution {
    /// Half-range of each bending knob (rad).
    pub bend: f64,
    /// Half-range of bulk rotation (rad).
    pub rotation: f64,
    /// Half-range of insertion around the home value (mm).
    pub insertion: f64,
}

impl Default for StartDistribution {
    fn default() -> Self {
        Self {
            bend: 0.3,
            rotation: 0.6,
            insertion: 10.0,
        }
    }
}

impl StartDistribution {
    pub fn sample(&self, catheter: &CatheterModel, rng: &mut impl Rng) -> JointState {
        let mut draw = |h: f64| {
            if h > 0.0 {
                rng.random_range(-h..=h)
            } else {
                0.0
            }
        };
        let j = JointState::new(
            draw(self.bend),
            draw(self.bend),
            draw(self.rotation),
            catheter.home_d4 + draw(self.insertion),
        );
        catheter.clamp_to_limits(&j)
    }
}

/// One labelled render: the slice at `joints` and the pose of `view`
/// relative to it.
pub fn labelled_render(
    scene: &AnatomyScene,
    targets: &BTreeMap<ViewClass, TargetState>,
    catheter: &CatheterModel,
    fan: &FanParams,
    joints: &JointState,
    view: ViewClass,
    noise_seed: u64,
) -> Result<(SliceImage, PoseLabel), EstimatorError> {
    let current = catheter.pose_in_home(joints);
    let goal = targets.get(&view).ok_or(EstimatorError::NoGroundTruth)?;
    let image = render_home_pose(scene, &current, fan, noise_seed);
    let rel = relative_target(&current, &goal.pose.to_transform());
    Ok((image, PoseLabel::from_pose(&Pose::from_transform(&rel))))
}

/// A training set of `count` renders spread round-robin over `scenes`, each
/// with a random start state and a random queried class (HOME included).
pub fn synthesize_samples(
    scenes: &[(AnatomyScene, BTreeMap<ViewClass, TargetState>)],
    catheter: &CatheterModel,
    fan: &FanParams,
    model: &crate::nn::ModelConfig,
    starts: &StartDistribution,
    count: usize,
    seed: u64,
) -> Result<Vec<TrainSample>, EstimatorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if scenes.is_empty() {
            break;
        }
        let (scene, targets) = &scenes[i % scenes.len()];
        let joints = starts.sample(catheter, &mut rng);
        let view = ViewClass::ALL[rng.random_range(0..ViewClass::ALL.len())];
        let (image, label) = labelled_render(
            scene,
            targets,
            catheter,
            fan,
            &joints,
            view,
            derive_seed(&[seed, i as u64]),
        )?;
        out.push(TrainSample {
            pooled: pool_image(&image, model)?,
            view,
            label,
        });
    }
    Ok(out)
}
