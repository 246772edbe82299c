//! Evaluation: fan-in-volume accuracy with distance histograms, nearby-view
//! consistency and state-estimation stability.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::estimator::{relative_target, EstimationContext, PoseEstimator, StartDistribution};
use crate::fan::{fan_metrics, render_home_pose, FanGeometry, FanMetrics, FanParams};
use crate::guidance::{estimate_state_trajectory, TrajectoryEstimate};
use crate::kinematics::{CatheterModel, JointState};
use crate::nn::QuantilePrediction;
use crate::phantom::{AnatomyScene, TargetState, ViewClass};
use crate::se3::{Pose, RigidTransform};
use crate::{derive_seed, EvalError, GuidanceError};

pub const NORMALIZED_BIN_WIDTH: f64 = 0.05;
pub const REAL_BIN_WIDTH: f64 = 2.0;
pub const REAL_BIN_COUNT: usize = 20;

/// Equal-width bins from zero plus one overflow bin. For normalized distance
/// the overflow bin holds the out-of-boundary samples (distance ≥ 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
    pub overflow: usize,
}

impl Histogram {
    pub fn new(bin_width: f64, bins: usize) -> Self {
        Self {
            bin_width,
            counts: vec![0; bins],
            overflow: 0,
        }
    }

    pub fn normalized() -> Self {
        Self::new(NORMALIZED_BIN_WIDTH, 20)
    }

    pub fn real() -> Self {
        Self::new(REAL_BIN_WIDTH, REAL_BIN_COUNT)
    }

    pub fn add(&mut self, v: f64) {
        let i = Float::floor(v / self.bin_width);
        if i >= 0.0 && (i as usize) < self.counts.len() {
            self.counts[i as usize] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.overflow
    }

    /// Upper edge of the last regular bin.
    pub fn range_end(&self) -> f64 {
        self.bin_width * self.counts.len() as f64
    }
}

/// One evaluated (slice, goal) case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub scene_seed: u64,
    pub view: ViewClass,
    /// Metrics of the q50 fan.
    pub metrics: FanMetrics,
    /// In-volume flags of the q02, q50 and q98 fans.
    pub quantile_in_volume: [bool; 3],
    /// Whether each true relative-pose component lies inside `[q02, q98]`.
    pub covered: Option<[bool; 6]>,
}

impl CaseResult {
    pub fn correct(&self) -> bool {
        self.metrics.in_volume
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSummary {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub normalized: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Fraction of cases whose three quantile fans are all in volume.
    pub all_quantiles_accuracy: f64,
    /// Per-axis coverage of `[q02, q98]` (x, y, z, rx, ry, rz) over cases with ground truth.
    pub coverage: Option<[f64; 6]>,
    pub normalized: Histogram,
    pub real: Histogram,
    pub per_view: BTreeMap<ViewClass, ViewSummary>,
    pub cases: Vec<CaseResult>,
}

/// Scores one prediction: the q50 relative pose is composed with the known
/// acquisition pose and the resulting fan is tested against the goal volume.
pub fn score_case(
    scene: &AnatomyScene,
    current_home: &RigidTransform,
    view: ViewClass,
    prediction: &QuantilePrediction,
    truth: Option<&Pose>,
    fan: &FanParams,
) -> Result<CaseResult, EvalError> {
    let mesh = scene
        .target_mesh(view)
        .ok_or(EvalError::NoTargetVolume(view))?;
    let fan_of = |q: usize| {
        let pose = current_home.compose(&prediction.quantile_pose(q).to_transform());
        FanGeometry::from_transform(&scene.home_to_world(&pose), fan)
    };
    let metrics = fan_metrics(&fan_of(1), mesh)?;
    let mut quantile_in_volume = [false; 3];
    for (q, flag) in quantile_in_volume.iter_mut().enumerate() {
        *flag = fan_metrics(&fan_of(q), mesh)?.in_volume;
    }
    let covered = truth.map(|t| {
        let t = t.to_array();
        let flat = prediction.to_flat();
        core::array::from_fn(|a| flat[a * 3] <= t[a] && t[a] <= flat[a * 3 + 2])
    });
    Ok(CaseResult {
        scene_seed: scene.seed,
        view,
        metrics,
        quantile_in_volume,
        covered,
    })
}

/// Aggregates case results; the report keeps every case.
pub fn aggregate(cases: Vec<CaseResult>) -> Result<EvalReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut normalized = Histogram::normalized();
    let mut real = Histogram::real();
    let mut per_view: BTreeMap<ViewClass, ViewSummary> = ViewClass::TARGETS
        .iter()
        .map(|v| {
            (
                *v,
                ViewSummary {
                    count: 0,
                    correct: 0,
                    accuracy: 0.0,
                    normalized: Histogram::normalized(),
                },
            )
        })
        .collect();
    let mut correct = 0;
    let mut all_q = 0;
    let mut cov = [0usize; 6];
    let mut with_truth = 0;
    for c in &cases {
        normalized.add(c.metrics.normalized_distance);
        real.add(c.metrics.real_distance);
        if c.correct() {
            correct += 1;
        }
        if c.quantile_in_volume.iter().all(|b| *b) {
            all_q += 1;
        }
        if let Some(flags) = c.covered {
            with_truth += 1;
            for (n, f) in cov.iter_mut().zip(flags) {
                *n += usize::from(f);
            }
        }
        if let Some(v) = per_view.get_mut(&c.view) {
            v.count += 1;
            v.correct += usize::from(c.correct());
            v.normalized.add(c.metrics.normalized_distance);
        }
    }
    for v in per_view.values_mut() {
        v.accuracy = if v.count > 0 {
            v.correct as f64 / v.count as f64
        } else {
            0.0
        };
    }
    let total = cases.len();
    Ok(EvalReport {
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        all_quantiles_accuracy: all_q as f64 / total as f64,
        coverage: (with_truth > 0).then(|| cov.map(|n| n as f64 / with_truth as f64)),
        normalized,
        real,
        per_view,
        cases,
    })
}

/// A held-out query: slice acquired at `joints` in scene `scene`, asking for `view`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub scene: usize,
    pub joints: JointState,
    pub view: ViewClass,
    pub noise_seed: u64,
}

/// Evaluation scenes with their target states.
pub type SceneSet = [(AnatomyScene, BTreeMap<ViewClass, TargetState>)];

/// `count` queries spread round-robin over `scene_count` scenes with random
/// start states and goal classes.
pub fn sample_queries(
    scene_count: usize,
    count: usize,
    starts: &StartDistribution,
    catheter: &CatheterModel,
    seed: u64,
) -> Vec<EvalQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| EvalQuery {
            scene: i % scene_count.max(1),
            joints: starts.sample(catheter, &mut rng),
            view: ViewClass::TARGETS[rng.random_range(0..ViewClass::TARGETS.len())],
            noise_seed: derive_seed(&[seed, i as u64]),
        })
        .collect()
}

/// Renders every query, runs the estimator and scores the q50 fan.
pub fn evaluate(
    scenes: &SceneSet,
    queries: &[EvalQuery],
    estimator: &dyn PoseEstimator,
    catheter: &CatheterModel,
    fan: &FanParams,
) -> Result<EvalReport, EvalError> {
    let mut cases = Vec::with_capacity(queries.len());
    for q in queries {
        let (scene, targets) = scenes.get(q.scene).ok_or(EvalError::EmptyDataset)?;
        let current = catheter.pose_in_home(&q.joints);
        let image = render_home_pose(scene, &current, fan, q.noise_seed);
        let prediction =
            estimator.estimate(&image, q.view, &EstimationContext { scene, targets })?;
        let truth = targets
            .get(&q.view)
            .map(|t| Pose::from_transform(&relative_target(&current, &t.pose.to_transform())));
        cases.push(score_case(
            scene,
            &current,
            q.view,
            &prediction,
            truth.as_ref(),
            fan,
        )?);
    }
    aggregate(cases)
}

/// Two nearby acquisition poses in the home frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosePair {
    pub scene: usize,
    pub a: Pose,
    pub b: Pose,
}

/// Pairs whose second pose is the first perturbed by at most
/// `max_translation` mm and `max_rotation` rad.
pub fn sample_nearby_pairs(
    scene_count: usize,
    count: usize,
    max_translation: f64,
    max_rotation: f64,
    starts: &StartDistribution,
    catheter: &CatheterModel,
    seed: u64,
) -> Vec<PosePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = |r: f64, rng: &mut ChaCha8Rng| loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if v.norm() <= 1.0 {
            return v * r;
        }
    };
    (0..count)
        .map(|i| {
            let j = starts.sample(catheter, &mut rng);
            let a = catheter.pose_in_home(&j);
            let t = ball(max_translation, &mut rng);
            let r = ball(max_rotation, &mut rng);
            let b = RigidTransform::from_translation(t)
                .compose(&a)
                .compose(&RigidTransform::from_rotation_vector(r));
            PosePair {
                scene: i % scene_count.max(1),
                a: Pose::from_transform(&a),
                b: Pose::from_transform(&b),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearbyRow {
    pub pair: usize,
    pub view: ViewClass,
    /// Distance between the two q50 goal positions in the home frame (mm).
    pub position: f64,
    /// Per-axis absolute difference of the two q50 goal rotation vectors (rad).
    pub orientation: [f64; 3],
}

/// For every pair and goal class, compares the goal poses predicted from the
/// two slices in the home frame.
pub fn nearby_view_test(
    scenes: &SceneSet,
    pairs: &[PosePair],
    estimator: &dyn PoseEstimator,
    fan: &FanParams,
    seed: u64,
) -> Result<Vec<NearbyRow>, EvalError> {
    let mut rows = Vec::with_capacity(pairs.len() * 6);
    for (i, pair) in pairs.iter().enumerate() {
        let (scene, targets) = scenes.get(pair.scene).ok_or(EvalError::EmptyDataset)?;
        let ctx = EstimationContext { scene, targets };
        let (ta, tb) = (pair.a.to_transform(), pair.b.to_transform());
        let ia = render_home_pose(scene, &ta, fan, derive_seed(&[seed, i as u64, 0]));
        let ib = render_home_pose(scene, &tb, fan, derive_seed(&[seed, i as u64, 1]));
        for view in ViewClass::TARGETS {
            let pa = Pose::from_transform(
                &ta.compose(&estimator.estimate(&ia, view, &ctx)?.median().to_transform()),
            );
            let pb = Pose::from_transform(
                &tb.compose(&estimator.estimate(&ib, view, &ctx)?.median().to_transform()),
            );
            let d = pa.orientation - pb.orientation;
            rows.push(NearbyRow {
                pair: i,
                view,
                position: (pa.position - pb.position).norm(),
                orientation: [d[0].abs(), d[1].abs(), d[2].abs()],
            });
        }
    }
    Ok(rows)
}

/// Fraction of rows within both thresholds.
pub fn nearby_pass_rate(rows: &[NearbyRow], max_position: f64, max_orientation: f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let ok = rows
        .iter()
        .filter(|r| {
            r.position <= max_position && r.orientation.iter().all(|o| *o <= max_orientation)
        })
        .count();
    ok as f64 / rows.len() as f64
}

/// Covariance ellipse of predicted fan endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionEllipse {
    pub center: [f64; 3],
    /// Standard deviations along the principal axes, descending.
    pub semi_axes: [f64; 3],
    /// Unit principal axes, matching `semi_axes`.
    pub axes: [[f64; 3]; 3],
}

pub fn dispersion_ellipse(points: &[[f64; 3]]) -> DispersionEllipse {
    let n = points.len().max(1) as f64;
    let mut mean = Vector3::zeros();
    for p in points {
        mean += Vector3::from(*p) / n;
    }
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - mean;
        cov += d * d.transpose() / n;
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let semi_axes = order.map(|i| Float::sqrt(eig.eigenvalues[i].max(0.0)));
    let axes = order.map(|i| {
        let c = eig.eigenvectors.column(i);
        [c[0], c[1], c[2]]
    });
    DispersionEllipse {
        center: [mean[0], mean[1], mean[2]],
        semi_axes,
        axes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub goal: ViewClass,
    pub trajectory: usize,
    pub position_std: [f64; 3],
    pub endpoint_std: [f64; 3],
    pub ellipse: DispersionEllipse,
}

/// Runs the trajectory estimate for every trajectory and goal.
pub fn stability_test(
    scenes: &SceneSet,
    trajectories: &[(usize, Vec<JointState>)],
    goals: &[ViewClass],
    estimator: &dyn PoseEstimator,
    catheter: &CatheterModel,
    fan: &FanParams,
    seed: u64,
) -> Result<Vec<StabilityRow>, GuidanceError> {
    let mut rows = Vec::new();
    for (t, (scene_index, path)) in trajectories.iter().enumerate() {
        let Some((scene, targets)) = scenes.get(*scene_index) else {
            continue;
        };
        for goal in goals {
            let est: TrajectoryEstimate = estimate_state_trajectory(
                scene,
                catheter,
                targets,
                estimator,
                fan,
                derive_seed(&[seed, t as u64]),
                path,
                *goal,
            )?;
            let endpoints: Vec<[f64; 3]> = est.predictions.iter().map(|p| p.endpoint).collect();
            rows.push(StabilityRow {
                goal: *goal,
                trajectory: t,
                position_std: est.position_std,
                endpoint_std: est.endpoint_std,
                ellipse: dispersion_ellipse(&endpoints),
            });
        }
    }
    Ok(rows)
}

/// Largest per-axis endpoint standard deviation across rows.
pub fn max_endpoint_std(rows: &[StabilityRow]) -> f64 {
    rows.iter().flat_map(|r| r.endpoint_std).fold(0.0, f64::max)
}
