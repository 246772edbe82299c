//! Headless auto-mode runs with a JSON-lines step log.

use std::io::Write;
use std::sync::Arc;

use icepilot_core::estimator::PoseEstimator;
use icepilot_core::fan::FanMetrics;
use icepilot_core::guidance::{GuidanceMode, GuidanceSession, SessionStatus};
use icepilot_core::kinematics::{JointDelta, JointState};
use icepilot_core::phantom::{AnatomyScene, ViewClass};
use icepilot_core::se3::Pose;
use serde::{Deserialize, Serialize};

use crate::{Config, Error};

/// One line of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub goal: ViewClass,
    pub step_index: usize,
    pub joints: JointState,
    pub delta: JointDelta,
    /// Median goal pose in the home frame.
    pub goal_pose: Option<Pose>,
    pub bounds: Option<[JointDelta; 2]>,
    pub metrics: Option<FanMetrics>,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalOutcome {
    pub goal: ViewClass,
    pub status: SessionStatus,
    pub steps: usize,
    pub failure: Option<String>,
}

fn write_line(log: &mut impl Write, line: &LogLine) -> Result<(), Error> {
    serde_json::to_writer(&mut *log, line)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(log))
        .map_err(|e| Error::io("<log>".as_ref(), e))
}

/// Drives one session through `goals` in order, writing every committed
/// step to `log`. A failed goal does not stop the run.
///
/// Without `auto` nothing moves: each goal gets a single advisory line with
/// the delta the operator would be asked to apply from `start`.
pub fn simulate(
    cfg: &Config,
    scene: &AnatomyScene,
    estimator: Arc<dyn PoseEstimator>,
    start: JointState,
    goals: &[ViewClass],
    auto: bool,
    log: &mut impl Write,
) -> Result<Vec<GoalOutcome>, Error> {
    if !auto {
        return advise(cfg, scene, estimator, start, goals, log);
    }
    let mut session = GuidanceSession::start(
        scene.clone(),
        cfg.catheter,
        start,
        estimator,
        cfg.fan,
        cfg.guidance,
        GuidanceMode::Auto,
    )?;
    let mut outcomes = Vec::with_capacity(goals.len());
    for &goal in goals {
        let before = session.history().len();
        // estimator failures leave the session Failed with a recorded reason
        if session.set_goal(goal).is_ok() {
            while session.status() == SessionStatus::Guiding {
                let Ok((g, Some(step))) = session.step() else {
                    break;
                };
                let line = LogLine {
                    goal,
                    step_index: step.step_index,
                    joints: step.joints,
                    delta: step.delta,
                    goal_pose: Some(g.goal_estimate.median()),
                    bounds: g.bounds,
                    metrics: step.metrics,
                    status: step.status,
                };
                write_line(log, &line)?;
            }
        }
        outcomes.push(GoalOutcome {
            goal,
            status: session.status(),
            steps: session.history().len() - before,
            failure: session.failure().map(str::to_string),
        });
    }
    Ok(outcomes)
}

fn advise(
    cfg: &Config,
    scene: &AnatomyScene,
    estimator: Arc<dyn PoseEstimator>,
    start: JointState,
    goals: &[ViewClass],
    log: &mut impl Write,
) -> Result<Vec<GoalOutcome>, Error> {
    let mut outcomes = Vec::with_capacity(goals.len());
    for &goal in goals {
        let mut session = GuidanceSession::start(
            scene.clone(),
            cfg.catheter,
            start,
            estimator.clone(),
            cfg.fan,
            cfg.guidance,
            GuidanceMode::Interactive,
        )?;
        if session.set_goal(goal).is_ok() && session.status() == SessionStatus::Guiding {
            if let Ok(g) = session.guidance() {
                let metrics = session.goal_condition(&start).ok().and_then(|(m, _)| m);
                write_line(
                    log,
                    &LogLine {
                        goal,
                        step_index: 0,
                        joints: start,
                        delta: g.delta,
                        goal_pose: Some(g.goal_estimate.median()),
                        bounds: g.bounds,
                        metrics,
                        status: session.status(),
                    },
                )?;
            }
        }
        outcomes.push(GoalOutcome {
            goal,
            status: session.status(),
            steps: 0,
            failure: session.failure().map(str::to_string),
        });
    }
    Ok(outcomes)
}
