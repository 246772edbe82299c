//! Wire protocol between the service and an operator console.
//!
//! Every message is a JSON object `{type, token, corr, seq, body}`. Clients
//! send `hello`, `set_goal`, `apply_delta`, `request_guidance` and
//! `session_end`; the server answers with `state_update`, `guidance`, `error`
//! and `session_end`. Replies echo the client's `corr` and carry the
//! per-session sequence number of the command they answer.

use base64::Engine;
use icepilot_core::fan::FanMetrics;
use icepilot_core::guidance::{Guidance, GuidanceSession, SessionStatus};
use icepilot_core::kinematics::{JointDelta, JointState};
use icepilot_core::phantom::ViewClass;
use icepilot_core::se3::Pose;
use icepilot_core::GuidanceError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::formats::encode_png;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Hello,
    SetGoal,
    ApplyDelta,
    RequestGuidance,
    StateUpdate,
    Guidance,
    Error,
    SessionEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default)]
    pub body: Value,
}

impl WireMessage {
    pub fn new(kind: MessageType, token: &str, body: Value) -> Self {
        Self {
            kind,
            token: token.to_string(),
            corr: None,
            seq: None,
            body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetGoalBody {
    pub goal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyDeltaBody {
    /// `[θ1, θ2, θ3, d4]` in rad, rad, rad, mm.
    pub delta: JointDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdateBody {
    pub joints: JointState,
    pub status: SessionStatus,
    pub goal: Option<ViewClass>,
    pub step_index: Option<usize>,
    /// Joint change realised by the command that produced this update.
    pub applied_delta: Option<JointDelta>,
    pub metrics: Option<FanMetrics>,
    pub slice: SliceBody,
    pub estimator: String,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceBody {
    pub width: u32,
    pub height: u32,
    pub noise_seed: u64,
    /// Base64 of an 8-bit grayscale PNG.
    pub png: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceBody {
    pub goal: ViewClass,
    pub status: SessionStatus,
    /// Clamped advice.
    pub delta: JointDelta,
    pub raw_delta: JointDelta,
    pub clamped: bool,
    /// Deltas toward the q02 and q98 goal poses.
    pub bounds: Option<[JointDelta; 2]>,
    /// Goal transducer pose in the home frame at q02, q50, q98.
    pub goal_pose: [Pose; 3],
    /// Estimated home pose seen from the current transducer (q50).
    pub current_estimate: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested_delta: Option<JointDelta>,
}

pub fn slice_body(session: &GuidanceSession) -> SliceBody {
    let s = session.slice();
    SliceBody {
        width: s.width,
        height: s.height,
        noise_seed: s.meta.noise_seed,
        png: base64::engine::general_purpose::STANDARD.encode(encode_png(s)),
    }
}

pub fn state_update(session: &GuidanceSession) -> StateUpdateBody {
    let last = session
        .goal_history()
        .last()
        .or_else(|| session.history().last());
    let metrics = match session.goal_condition(&session.joints()) {
        Ok((m, _)) => m,
        Err(_) => None,
    };
    StateUpdateBody {
        joints: session.joints(),
        status: session.status(),
        goal: session.goal(),
        step_index: last.map(|s| s.step_index),
        applied_delta: last.map(|s| s.delta),
        metrics,
        slice: slice_body(session),
        estimator: session.estimator_name().to_string(),
        failure: session.failure().map(str::to_string),
    }
}

pub fn guidance_body(g: &Guidance, status: SessionStatus) -> GuidanceBody {
    GuidanceBody {
        goal: g.goal,
        status,
        delta: g.delta,
        raw_delta: g.raw,
        clamped: g.clamped,
        bounds: g.bounds,
        goal_pose: [
            g.goal_estimate.quantile_pose(0),
            g.goal_estimate.quantile_pose(1),
            g.goal_estimate.quantile_pose(2),
        ],
        current_estimate: g.current_estimate.median(),
    }
}

fn error_body(code: &str, message: impl Into<String>) -> Value {
    serde_json::to_value(ErrorBody {
        code: code.into(),
        message: message.into(),
        suggested_delta: None,
    })
    .expect("serializes")
}

fn guidance_error_body(
    session: &GuidanceSession,
    e: &GuidanceError,
    requested: Option<&JointDelta>,
) -> Value {
    let (code, suggested_delta) = match e {
        GuidanceError::Kinematics(icepilot_core::KinematicsError::JointLimit { .. }) => {
            let suggested =
                requested.map(|d| session.feasible_target(d).delta_from(&session.joints()));
            ("joint_limit", suggested)
        }
        GuidanceError::InvalidStatus(_) => ("invalid_status", None),
        GuidanceError::EstimatorFailure(_) => ("estimator_failure", None),
        _ => ("guidance_failure", None),
    };
    serde_json::to_value(ErrorBody {
        code: code.into(),
        message: e.to_string(),
        suggested_delta,
    })
    .expect("serializes")
}

/// Outcome of one command: replies in order, and whether the session ends.
pub struct Handled {
    pub replies: Vec<(MessageType, Value)>,
    pub end: bool,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("protocol bodies serialize")
}

fn guidance_reply(session: &mut GuidanceSession) -> (MessageType, Value) {
    match session.guidance() {
        Ok(g) => (
            MessageType::Guidance,
            to_value(&guidance_body(&g, session.status())),
        ),
        Err(e) => (MessageType::Error, guidance_error_body(session, &e, None)),
    }
}

/// Applies one client command to a session. Malformed bodies produce an
/// `error` reply and leave the session untouched.
pub fn handle(session: &mut GuidanceSession, kind: MessageType, body: &Value) -> Handled {
    let mut replies = Vec::new();
    let mut end = false;
    match kind {
        MessageType::Hello => {
            replies.push((MessageType::StateUpdate, to_value(&state_update(session))))
        }
        MessageType::SetGoal => match serde_json::from_value::<SetGoalBody>(body.clone()) {
            Ok(b) => match ViewClass::parse(&b.goal) {
                Some(goal) => match session.set_goal(goal) {
                    Ok(()) => replies.push(guidance_reply(session)),
                    Err(e) => {
                        replies.push((MessageType::Error, guidance_error_body(session, &e, None)))
                    }
                },
                None => replies.push((
                    MessageType::Error,
                    error_body("bad_request", format!("unknown goal `{}`", b.goal)),
                )),
            },
            Err(e) => replies.push((
                MessageType::Error,
                error_body("bad_request", format!("set_goal body: {e}")),
            )),
        },
        MessageType::ApplyDelta => match serde_json::from_value::<ApplyDeltaBody>(body.clone()) {
            Ok(b) => match session.apply_delta(&b.delta) {
                Ok(_) => {
                    replies.push((MessageType::StateUpdate, to_value(&state_update(session))));
                    if session.goal().is_some() {
                        replies.push(guidance_reply(session));
                    }
                }
                Err(e) => replies.push((
                    MessageType::Error,
                    guidance_error_body(session, &e, Some(&b.delta)),
                )),
            },
            Err(e) => replies.push((
                MessageType::Error,
                error_body("bad_request", format!("apply_delta body: {e}")),
            )),
        },
        MessageType::RequestGuidance => {
            if session.goal().is_some() {
                replies.push(guidance_reply(session));
            } else {
                replies.push((
                    MessageType::Error,
                    error_body("invalid_status", "no goal selected"),
                ));
            }
        }
        MessageType::SessionEnd => {
            replies.push((
                MessageType::SessionEnd,
                json!({ "reason": "client request" }),
            ));
            end = true;
        }
        MessageType::StateUpdate | MessageType::Guidance | MessageType::Error => {
            replies.push((
                MessageType::Error,
                error_body("bad_request", "server-only message type"),
            ));
        }
    }
    Handled { replies, end }
}
