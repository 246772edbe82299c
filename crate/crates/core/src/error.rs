use thiserror::Error;

use crate::kinematics::JointState;
use crate::phantom::{Structure, ViewClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Se3Error {
    #[error("rotation matrix is not orthonormal with determinant +1")]
    NotARotation,
    #[error("transform contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("joint state {state:?} violates limits: {reason}")]
    JointLimit {
        state: JointState,
        reason: &'static str,
    },
    #[error("pose unreachable (best weighted residual {residual:.4})")]
    Unreachable { residual: f64 },
    #[error("invalid catheter model: {0}")]
    InvalidModel(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhantomError {
    #[error("mesh is not watertight ({0})")]
    NonWatertight(&'static str),
    #[error("LA/LAA reference frame is degenerate")]
    DegenerateFrame,
    #[error("scene is missing structure {0:?}")]
    MissingStructure(Structure),
    #[error("scene generation infeasible after {attempts} attempts: {reason}")]
    SceneInfeasible { attempts: u32, reason: &'static str },
    #[error("variation parameters out of range: {0}")]
    InvalidVariation(&'static str),
    #[error("target {view:?} unreachable: {source}")]
    TargetUnreachable {
        view: ViewClass,
        #[source]
        source: KinematicsError,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FanError {
    #[error("mesh half-extent along the fan normal is degenerate ({0:.4} mm)")]
    DegenerateExtent(f64),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: &'static str, got: usize },
    #[error("dataset too small: {0} records (need at least 100)")]
    DataUnderrun(usize),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("unknown or missing parameter `{0}`")]
    MissingParameter(alloc::string::String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("estimator has no ground truth for this query")]
    NoGroundTruth,
    #[error(transparent)]
    Phantom(#[from] PhantomError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuidanceError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("estimator failure: {0}")]
    EstimatorFailure(alloc::string::String),
    #[error("operation not allowed in status {0:?}")]
    InvalidStatus(crate::guidance::SessionStatus),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Fan(#[from] FanError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    EmptyDataset,
    #[error("view {0:?} has no target volume")]
    NoTargetVolume(crate::phantom::ViewClass),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Fan(#[from] FanError),
}
