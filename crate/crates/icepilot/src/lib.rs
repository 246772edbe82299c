//! Hosted companion to `icepilot-core`: configuration, on-disk formats,
//! dataset and checkpoint handling, batch commands, reports and the session
//! service.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod formats;
pub mod protocol;
pub mod report;
pub mod service;
pub mod simulate;

use std::path::{Path, PathBuf};

pub use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Phantom(#[from] icepilot_core::PhantomError),
    #[error(transparent)]
    Model(#[from] icepilot_core::ModelError),
    #[error(transparent)]
    Estimator(#[from] icepilot_core::EstimatorError),
    #[error(transparent)]
    Guidance(#[from] icepilot_core::GuidanceError),
    #[error(transparent)]
    Eval(#[from] icepilot_core::EvalError),
    #[error(transparent)]
    Kinematics(#[from] icepilot_core::KinematicsError),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}
