//! Single-file TOML configuration with sections `catheter`, `fan`, `scene`,
//! `model`, `train`, `guidance` and `service`. Every field has a default.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use icepilot_core::estimator::{OracleEstimator, StartDistribution};
use icepilot_core::fan::FanParams;
use icepilot_core::guidance::GuidanceConfig;
use icepilot_core::kinematics::CatheterModel;
use icepilot_core::nn::{ModelConfig, TrainConfig};
use icepilot_core::phantom::ScaleAndJitter;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Error;

pub const CONFIG_ENV: &str = "ICEPILOT_CONFIG";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub catheter: CatheterModel,
    pub fan: FanParams,
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub guidance: GuidanceConfig,
    pub service: ServiceConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Scene JSON to load instead of generating one.
    pub path: Option<PathBuf>,
    /// Seed of the generated scene; 0 is the undistorted template.
    pub seed: u64,
    pub variation: ScaleAndJitter,
    pub starts: StartDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorSource {
    Oracle(OracleEstimator),
    Checkpoint { path: PathBuf },
}

impl Default for EstimatorSource {
    fn default() -> Self {
        EstimatorSource::Oracle(OracleEstimator::exact())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub estimator: EstimatorSource,
    pub max_sessions: usize,
    pub idle_timeout_secs: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8077,
            estimator: EstimatorSource::default(),
            max_sessions: 64,
            idle_timeout_secs: 900,
        }
    }
}

impl ServiceConfig {
    pub fn address(&self) -> Result<SocketAddr, Error> {
        format!("{}:{}", self.bind, self.port).parse().map_err(|e| {
            Error::Config(format!(
                "invalid bind address {}:{}: {e}",
                self.bind, self.port
            ))
        })
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Loads `explicit`, else the path in `ICEPILOT_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<(Self, Option<PathBuf>), Error> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            Some(p) => Ok((Self::load(&p)?, Some(p))),
            None => Ok((Self::default(), None)),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.catheter
            .validate()
            .map_err(|e| Error::Config(format!("catheter: {e}")))?;
        self.model
            .validate()
            .map_err(|e| Error::Config(format!("model: {e}")))?;
        let f = &self.fan;
        if !(f.sector_angle > 0.0 && f.sector_angle < std::f64::consts::PI)
            || f.depth.is_nan()
            || f.depth <= 0.0
            || f.width == 0
            || f.height == 0
        {
            return Err(Error::Config(
                "fan: sector angle must lie in (0, pi), depth and size must be positive".into(),
            ));
        }
        if self.service.port == 0 {
            return Err(Error::Config("service: port must be non-zero".into()));
        }
        if self.service.max_sessions == 0 {
            return Err(Error::Config(
                "service: max_sessions must be positive".into(),
            ));
        }
        let c = &self.guidance.clamp;
        if !(c.bend > 0.0 && c.rotation > 0.0 && c.insertion > 0.0) {
            return Err(Error::Config("guidance: clamps must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
