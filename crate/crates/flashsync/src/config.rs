//! Declarative project configuration: one JSON file naming every camera,
//! its timestamp and frame sources, and the pipeline parameters.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timebase::SensorGeometry;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestampFormat {
    Mp4,
    Rtp,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampSource {
    pub format: TimestampFormat,
    pub path: PathBuf,
}

/// Raw 8-bit grayscale frames concatenated in one file, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFramesSource {
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub camera_id: String,
    #[serde(default)]
    pub timestamps: Option<TimestampSource>,
    /// Pre-computed median row profiles (`frame,row,median_intensity` CSV).
    #[serde(default)]
    pub profiles: Option<PathBuf>,
    /// Raw grayscale frame stream, used when no profile CSV is given.
    #[serde(default)]
    pub frames: Option<RawFramesSource>,
    /// Sensor geometry from the datasheet; when absent the solver estimates
    /// the effective row period.
    #[serde(default)]
    pub geometry: Option<SensorGeometry>,
    #[serde(default)]
    pub fps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, rename_all = "lowercase")]
pub enum ThresholdConfig {
    Value(f64),
    /// `"auto"`: median + 8 MAD of the per-frame difference maxima.
    Auto(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig::Value(crate::detect::DEFAULT_THRESHOLD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub reference: String,
    pub cameras: Vec<CameraConfig>,
    #[serde(default)]
    pub threshold: ThresholdConfig,
    /// Event matching tolerance; defaults to half the nominal frame duration.
    #[serde(default)]
    pub tolerance_ms: Option<f64>,
    /// Boundary-event rejection margin as a fraction of the active rows.
    #[serde(default = "default_boundary_margin")]
    pub boundary_margin: f64,
}

fn default_boundary_margin() -> f64 {
    crate::detect::DEFAULT_BOUNDARY_MARGIN
}

impl ProjectConfig {
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let config: ProjectConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cameras.is_empty() {
            return Err(ConfigError::Invalid("no cameras configured".into()));
        }
        let mut seen = HashSet::new();
        for cam in &self.cameras {
            if !seen.insert(cam.camera_id.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate camera id {}",
                    cam.camera_id
                )));
            }
        }
        if !seen.contains(self.reference.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "reference camera {} not in cameras list",
                self.reference
            )));
        }
        Ok(())
    }

    pub fn camera(&self, camera_id: &str) -> Option<&CameraConfig> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }
}
