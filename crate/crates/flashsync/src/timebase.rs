//! Rolling-shutter sub-frame time model and the affine synchronization
//! transformation. All time arithmetic is in double-precision milliseconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TimebaseError {
    #[error("row {row} outside active area of {rows_active} rows")]
    RowOutOfRange { row: u32, rows_active: u32 },
    #[error("frame duration must be positive, got {0}")]
    NonpositiveFrameDuration(f64),
    #[error("sensor must have at least one active row")]
    EmptyActiveArea,
}

/// Row layout of a rolling-shutter sensor.
///
/// Rolling-shutter sensors read hidden ("dark") rows before and after the
/// active pixel area. They delay the first active row of each frame and
/// stretch the effective row clock, so they enter the row-period computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorGeometry {
    /// Hidden rows read before the active area (R0).
    pub rows_before: u32,
    /// Active image rows (the frame height).
    pub rows_active: u32,
    /// Hidden rows read after the active area (R1).
    pub rows_after: u32,
}

impl SensorGeometry {
    pub fn new(rows_before: u32, rows_active: u32, rows_after: u32) -> Result<Self, TimebaseError> {
        if rows_active == 0 {
            return Err(TimebaseError::EmptyActiveArea);
        }
        Ok(Self {
            rows_before,
            rows_active,
            rows_after,
        })
    }

    /// Geometry with no hidden rows. Used when the sensor datasheet is
    /// unavailable; the solver can then estimate the effective row period.
    pub fn active_only(rows_active: u32) -> Result<Self, TimebaseError> {
        Self::new(0, rows_active, 0)
    }

    /// Total sensor rows R = R0 + Rh + R1.
    pub fn total_rows(&self) -> u32 {
        self.rows_before + self.rows_active + self.rows_after
    }
}

/// A sub-frame temporal position: frame index plus row within the active area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalPosition {
    pub frame: u32,
    pub row: u32,
}

/// Affine mapping from one camera's clock to the reference camera time:
/// `t_ref = alpha * t_f + beta + row * t_row`.
///
/// `alpha` compensates clock drift, `beta` is the temporal shift and `t_row`
/// is the time per image row. The hidden-row offset `R0 * t_row` of the
/// sub-frame model is a constant and is absorbed into `beta` when the
/// parameters are estimated, so `apply_sync` uses the row index directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncParams {
    /// Clock drift compensation factor, dimensionless, close to 1.
    pub alpha: f64,
    /// Temporal shift in milliseconds.
    pub beta_ms: f64,
    /// Row period in milliseconds.
    pub t_row_ms: f64,
}

impl SyncParams {
    pub fn identity(t_row_ms: f64) -> Self {
        Self {
            alpha: 1.0,
            beta_ms: 0.0,
            t_row_ms,
        }
    }
}

/// Time per image row: frame duration divided by the total row count,
/// hidden rows included.
pub fn row_period(geometry: &SensorGeometry, frame_duration_ms: f64) -> Result<f64, TimebaseError> {
    if !(frame_duration_ms > 0.0) {
        return Err(TimebaseError::NonpositiveFrameDuration(frame_duration_ms));
    }
    Ok(frame_duration_ms / geometry.total_rows() as f64)
}

/// Capture time of `row` within the frame that starts at `frame_timestamp_ms`:
/// `t_f + (R0 + r) / (R0 + Rh + R1) * T_frame`.
pub fn sub_frame_time(
    frame_timestamp_ms: f64,
    row: u32,
    geometry: &SensorGeometry,
    frame_duration_ms: f64,
) -> Result<f64, TimebaseError> {
    if row >= geometry.rows_active {
        return Err(TimebaseError::RowOutOfRange {
            row,
            rows_active: geometry.rows_active,
        });
    }
    let period = row_period(geometry, frame_duration_ms)?;
    Ok(frame_timestamp_ms + geometry.rows_before as f64 * period + row as f64 * period)
}

/// Map a camera-local (timestamp, row) position to reference camera time.
pub fn apply_sync(params: &SyncParams, frame_timestamp_ms: f64, row: u32) -> f64 {
    params.alpha * frame_timestamp_ms + params.beta_ms + row as f64 * params.t_row_ms
}
