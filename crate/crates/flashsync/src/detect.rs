//! Detection of abrupt lighting changes in rolling-shutter frames.
//!
//! For every frame a per-row median intensity profile is computed. Profiles
//! of consecutive frames are subtracted; frames whose maximum difference
//! exceeds a threshold contain a lighting event, and the leading-edge row is
//! localized by the first half-maximum crossing of the difference profile.

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("frame has no pixels")]
    EmptyFrame,
    #[error("profile lengths differ: {current} vs {previous}")]
    LengthMismatch { current: usize, previous: usize },
    #[error("difference profile has no positive values")]
    NoPositivePeak,
    #[error("line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DetectError {
    fn from(e: std::io::Error) -> Self {
        DetectError::Io(e.to_string())
    }
}

/// Per-frame median intensity of every active row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowProfile {
    pub frame: usize,
    pub values: Vec<f64>,
}

/// Signed per-row difference between consecutive frame profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffProfile {
    pub frame: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    /// Rows start integrating the flash: positive difference peak.
    Leading,
    /// The flash has ended: negative difference peak in the following frame.
    Trailing,
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Polarity::Leading => write!(f, "leading"),
            Polarity::Trailing => write!(f, "trailing"),
        }
    }
}

/// A lighting-transition edge localized to (frame, row) in one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct EventObservation {
    pub camera_id: String,
    pub frame: usize,
    pub row: u32,
    pub magnitude: f64,
    pub polarity: Polarity,
}

/// Per-row lower median of an 8-bit grayscale frame in row-major order.
///
/// The lower median (order statistic at index `(W - 1) / 2`) keeps integer
/// inputs integer-exact.
pub fn median_row_profile(
    frame: usize,
    pixels: &[u8],
    height: usize,
    width: usize,
) -> Result<RowProfile, DetectError> {
    if height == 0 || width == 0 || pixels.len() < height * width {
        return Err(DetectError::EmptyFrame);
    }
    let mut values = Vec::with_capacity(height);
    let mut scratch = vec![0u8; width];
    for r in 0..height {
        scratch.copy_from_slice(&pixels[r * width..(r + 1) * width]);
        let mid = (width - 1) / 2;
        let (_, median, _) = scratch.select_nth_unstable(mid);
        values.push(*median as f64);
    }
    Ok(RowProfile { frame, values })
}

/// Elementwise difference `current - previous` of consecutive frame profiles.
pub fn diff_profiles(current: &RowProfile, previous: &RowProfile) -> Result<DiffProfile, DetectError> {
    if current.values.len() != previous.values.len() {
        return Err(DetectError::LengthMismatch {
            current: current.values.len(),
            previous: previous.values.len(),
        });
    }
    Ok(DiffProfile {
        frame: current.frame,
        values: current
            .values
            .iter()
            .zip(&previous.values)
            .map(|(c, p)| c - p)
            .collect(),
    })
}

/// First row whose difference reaches half of the profile maximum.
///
/// The half-maximum crossing is scale-free, so detection gain does not move
/// the localized row, and it is robust to the linear onset ramp produced by
/// rows that integrated the flash only partially.
pub fn locate_edge(diff: &DiffProfile) -> Result<u32, DetectError> {
    let max = diff.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(DetectError::NoPositivePeak);
    }
    let half = 0.5 * max;
    for (r, &v) in diff.values.iter().enumerate() {
        if v >= half {
            return Ok(r as u32);
        }
    }
    unreachable!("maximum element reaches its own half-maximum");
}

/// Threshold difference profiles and emit one event per peak: a leading-edge
/// event when the maximum exceeds `threshold`, and a trailing-edge event
/// (kept for diagnostics, not matched downstream) when the negated minimum
/// does.
pub fn detect_events(
    camera_id: &str,
    diffs: &[DiffProfile],
    threshold: f64,
) -> Vec<EventObservation> {
    assert!(threshold > 0.0, "threshold must be positive");
    let mut events = Vec::new();
    for diff in diffs {
        let max = diff.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max > threshold {
            // locate_edge cannot fail here: max > threshold > 0
            let row = locate_edge(diff).expect("positive peak");
            events.push(EventObservation {
                camera_id: camera_id.to_string(),
                frame: diff.frame,
                row,
                magnitude: max,
                polarity: Polarity::Leading,
            });
        }
        let min = diff.values.iter().copied().fold(f64::INFINITY, f64::min);
        if -min > threshold {
            let negated = DiffProfile {
                frame: diff.frame,
                values: diff.values.iter().map(|v| -v).collect(),
            };
            let row = locate_edge(&negated).expect("positive peak");
            events.push(EventObservation {
                camera_id: camera_id.to_string(),
                frame: diff.frame,
                row,
                magnitude: -min,
                polarity: Polarity::Trailing,
            });
        }
    }
    events
}

/// Robust automatic threshold: `median + 8 * MAD` of the per-frame maxima of
/// the difference profiles.
pub fn auto_threshold(diffs: &[DiffProfile]) -> Option<f64> {
    let mut maxima: Vec<f64> = diffs
        .iter()
        .filter(|d| !d.values.is_empty())
        .map(|d| d.values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    if maxima.is_empty() {
        return None;
    }
    let median = sorted_median(&mut maxima);
    let mut deviations: Vec<f64> = maxima.iter().map(|&m| (m - median).abs()).collect();
    let mad = sorted_median(&mut deviations);
    Some(median + 8.0 * mad)
}

fn sorted_median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[(values.len() - 1) / 2]
}

/// Drop events whose edge row falls within `margin_fraction` of the frame
/// top or bottom. Flashes there span two frames and their edge row is
/// unreliable.
pub fn reject_boundary_events(
    events: Vec<EventObservation>,
    rows_active: u32,
    margin_fraction: f64,
) -> Vec<EventObservation> {
    let margin = (rows_active as f64 * margin_fraction).floor() as u32;
    events
        .into_iter()
        .filter(|e| e.row >= margin && e.row + margin < rows_active)
        .collect()
}

/// Default boundary margin: 2% of the active rows.
pub const DEFAULT_BOUNDARY_MARGIN: f64 = 0.02;
/// Default detection threshold on the 8-bit intensity scale.
pub const DEFAULT_THRESHOLD: f64 = 40.0;

/// Read row profiles from CSV: header `frame,row,median_intensity`.
/// Rows must be grouped by frame and ordered by row within each frame.
pub fn load_profile_csv(reader: impl BufRead) -> Result<Vec<RowProfile>, DetectError> {
    let mut profiles: Vec<RowProfile> = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            saw_header = true;
            if line.starts_with("frame") {
                continue;
            }
        }
        let err = |reason: &str| DetectError::Csv {
            line: line_no,
            reason: reason.to_string(),
        };
        let mut fields = line.split(',');
        let frame = fields
            .next()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| err("invalid frame index"))?;
        let row = fields
            .next()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| err("invalid row index"))?;
        let value = fields
            .next()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| err("invalid intensity"))?;
        match profiles.last_mut() {
            Some(p) if p.frame == frame => {
                if row != p.values.len() {
                    return Err(err("row index out of order"));
                }
                p.values.push(value);
            }
            _ => {
                if row != 0 {
                    return Err(err("frame must start at row 0"));
                }
                profiles.push(RowProfile {
                    frame,
                    values: vec![value],
                });
            }
        }
    }
    Ok(profiles)
}

pub fn write_profile_csv(profiles: &[RowProfile], mut writer: impl Write) -> std::io::Result<()> {
    writeln!(writer, "frame,row,median_intensity")?;
    for p in profiles {
        for (r, v) in p.values.iter().enumerate() {
            writeln!(writer, "{},{},{}", p.frame, r, v)?;
        }
    }
    Ok(())
}

/// Events CSV: `camera,frame,row,magnitude,polarity`. The row column accepts
/// fractional values so sub-row ground truth from the simulator round-trips.
pub fn write_events_csv(events: &[EventObservation], mut writer: impl Write) -> std::io::Result<()> {
    writeln!(writer, "camera,frame,row,magnitude,polarity")?;
    for e in events {
        writeln!(
            writer,
            "{},{},{},{},{}",
            e.camera_id, e.frame, e.row, e.magnitude, e.polarity
        )?;
    }
    Ok(())
}

/// An event as read back from an events CSV, with the row kept fractional.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvEvent {
    pub camera_id: String,
    pub frame: usize,
    pub row: f64,
    pub magnitude: f64,
    pub polarity: Polarity,
}

pub fn load_events_csv(reader: impl BufRead) -> Result<Vec<CsvEvent>, DetectError> {
    let mut events = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            saw_header = true;
            if line.starts_with("camera") {
                continue;
            }
        }
        let err = |reason: &str| DetectError::Csv {
            line: line_no,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 5 {
            return Err(err("expected camera,frame,row,magnitude,polarity"));
        }
        let polarity = match fields[4] {
            "leading" => Polarity::Leading,
            "trailing" => Polarity::Trailing,
            _ => return Err(err("invalid polarity")),
        };
        events.push(CsvEvent {
            camera_id: fields[0].to_string(),
            frame: fields[1].parse().map_err(|_| err("invalid frame"))?,
            row: fields[2].parse().map_err(|_| err("invalid row"))?,
            magnitude: fields[3].parse().map_err(|_| err("invalid magnitude"))?,
            polarity,
        });
    }
    Ok(events)
}
