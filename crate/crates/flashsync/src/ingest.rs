//! Frame timestamp extraction from MP4 containers, RTP header records and
//! CSV sidecars, plus dropped-frame gap reporting.

use std::io::{BufRead, Write};

use thiserror::Error;

pub mod mp4;

pub use mp4::{parse_mp4_timestamps, parse_mp4_timestamps_with_track};

/// RTP video timestamps tick at 90 kHz.
pub const RTP_VIDEO_TIMESCALE: u32 = 90_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("mp4 parse error at {path} (byte offset {offset}): {reason}")]
    Mp4 {
        path: String,
        offset: u64,
        reason: String,
    },
    #[error("line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("timestamps not strictly increasing at index {index}")]
    NonMonotonic { index: usize },
    #[error("RTP timestamps run backwards at record {record}")]
    RtpBackwards { record: usize },
    #[error("timescale must be at least 1")]
    InvalidTimescale,
}

/// Per-camera sequence of frame acquisition timestamps.
///
/// Timestamps are kept in the source timescale (ticks per second) so that
/// container-native values survive unchanged; convert with [`Self::timestamps_ms`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampTrack {
    pub camera_id: String,
    /// Time units per second in the source's time coordinate system.
    pub timescale: u32,
    /// Frame timestamps in timescale units, strictly increasing.
    pub timestamps: Vec<f64>,
    /// Declared or inferred nominal frame duration, if known.
    pub nominal_frame_duration_ms: Option<f64>,
}

impl TimestampTrack {
    pub fn new(
        camera_id: impl Into<String>,
        timescale: u32,
        timestamps: Vec<f64>,
    ) -> Result<Self, IngestError> {
        if timescale == 0 {
            return Err(IngestError::InvalidTimescale);
        }
        for i in 1..timestamps.len() {
            if timestamps[i] <= timestamps[i - 1] {
                return Err(IngestError::NonMonotonic { index: i });
            }
        }
        Ok(Self {
            camera_id: camera_id.into(),
            timescale,
            timestamps,
            nominal_frame_duration_ms: None,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn ticks_to_ms(&self, ticks: f64) -> f64 {
        ticks * 1000.0 / self.timescale as f64
    }

    pub fn timestamps_ms(&self) -> Vec<f64> {
        self.timestamps.iter().map(|&t| self.ticks_to_ms(t)).collect()
    }

    /// Median inter-frame spacing in milliseconds, or the declared nominal
    /// duration when present. `None` for tracks with fewer than two frames.
    pub fn frame_duration_ms(&self) -> Option<f64> {
        if let Some(d) = self.nominal_frame_duration_ms {
            return Some(d);
        }
        if self.timestamps.len() < 2 {
            return None;
        }
        let mut deltas: Vec<f64> = self
            .timestamps
            .windows(2)
            .map(|w| self.ticks_to_ms(w[1] - w[0]))
            .collect();
        deltas.sort_by(|a, b| a.total_cmp(b));
        Some(deltas[(deltas.len() - 1) / 2])
    }
}

/// One RTP header record as read from a capture sidecar file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RtpRecord {
    pub sequence_number: u16,
    /// Raw 32-bit RTP timestamp, wraps modulo 2^32.
    pub timestamp: u32,
    pub marker: bool,
}

/// Extract one timestamp per frame from RTP header records.
///
/// Consecutive packets sharing a timestamp belong to the same frame; the
/// first packet of each frame contributes. 32-bit wraparound is unwrapped
/// monotonically and timestamps are rebased so the first frame is at 0 ticks.
pub fn parse_rtp_timestamps(
    records: &[RtpRecord],
    camera_id: impl Into<String>,
) -> Result<TimestampTrack, IngestError> {
    let mut timestamps = Vec::new();
    let mut prev_raw: Option<u32> = None;
    let mut unwrapped: u64 = 0;
    for (i, rec) in records.iter().enumerate() {
        match prev_raw {
            None => {
                timestamps.push(0.0);
            }
            Some(prev) => {
                let diff = rec.timestamp.wrapping_sub(prev);
                if diff == 0 {
                    continue; // same frame
                }
                if diff >= 1 << 31 {
                    return Err(IngestError::RtpBackwards { record: i });
                }
                unwrapped += diff as u64;
                timestamps.push(unwrapped as f64);
            }
        }
        prev_raw = Some(rec.timestamp);
    }
    TimestampTrack::new(camera_id, RTP_VIDEO_TIMESCALE, timestamps)
}

/// Read RTP header records from CSV: header `sequence_number,timestamp_ticks,marker_bit`,
/// comment lines starting with `#`.
pub fn load_rtp_csv(reader: impl BufRead) -> Result<Vec<RtpRecord>, IngestError> {
    let mut records = Vec::new();
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
            if line.starts_with("sequence_number") {
                continue;
            }
        }
        let mut fields = line.split(',');
        let err = |reason: &str| IngestError::Csv {
            line: line_no,
            reason: reason.to_string(),
        };
        let seq = fields
            .next()
            .and_then(|s| s.trim().parse::<u16>().ok())
            .ok_or_else(|| err("invalid sequence number"))?;
        let ts = fields
            .next()
            .and_then(|s| s.trim().parse::<u32>().ok())
            .ok_or_else(|| err("invalid timestamp ticks"))?;
        let marker = fields
            .next()
            .map(|s| matches!(s.trim(), "1" | "true"))
            .unwrap_or(false);
        records.push(RtpRecord {
            sequence_number: seq,
            timestamp: ts,
            marker,
        });
    }
    Ok(records)
}

/// Load a timestamp sidecar CSV: header `frame,timestamp_ms`, one record per
/// frame, comment lines starting with `#`. The resulting track has
/// timescale 1000 (milliseconds).
pub fn load_timestamp_csv(
    reader: impl BufRead,
    camera_id: impl Into<String>,
) -> Result<TimestampTrack, IngestError> {
    let mut timestamps = Vec::new();
    let mut prev_frame: Option<i64> = None;
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
        let err = |reason: String| IngestError::Csv {
            line: line_no,
            reason,
        };
        let mut fields = line.split(',');
        let frame = fields
            .next()
            .and_then(|s| s.trim().parse::<i64>().ok())
            .ok_or_else(|| err("invalid frame index".into()))?;
        let ts = fields
            .next()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|t| t.is_finite())
            .ok_or_else(|| err("invalid timestamp".into()))?;
        if let Some(pf) = prev_frame {
            if frame <= pf {
                return Err(err(format!("frame index {frame} not increasing")));
            }
        }
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(err(format!(
                    "timestamp {ts} ms not greater than previous {prev} ms"
                )));
            }
        }
        prev_frame = Some(frame);
        timestamps.push(ts);
    }
    TimestampTrack::new(camera_id, 1000, timestamps)
}

/// Write a track as a timestamp sidecar CSV in milliseconds.
pub fn write_timestamp_csv(track: &TimestampTrack, mut writer: impl Write) -> std::io::Result<()> {
    writeln!(writer, "frame,timestamp_ms")?;
    for (i, t) in track.timestamps_ms().into_iter().enumerate() {
        writeln!(writer, "{i},{t}")?;
    }
    Ok(())
}

/// A run of frames missing between two recorded frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGap {
    /// Index of the recorded frame immediately before the gap.
    pub frame_before: usize,
    /// Number of frames missing in the gap, at least 1.
    pub missing: u32,
    /// Duration of the gap (timestamp delta) in milliseconds.
    pub gap_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameGapReport {
    pub gaps: Vec<FrameGap>,
}

impl FrameGapReport {
    pub fn total_missing(&self) -> u32 {
        self.gaps.iter().map(|g| g.missing).sum()
    }
}

/// Flag every inter-frame delta that exceeds `(1 + slack)` nominal durations.
/// The missing-frame count is `round(delta / nominal) - 1`.
pub fn detect_dropped_frames(
    track: &TimestampTrack,
    nominal_fps: f64,
    slack: f64,
) -> FrameGapReport {
    assert!(nominal_fps > 0.0, "nominal_fps must be positive");
    assert!((0.0..0.5).contains(&slack), "slack must be in [0, 0.5)");
    let nominal_ms = 1000.0 / nominal_fps;
    let ms = track.timestamps_ms();
    let mut gaps = Vec::new();
    for i in 1..ms.len() {
        let delta = ms[i] - ms[i - 1];
        if delta > (1.0 + slack) * nominal_ms {
            let missing = ((delta / nominal_ms).round() as u32).saturating_sub(1).max(1);
            gaps.push(FrameGap {
                frame_before: i - 1,
                missing,
                gap_ms: delta,
            });
        }
    }
    FrameGapReport { gaps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rtp(ts: &[u32]) -> Vec<RtpRecord> {
        ts.iter()
            .enumerate()
            .map(|(i, &t)| RtpRecord {
                sequence_number: i as u16,
                timestamp: t,
                marker: true,
            })
            .collect()
    }

    #[test]
    fn rtp_one_second_step() {
        let track = parse_rtp_timestamps(&rtp(&[0, 90_000]), "c").unwrap();
        assert_eq!(track.timestamps, vec![0.0, 90_000.0]);
        assert_eq!(track.timestamps_ms(), vec![0.0, 1000.0]);
    }

    #[test]
    fn rtp_wraparound_unwrap() {
        // 2^32 - 4294960000 + 3000 = 10296 ticks across the wrap
        let track = parse_rtp_timestamps(&rtp(&[4_294_960_000, 3000]), "c").unwrap();
        assert_eq!(track.timestamps, vec![0.0, 10_296.0]);
        assert_relative_eq!(track.timestamps_ms()[1], 114.4, max_relative = 1e-9);
    }

    #[test]
    fn rtp_constant_delta() {
        let track = parse_rtp_timestamps(&rtp(&[1000, 4000, 7000, 10_000]), "c").unwrap();
        let ms = track.timestamps_ms();
        for w in ms.windows(2) {
            assert_relative_eq!(w[1] - w[0], 3000.0 / 90.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn rtp_same_frame_packets_collapse() {
        let track = parse_rtp_timestamps(&rtp(&[0, 0, 0, 3000, 3000]), "c").unwrap();
        assert_eq!(track.timestamps, vec![0.0, 3000.0]);
    }

    #[test]
    fn rtp_backwards_rejected() {
        let err = parse_rtp_timestamps(&rtp(&[90_000, 0]), "c").unwrap_err();
        assert!(matches!(err, IngestError::RtpBackwards { record: 1 }));
    }

    #[test]
    fn csv_nominal_25fps() {
        let track =
            load_timestamp_csv("frame,timestamp_ms\n0,0.0\n1,40.0\n2,80.0".as_bytes(), "c")
                .unwrap();
        assert_eq!(track.timestamps_ms(), vec![0.0, 40.0, 80.0]);
        assert_eq!(track.timescale, 1000);
    }

    #[test]
    fn csv_gap_accepted() {
        let track =
            load_timestamp_csv("frame,timestamp_ms\n0,0.0\n1,40.0\n2,120.0".as_bytes(), "c")
                .unwrap();
        let report = detect_dropped_frames(&track, 25.0, 0.25);
        assert_eq!(report.gaps.len(), 1);
        assert_eq!(report.gaps[0].missing, 1);
    }

    #[test]
    fn csv_non_increasing_rejected() {
        let err = load_timestamp_csv("frame,timestamp_ms\n0,10.0\n1,10.0".as_bytes(), "c")
            .unwrap_err();
        assert!(matches!(err, IngestError::Csv { line: 3, .. }));
    }

    #[test]
    fn csv_malformed_row_names_line() {
        let err =
            load_timestamp_csv("frame,timestamp_ms\n0,0.0\nnot-a-frame,1.0".as_bytes(), "c")
                .unwrap_err();
        match err {
            IngestError::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn csv_comments_skipped() {
        let track = load_timestamp_csv(
            "# produced by prober\nframe,timestamp_ms\n0,0.0\n# gap here\n1,40.0".as_bytes(),
            "c",
        )
        .unwrap();
        assert_eq!(track.len(), 2);
    }

    #[test]
    fn gaps_clean_track_empty_report() {
        let track =
            TimestampTrack::new("c", 1000, vec![0.0, 40.0, 80.0, 120.0]).unwrap();
        assert!(detect_dropped_frames(&track, 25.0, 0.1).gaps.is_empty());
    }

    #[test]
    fn gaps_one_missing_frame() {
        let track = TimestampTrack::new("c", 1000, vec![0.0, 40.0, 120.0]).unwrap();
        let report = detect_dropped_frames(&track, 25.0, 0.25);
        assert_eq!(
            report.gaps,
            vec![FrameGap {
                frame_before: 1,
                missing: 1,
                gap_ms: 80.0
            }]
        );
    }

    #[test]
    fn gaps_two_missing_frames() {
        let track = TimestampTrack::new("c", 1000, vec![0.0, 40.0, 161.0]).unwrap();
        let report = detect_dropped_frames(&track, 25.0, 0.25);
        assert_eq!(report.gaps.len(), 1);
        assert_eq!(report.gaps[0].missing, 2); // round(121/40) - 1
    }

    #[test]
    fn gaps_empty_track() {
        let track = TimestampTrack::new("c", 1000, vec![]).unwrap();
        assert!(detect_dropped_frames(&track, 25.0, 0.1).gaps.is_empty());
    }

    #[test]
    fn track_rejects_non_monotonic() {
        assert!(matches!(
            TimestampTrack::new("c", 1000, vec![0.0, 40.0, 40.0]),
            Err(IngestError::NonMonotonic { index: 2 })
        ));
    }

    #[test]
    fn frame_duration_median_delta() {
        let track = TimestampTrack::new("c", 1000, vec![0.0, 40.0, 80.0, 200.0]).unwrap();
        assert_eq!(track.frame_duration_ms(), Some(40.0));
    }

    #[test]
    fn timestamp_csv_round_trip() {
        let track = TimestampTrack::new("cam7", 1000, vec![0.0, 40.0, 80.5]).unwrap();
        let mut buf = Vec::new();
        write_timestamp_csv(&track, &mut buf).unwrap();
        let parsed = load_timestamp_csv(buf.as_slice(), "cam7").unwrap();
        assert_eq!(parsed.timestamps, track.timestamps);
    }
}
