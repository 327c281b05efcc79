//! Minimal ISO-BMFF parser extracting frame decode timestamps.
//!
//! Only the timing-relevant box path is walked:
//! `moov/trak/mdia/mdhd` (media timescale) and `moov/trak/mdia/minf/stbl/stts`
//! (sample deltas). Edit lists and composition offsets are ignored; capture
//! order equals decode order for camera-originated streams. All multi-byte
//! integers are big-endian; 64-bit box sizes (size == 1) and version-1 mdhd
//! are supported.

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};

use super::{IngestError, TimestampTrack};

fn err(path: &str, offset: usize, reason: impl Into<String>) -> IngestError {
    IngestError::Mp4 {
        path: path.to_string(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy)]
struct RawBox {
    kind: [u8; 4],
    /// Absolute offset of the box header, for error reporting.
    offset: usize,
    payload_start: usize,
    payload_end: usize,
}

impl RawBox {
    fn payload<'a>(&self, data: &'a [u8]) -> &'a [u8] {
        &data[self.payload_start..self.payload_end]
    }
}

/// Scan the sibling boxes in `data[start..end]`.
fn scan_boxes(
    data: &[u8],
    start: usize,
    end: usize,
    path: &str,
) -> Result<Vec<RawBox>, IngestError> {
    let mut boxes = Vec::new();
    let mut off = start;
    while off < end {
        if off + 8 > end {
            return Err(err(path, off, "truncated box header"));
        }
        let size32 = BigEndian::read_u32(&data[off..off + 4]);
        let kind: [u8; 4] = data[off + 4..off + 8].try_into().unwrap();
        let (header_len, size) = match size32 {
            0 => (8usize, (end - off) as u64), // box extends to end of enclosing scope
            1 => {
                if off + 16 > end {
                    return Err(err(path, off, "truncated 64-bit box size"));
                }
                (16usize, BigEndian::read_u64(&data[off + 8..off + 16]))
            }
            s => (8usize, s as u64),
        };
        if size < header_len as u64 {
            return Err(err(path, off, format!("box size {size} smaller than header")));
        }
        let box_end = off as u64 + size;
        if box_end > end as u64 {
            return Err(err(
                path,
                off,
                format!("box extends past enclosing scope by {} bytes", box_end - end as u64),
            ));
        }
        boxes.push(RawBox {
            kind,
            offset: off,
            payload_start: off + header_len,
            payload_end: box_end as usize,
        });
        off = box_end as usize;
    }
    Ok(boxes)
}

fn find_box(boxes: &[RawBox], kind: &[u8; 4]) -> Option<RawBox> {
    boxes.iter().copied().find(|b| &b.kind == kind)
}

fn children(data: &[u8], parent: &RawBox, path: &str) -> Result<Vec<RawBox>, IngestError> {
    scan_boxes(data, parent.payload_start, parent.payload_end, path)
}

/// Media timescale from an mdhd box, version 0 or 1.
fn parse_mdhd(data: &[u8], mdhd: &RawBox, path: &str) -> Result<u32, IngestError> {
    let p = mdhd.payload(data);
    if p.is_empty() {
        return Err(err(path, mdhd.offset, "empty mdhd payload"));
    }
    let version = p[0];
    // version 0: creation(4) modification(4) timescale(4) duration(4)
    // version 1: creation(8) modification(8) timescale(4) duration(8)
    let ts_off = match version {
        0 => 4 + 4 + 4,
        1 => 4 + 8 + 8,
        v => return Err(err(path, mdhd.offset, format!("unsupported mdhd version {v}"))),
    };
    if p.len() < ts_off + 4 {
        return Err(err(path, mdhd.offset, "truncated mdhd payload"));
    }
    let timescale = BigEndian::read_u32(&p[ts_off..ts_off + 4]);
    if timescale == 0 {
        return Err(err(path, mdhd.offset, "zero timescale"));
    }
    Ok(timescale)
}

/// Sample delta run-lengths from an stts box: (sample_count, sample_delta).
fn parse_stts(data: &[u8], stts: &RawBox, path: &str) -> Result<Vec<(u32, u32)>, IngestError> {
    let p = stts.payload(data);
    if p.len() < 8 {
        return Err(err(path, stts.offset, "truncated stts header"));
    }
    let entry_count = BigEndian::read_u32(&p[4..8]) as usize;
    let needed = 8 + entry_count * 8;
    if p.len() < needed {
        return Err(err(
            path,
            stts.offset,
            format!("stts declares {entry_count} entries but payload is short"),
        ));
    }
    let mut entries = Vec::with_capacity(entry_count);
    for i in 0..entry_count {
        let base = 8 + i * 8;
        entries.push((
            BigEndian::read_u32(&p[base..base + 4]),
            BigEndian::read_u32(&p[base + 4..base + 8]),
        ));
    }
    Ok(entries)
}

/// Handler type from an hdlr box (e.g. b"vide" for video tracks).
fn parse_hdlr(data: &[u8], hdlr: &RawBox) -> Option<[u8; 4]> {
    let p = hdlr.payload(data);
    // version/flags(4) pre_defined(4) handler_type(4)
    if p.len() < 12 {
        return None;
    }
    Some(p[8..12].try_into().unwrap())
}

/// Decode timestamps of the first video track: `t_0 = 0`,
/// `t_i = t_{i-1} + delta_i`, one timestamp per sample, in mdhd timescale
/// units.
pub fn parse_mp4_timestamps(
    data: &[u8],
    camera_id: impl Into<String>,
) -> Result<TimestampTrack, IngestError> {
    parse_mp4_timestamps_with_track(data, camera_id, None)
}

/// Same as [`parse_mp4_timestamps`] but selecting the video track by index
/// (among video tracks, in file order) instead of taking the first.
pub fn parse_mp4_timestamps_with_track(
    data: &[u8],
    camera_id: impl Into<String>,
    video_track_index: Option<usize>,
) -> Result<TimestampTrack, IngestError> {
    let top = scan_boxes(data, 0, data.len(), "(top level)")?;
    let moov = find_box(&top, b"moov").ok_or_else(|| err("moov", 0, "missing moov box"))?;
    let moov_children = children(data, &moov, "moov")?;

    let wanted_index = video_track_index.unwrap_or(0);
    let mut video_seen = 0usize;
    for trak in moov_children.iter().filter(|b| &b.kind == b"trak") {
        let trak_children = children(data, trak, "moov/trak")?;
        let mdia = match find_box(&trak_children, b"mdia") {
            Some(b) => b,
            None => continue,
        };
        let mdia_children = children(data, &mdia, "moov/trak/mdia")?;

        let is_video = match find_box(&mdia_children, b"hdlr") {
            Some(hdlr) => parse_hdlr(data, &hdlr) == Some(*b"vide"),
            // No handler box: accept the track rather than dropping it.
            None => true,
        };
        if !is_video {
            continue;
        }
        if video_seen != wanted_index {
            video_seen += 1;
            continue;
        }

        let mdhd = find_box(&mdia_children, b"mdhd")
            .ok_or_else(|| err("moov/trak/mdia/mdhd", mdia.offset, "missing mdhd box"))?;
        let timescale = parse_mdhd(data, &mdhd, "moov/trak/mdia/mdhd")?;

        let minf = find_box(&mdia_children, b"minf")
            .ok_or_else(|| err("moov/trak/mdia/minf", mdia.offset, "missing minf box"))?;
        let minf_children = children(data, &minf, "moov/trak/mdia/minf")?;
        let stbl = find_box(&minf_children, b"stbl").ok_or_else(|| {
            err("moov/trak/mdia/minf/stbl", minf.offset, "missing stbl box")
        })?;
        let stbl_children = children(data, &stbl, "moov/trak/mdia/minf/stbl")?;
        let stts = find_box(&stbl_children, b"stts").ok_or_else(|| {
            err("moov/trak/mdia/minf/stbl/stts", stbl.offset, "missing stts box")
        })?;
        let entries = parse_stts(data, &stts, "moov/trak/mdia/minf/stbl/stts")?;

        let timestamps = cumulative_timestamps(&entries);
        let mut track = TimestampTrack::new(camera_id, timescale, timestamps)?;
        track.nominal_frame_duration_ms = nominal_duration_ms(&entries, timescale);
        return Ok(track);
    }
    Err(err(
        "moov/trak",
        moov.offset,
        format!("no video track with index {wanted_index}"),
    ))
}

/// Decode start times from stts run-lengths: one timestamp per sample, the
/// first at 0. The last sample's delta only defines the track duration.
fn cumulative_timestamps(entries: &[(u32, u32)]) -> Vec<f64> {
    let total: usize = entries.iter().map(|&(count, _)| count as usize).sum();
    let mut out = Vec::with_capacity(total);
    let mut t: u64 = 0;
    for &(count, delta) in entries {
        for _ in 0..count {
            out.push(t as f64);
            t += delta as u64;
        }
    }
    out
}

/// Most common sample delta, converted to milliseconds.
fn nominal_duration_ms(entries: &[(u32, u32)], timescale: u32) -> Option<f64> {
    entries
        .iter()
        .filter(|&&(count, _)| count > 0)
        .max_by_key(|&&(count, _)| count)
        .map(|&(_, delta)| delta as f64 * 1000.0 / timescale as f64)
}

/// Fixture builder for a minimal MP4 exercising exactly the boxes this
/// parser reads. Also handy for integration testing of downstream tools.
#[derive(Debug, Clone)]
pub struct SyntheticMp4 {
    pub timescale: u32,
    /// stts run-lengths: (sample_count, sample_delta).
    pub stts: Vec<(u32, u32)>,
    /// 0 or 1; version 1 uses 64-bit creation/modification/duration fields.
    pub mdhd_version: u8,
    /// Emit the moov box with a 64-bit (size == 1) header.
    pub largesize_moov: bool,
    /// Prepend a non-video (sound) track to exercise track selection.
    pub leading_sound_track: bool,
}

impl SyntheticMp4 {
    pub fn new(timescale: u32, stts: Vec<(u32, u32)>) -> Self {
        Self {
            timescale,
            stts,
            mdhd_version: 0,
            largesize_moov: false,
            leading_sound_track: false,
        }
    }

    pub fn build(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_box(&mut out, b"ftyp", false, |b| {
            b.extend_from_slice(b"isom");
            b.write_u32::<BigEndian>(512).unwrap();
            b.extend_from_slice(b"isom");
        });
        write_box(&mut out, b"moov", self.largesize_moov, |moov| {
            if self.leading_sound_track {
                write_trak(moov, b"soun", self.timescale, &[], 0);
            }
            write_trak(moov, b"vide", self.timescale, &self.stts, self.mdhd_version);
        });
        out
    }
}

fn write_box(out: &mut Vec<u8>, kind: &[u8; 4], largesize: bool, fill: impl FnOnce(&mut Vec<u8>)) {
    let mut payload = Vec::new();
    fill(&mut payload);
    if largesize {
        out.write_u32::<BigEndian>(1).unwrap();
        out.extend_from_slice(kind);
        out.write_u64::<BigEndian>(16 + payload.len() as u64).unwrap();
    } else {
        out.write_u32::<BigEndian>(8 + payload.len() as u32).unwrap();
        out.extend_from_slice(kind);
    }
    out.extend_from_slice(&payload);
}

fn write_trak(out: &mut Vec<u8>, handler: &[u8; 4], timescale: u32, stts: &[(u32, u32)], mdhd_version: u8) {
    write_box(out, b"trak", false, |trak| {
        write_box(trak, b"mdia", false, |mdia| {
            write_box(mdia, b"mdhd", false, |mdhd| {
                mdhd.push(mdhd_version);
                mdhd.extend_from_slice(&[0, 0, 0]); // flags
                if mdhd_version == 1 {
                    mdhd.write_u64::<BigEndian>(0).unwrap(); // creation
                    mdhd.write_u64::<BigEndian>(0).unwrap(); // modification
                    mdhd.write_u32::<BigEndian>(timescale).unwrap();
                    mdhd.write_u64::<BigEndian>(0).unwrap(); // duration
                } else {
                    mdhd.write_u32::<BigEndian>(0).unwrap();
                    mdhd.write_u32::<BigEndian>(0).unwrap();
                    mdhd.write_u32::<BigEndian>(timescale).unwrap();
                    mdhd.write_u32::<BigEndian>(0).unwrap();
                }
                mdhd.write_u16::<BigEndian>(0x55c4).unwrap(); // language "und"
                mdhd.write_u16::<BigEndian>(0).unwrap();
            });
            write_box(mdia, b"hdlr", false, |hdlr| {
                hdlr.write_u32::<BigEndian>(0).unwrap(); // version/flags
                hdlr.write_u32::<BigEndian>(0).unwrap(); // pre_defined
                hdlr.extend_from_slice(handler);
                hdlr.extend_from_slice(&[0u8; 12]); // reserved
                hdlr.push(0); // empty name
            });
            write_box(mdia, b"minf", false, |minf| {
                write_box(minf, b"stbl", false, |stbl| {
                    write_box(stbl, b"stts", false, |b| {
                        b.write_u32::<BigEndian>(0).unwrap(); // version/flags
                        b.write_u32::<BigEndian>(stts.len() as u32).unwrap();
                        for &(count, delta) in stts {
                            b.write_u32::<BigEndian>(count).unwrap();
                            b.write_u32::<BigEndian>(delta).unwrap();
                        }
                    });
                });
            });
        });
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_single_entry() {
        let data = SyntheticMp4::new(90_000, vec![(3, 3600)]).build();
        let track = parse_mp4_timestamps(&data, "c").unwrap();
        assert_eq!(track.timescale, 90_000);
        assert_eq!(track.timestamps, vec![0.0, 3600.0, 7200.0]);
        assert_eq!(track.timestamps_ms(), vec![0.0, 40.0, 80.0]);
    }

    #[test]
    fn doubled_delta_encodes_dropped_frame() {
        // durations 3600, 7200, 3600: the 7200 step is a one-frame gap
        let data = SyntheticMp4::new(90_000, vec![(1, 3600), (1, 7200), (1, 3600)]).build();
        let track = parse_mp4_timestamps(&data, "c").unwrap();
        assert_eq!(track.timestamps, vec![0.0, 3600.0, 10_800.0]);
        let report = super::super::detect_dropped_frames(&track, 25.0, 0.25);
        assert_eq!(report.total_missing(), 1);
    }

    #[test]
    fn empty_stts_is_valid() {
        let data = SyntheticMp4::new(90_000, vec![]).build();
        let track = parse_mp4_timestamps(&data, "c").unwrap();
        assert!(track.timestamps.is_empty());
    }

    #[test]
    fn mdhd_version_1() {
        let mut fixture = SyntheticMp4::new(600, vec![(4, 24)]);
        fixture.mdhd_version = 1;
        let track = parse_mp4_timestamps(&fixture.build(), "c").unwrap();
        assert_eq!(track.timescale, 600);
        assert_eq!(track.timestamps, vec![0.0, 24.0, 48.0, 72.0]);
    }

    #[test]
    fn largesize_box_header() {
        let mut fixture = SyntheticMp4::new(90_000, vec![(2, 3600)]);
        fixture.largesize_moov = true;
        let track = parse_mp4_timestamps(&fixture.build(), "c").unwrap();
        assert_eq!(track.timestamps, vec![0.0, 3600.0]);
    }

    #[test]
    fn skips_leading_sound_track() {
        let mut fixture = SyntheticMp4::new(90_000, vec![(2, 3600)]);
        fixture.leading_sound_track = true;
        let track = parse_mp4_timestamps(&fixture.build(), "c").unwrap();
        assert_eq!(track.timestamps, vec![0.0, 3600.0]);
    }

    #[test]
    fn missing_moov_reported() {
        let data = SyntheticMp4::new(90_000, vec![(1, 3600)]).build();
        let only_ftyp = &data[..20]; // the complete ftyp box, nothing else
        let e = parse_mp4_timestamps(only_ftyp, "c");
        match e {
            Err(IngestError::Mp4 { path, .. }) => assert!(path.contains("moov"), "{path}"),
            other => panic!("expected mp4 error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_box_reports_offset() {
        let mut data = SyntheticMp4::new(90_000, vec![(3, 3600)]).build();
        data.truncate(data.len() - 4);
        let e = parse_mp4_timestamps(&data, "c");
        assert!(matches!(e, Err(IngestError::Mp4 { .. })), "{e:?}");
    }

    #[test]
    fn zero_timescale_rejected() {
        let data = SyntheticMp4::new(0, vec![(1, 3600)]).build();
        match parse_mp4_timestamps(&data, "c") {
            Err(IngestError::Mp4 { path, reason, .. }) => {
                assert!(path.ends_with("mdhd"));
                assert!(reason.contains("zero timescale"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn garbage_input_is_an_error_not_a_panic() {
        let garbage: Vec<u8> = (0..64u8).collect();
        assert!(parse_mp4_timestamps(&garbage, "c").is_err());
    }
}
