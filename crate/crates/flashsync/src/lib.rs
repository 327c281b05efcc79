//! Synchronization of rolling-shutter camera streams to sub-millisecond accuracy.
//!
//! The pipeline has four stages:
//!
//! 1. [`ingest`] extracts per-frame acquisition timestamps from MP4 container
//!    metadata, RTP header records or CSV sidecars, and reports dropped-frame
//!    gaps.
//! 2. [`detect`] finds abrupt lighting changes (photographic flashes) in
//!    per-frame median row-intensity profiles and localizes the leading-edge
//!    row, yielding synchronization events.
//! 3. [`syncsolve`] matches events across cameras and solves a least-squares
//!    affine time mapping (clock drift, shift, row period) from every camera
//!    to a reference camera.
//! 4. [`timebase`] holds the rolling-shutter sub-frame time model used to map
//!    any (frame, row) position to reference time.
//!
//! [`simulate`] generates synthetic captures with known ground truth for
//! testing and calibration.

pub mod config;
pub mod detect;
pub mod ingest;
pub mod simulate;
pub mod syncsolve;
pub mod timebase;
