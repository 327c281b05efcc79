//! Synthetic multi-camera rolling-shutter captures with known ground truth.
//!
//! The simulator inverts the sub-frame time model: given a flash at world
//! (reference) time, it finds the frame and row each camera captures it at.
//! A camera's frame f starts at world time `alpha * f * T_frame + beta`; its
//! rows advance with the world-time row period `alpha * T_frame / R`. The
//! hidden-row offset `R0 * t_row` is folded into the effective shift, so the
//! ground-truth parameters are exactly what the solver's model estimates.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::DiffProfile;
use crate::ingest::TimestampTrack;
use crate::timebase::{SensorGeometry, SyncParams};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("reference camera {0} not found among specs")]
    MissingReference(String),
    #[error("reference camera must have alpha = 1 and beta = 0")]
    NonIdentityReference,
    #[error("invalid camera spec for {camera_id}: {reason}")]
    InvalidSpec { camera_id: String, reason: String },
}

/// Acquisition model of one simulated camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedCameraSpec {
    pub camera_id: String,
    pub fps: f64,
    pub geometry: SensorGeometry,
    /// Clock drift: reference time advances by `true_alpha` ms per
    /// camera-clock ms.
    pub true_alpha: f64,
    /// Temporal shift of the camera clock origin in reference time, ms.
    pub true_beta_ms: f64,
    /// Probability that any frame is dropped by the encoder.
    #[serde(default)]
    pub drop_probability: f64,
    /// Gaussian noise applied to observed event rows, in rows.
    #[serde(default)]
    pub row_noise_sigma: f64,
    /// Gaussian noise applied to emitted profile values, intensity units.
    #[serde(default)]
    pub profile_noise_sigma: f64,
}

impl SimulatedCameraSpec {
    fn validate(&self) -> Result<(), SimError> {
        let fail = |reason: &str| SimError::InvalidSpec {
            camera_id: self.camera_id.clone(),
            reason: reason.to_string(),
        };
        if !(self.fps > 0.0) {
            return Err(fail("fps must be positive"));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(fail("drop_probability must be in [0, 1)"));
        }
        if !(self.true_alpha > 0.0) {
            return Err(fail("alpha must be positive"));
        }
        Ok(())
    }

    /// Nominal frame duration on the camera's own clock, ms.
    pub fn frame_duration_ms(&self) -> f64 {
        1000.0 / self.fps
    }

    /// Row period in reference (world) time, ms.
    pub fn t_row_world_ms(&self) -> f64 {
        self.true_alpha * self.frame_duration_ms() / self.geometry.total_rows() as f64
    }

    /// The parameters the solver should recover: the hidden-row offset is
    /// absorbed into beta.
    pub fn ground_truth_params(&self) -> SyncParams {
        let t_row = self.t_row_world_ms();
        SyncParams {
            alpha: self.true_alpha,
            beta_ms: self.true_beta_ms + self.geometry.rows_before as f64 * t_row,
            t_row_ms: t_row,
        }
    }
}

/// Flash times in reference/world time plus the temporal shape shared by
/// all flashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashSchedule {
    pub times_ms: Vec<f64>,
    /// Nominal flash duration; must stay well below every frame duration.
    pub duration_ms: f64,
    /// Peak intensity on the profile scale.
    pub amplitude: f64,
    /// Exponential decay constant of the flashtube discharge, ms.
    pub decay_ms: f64,
}

impl FlashSchedule {
    /// Uniformly spread `count` flashes over `[margin, total - margin]`,
    /// jittered reproducibly by `seed`.
    pub fn random(
        count: usize,
        total_duration_ms: f64,
        margin_ms: f64,
        amplitude: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = total_duration_ms - 2.0 * margin_ms;
        let slot = span / count.max(1) as f64;
        let times_ms = (0..count)
            .map(|i| margin_ms + slot * (i as f64 + rng.random_range(0.2..0.8)))
            .collect();
        Self {
            times_ms,
            duration_ms: 1.0,
            amplitude,
            decay_ms: 0.3,
        }
    }
}

/// A flash as observed (or missed) by one camera, with exact bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    /// Index into the camera's timestamp track (dropped frames excluded).
    pub frame: usize,
    /// Detected-style integer row, rounded and clamped to the active area.
    pub row: u32,
    /// Observed row including detection noise, unquantized.
    pub row_observed: f64,
    /// Noise-free row position from exact model inversion.
    pub row_exact: f64,
    /// Flash time in reference/world time.
    pub world_time_ms: f64,
    /// True when the noise-free row falls outside the active area, i.e. the
    /// flash crossed the frame boundary.
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCamera {
    pub spec: SimulatedCameraSpec,
    pub track: TimestampTrack,
    pub events: Vec<GroundTruthEvent>,
    pub truth: SyncParams,
    /// Original frame numbers removed by the dropped-frame model.
    pub dropped_frames: Vec<usize>,
    /// Flashes that fell outside this camera's capture interval or into a
    /// dropped frame.
    pub missed_flashes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub reference_id: String,
    pub cameras: Vec<SimulatedCamera>,
    pub schedule: FlashSchedule,
}

impl Simulation {
    pub fn camera(&self, camera_id: &str) -> Option<&SimulatedCamera> {
        self.cameras.iter().find(|c| c.spec.camera_id == camera_id)
    }
}

/// Simulate every camera capturing the flash schedule over
/// `[0, total_duration_ms]` of its own clock. Reproducible given `seed`.
pub fn simulate_capture(
    specs: &[SimulatedCameraSpec],
    reference_id: &str,
    schedule: &FlashSchedule,
    total_duration_ms: f64,
    seed: u64,
) -> Result<Simulation, SimError> {
    let reference = specs
        .iter()
        .find(|s| s.camera_id == reference_id)
        .ok_or_else(|| SimError::MissingReference(reference_id.to_string()))?;
    if reference.true_alpha != 1.0 || reference.true_beta_ms != 0.0 {
        return Err(SimError::NonIdentityReference);
    }

    // The solver expresses reference time as `t_ref + r_ref * T_row_ref`
    // with `r_ref` counted from the top of the active area, so its timebase
    // lags world time by the reference camera's hidden-row lead. Shift every
    // camera's true beta accordingly; the reference itself lands on the
    // identity mapping.
    let reference_lead_ms =
        reference.geometry.rows_before as f64 * reference.t_row_world_ms();

    let mut cameras = Vec::with_capacity(specs.len());
    for (index, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut camera = simulate_one(spec, schedule, total_duration_ms, &mut rng);
        camera.truth.beta_ms -= reference_lead_ms;
        cameras.push(camera);
    }
    Ok(Simulation {
        reference_id: reference_id.to_string(),
        cameras,
        schedule: schedule.clone(),
    })
}

fn simulate_one(
    spec: &SimulatedCameraSpec,
    schedule: &FlashSchedule,
    total_duration_ms: f64,
    rng: &mut ChaCha8Rng,
) -> SimulatedCamera {
    let frame_duration = spec.frame_duration_ms();
    let frame_count = (total_duration_ms / frame_duration).floor() as usize;
    let truth = spec.ground_truth_params();
    let t_row = spec.t_row_world_ms();

    // Dropped frames disappear from the track; later timestamps keep
    // ticking on the camera clock.
    let mut kept = Vec::with_capacity(frame_count);
    let mut dropped_frames = Vec::new();
    let mut kept_index_of = vec![usize::MAX; frame_count];
    for f in 0..frame_count {
        if spec.drop_probability > 0.0 && rng.random::<f64>() < spec.drop_probability {
            dropped_frames.push(f);
        } else {
            kept_index_of[f] = kept.len();
            kept.push(f as f64 * frame_duration);
        }
    }
    let mut track = TimestampTrack::new(spec.camera_id.clone(), 1000, kept)
        .expect("frame times are strictly increasing");
    track.nominal_frame_duration_ms = Some(frame_duration);

    let row_noise = Normal::new(0.0, spec.row_noise_sigma.max(0.0)).ok();
    let world_frame_duration = spec.true_alpha * frame_duration;
    let mut events = Vec::new();
    let mut missed = Vec::new();
    for &world_time in &schedule.times_ms {
        // Frame whose world span [alpha f T + beta, alpha (f+1) T + beta)
        // contains the flash.
        let f = ((world_time - spec.true_beta_ms) / world_frame_duration).floor();
        if f < 0.0 || f as usize >= frame_count {
            missed.push(world_time);
            continue;
        }
        let f = f as usize;
        let frame_start_world = spec.true_alpha * (f as f64 * frame_duration) + spec.true_beta_ms;
        let row_exact =
            (world_time - frame_start_world) / t_row - spec.geometry.rows_before as f64;
        let boundary = !(0.0..spec.geometry.rows_active as f64).contains(&row_exact);
        if kept_index_of[f] == usize::MAX {
            missed.push(world_time);
            continue;
        }
        let noise = match (&row_noise, spec.row_noise_sigma > 0.0) {
            (Some(n), true) => n.sample(rng),
            _ => 0.0,
        };
        let row_observed = row_exact + noise;
        let row = row_observed
            .round()
            .clamp(0.0, (spec.geometry.rows_active - 1) as f64) as u32;
        events.push(GroundTruthEvent {
            frame: kept_index_of[f],
            row,
            row_observed,
            row_exact,
            world_time_ms: world_time,
            boundary,
        });
    }

    SimulatedCamera {
        spec: spec.clone(),
        track,
        events,
        truth,
        dropped_frames,
        missed_flashes: missed,
    }
}

/// Per-row intensity difference produced by one flash inside one frame.
///
/// Rows sample the scene at the end of their exposure window. A row whose
/// window overlaps the flash only partially integrates a fraction of the
/// light, which yields the linear onset ramp; rows after the onset see the
/// exponential flashtube decay.
pub fn synth_flash_profile(
    flash_time_in_frame_ms: f64,
    exposure_ms: f64,
    geometry: &SensorGeometry,
    frame_duration_ms: f64,
    amplitude: f64,
    decay_ms: f64,
) -> DiffProfile {
    let t_row = frame_duration_ms / geometry.total_rows() as f64;
    let f0 = flash_time_in_frame_ms;
    let tau = decay_ms.max(1e-12);
    let values = (0..geometry.rows_active)
        .map(|r| {
            let t_r = (geometry.rows_before + r) as f64 * t_row;
            if exposure_ms <= 0.0 {
                if t_r >= f0 {
                    amplitude * (-(t_r - f0) / tau).exp()
                } else {
                    0.0
                }
            } else {
                let start = (t_r - exposure_ms).max(f0);
                if t_r <= start {
                    0.0
                } else {
                    // mean of A exp(-(t - f0)/tau) over [start, t_r]
                    let integral = amplitude
                        * tau
                        * ((-(start - f0) / tau).exp() - (-(t_r - f0) / tau).exp());
                    integral / exposure_ms
                }
            }
        })
        .collect();
    DiffProfile { frame: 0, values }
}

/// Full per-frame median row profiles for one simulated camera: a constant
/// background plus flash bands in the frames that saw a flash.
pub fn simulate_profiles(
    camera: &SimulatedCamera,
    schedule: &FlashSchedule,
    exposure_ms: f64,
    background: f64,
    seed: u64,
) -> Vec<crate::detect::RowProfile> {
    let spec = &camera.spec;
    let frame_duration = spec.frame_duration_ms();
    let world_frame_duration = spec.true_alpha * frame_duration;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xF1A5));
    let noise = Normal::new(0.0, spec.profile_noise_sigma.max(0.0)).ok();

    let mut profiles: Vec<crate::detect::RowProfile> = camera
        .track
        .timestamps_ms()
        .iter()
        .enumerate()
        .map(|(i, _)| crate::detect::RowProfile {
            frame: i,
            values: vec![background; spec.geometry.rows_active as usize],
        })
        .collect();

    for event in &camera.events {
        let world_time = event.world_time_ms;
        let f = ((world_time - spec.true_beta_ms) / world_frame_duration).floor();
        let frame_start_world = spec.true_alpha * (f * frame_duration) + spec.true_beta_ms;
        // flash position within the frame, in camera-local ms
        let flash_in_frame = (world_time - frame_start_world) / spec.true_alpha;
        let flash = synth_flash_profile(
            flash_in_frame,
            exposure_ms,
            &spec.geometry,
            frame_duration,
            schedule.amplitude,
            schedule.decay_ms,
        );
        let profile = &mut profiles[event.frame];
        for (v, add) in profile.values.iter_mut().zip(&flash.values) {
            *v += add;
        }
    }
    if spec.profile_noise_sigma > 0.0 {
        if let Some(n) = noise {
            for p in &mut profiles {
                for v in &mut p.values {
                    *v += n.sample(&mut rng);
                }
            }
        }
    }
    profiles
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(id: &str, alpha: f64, beta: f64) -> SimulatedCameraSpec {
        SimulatedCameraSpec {
            camera_id: id.into(),
            fps: 25.0,
            geometry: SensorGeometry::new(10, 1080, 10).unwrap(),
            true_alpha: alpha,
            true_beta_ms: beta,
            drop_probability: 0.0,
            row_noise_sigma: 0.0,
            profile_noise_sigma: 0.0,
        }
    }

    #[test]
    fn inversion_matches_sub_frame_example() {
        // flash at 1019.9636... ms lands at (frame 0, row 539) when the
        // camera clock starts 1000 ms after the reference
        let s = spec("c2", 1.0, 1000.0);
        let schedule = FlashSchedule {
            times_ms: vec![1000.0 + 549.0 / 1100.0 * 40.0],
            duration_ms: 1.0,
            amplitude: 120.0,
            decay_ms: 0.3,
        };
        let specs = [spec("ref", 1.0, 0.0), s];
        let sim = simulate_capture(&specs, "ref", &schedule, 5000.0, 7).unwrap();
        let cam = sim.camera("ref").unwrap();
        assert_eq!(cam.events.len(), 1);
        let shifted = sim.camera("c2").unwrap().events.first().unwrap();
        assert_eq!(shifted.frame, 0);
        assert_eq!(shifted.row, 539);
        assert_relative_eq!(shifted.row_exact, 539.0, epsilon = 1e-6);
        assert!(!shifted.boundary);
    }

    #[test]
    fn flash_at_frame_start_is_boundary_without_hidden_rows() {
        let mut s = spec("ref", 1.0, 0.0);
        s.geometry = SensorGeometry::active_only(1080).unwrap();
        let schedule = FlashSchedule {
            times_ms: vec![40.0],
            duration_ms: 1.0,
            amplitude: 120.0,
            decay_ms: 0.3,
        };
        let sim = simulate_capture(&[s], "ref", &schedule, 5000.0, 7).unwrap();
        let e = &sim.cameras[0].events[0];
        assert_eq!(e.frame, 1);
        assert_eq!(e.row, 0);
        assert_eq!(e.row_exact, 0.0);
        // row 0 with R0 = 0: the leading edge coincides with the frame start
        assert!(!e.boundary);
    }

    #[test]
    fn flash_in_hidden_rows_is_boundary() {
        let s = spec("ref", 1.0, 0.0); // R0 = 10
        let t_row = 40.0 / 1100.0;
        let schedule = FlashSchedule {
            times_ms: vec![40.0 + 3.0 * t_row], // inside the R0 strip of frame 1
            duration_ms: 1.0,
            amplitude: 120.0,
            decay_ms: 0.3,
        };
        let sim = simulate_capture(&[s], "ref", &schedule, 5000.0, 7).unwrap();
        let e = &sim.cameras[0].events[0];
        assert!(e.boundary);
        assert!(e.row_exact < 0.0);
    }

    #[test]
    fn dropped_frames_lose_events_and_leave_gaps() {
        let mut s = spec("ref", 1.0, 0.0);
        s.drop_probability = 0.05;
        let schedule = FlashSchedule::random(20, 300_000.0, 5000.0, 120.0, 3);
        let sim = simulate_capture(&[s], "ref", &schedule, 300_000.0, 11).unwrap();
        let cam = &sim.cameras[0];
        let expected = 7500.0 * 0.05;
        let got = cam.dropped_frames.len() as f64;
        assert!((got - expected).abs() < expected * 0.5, "dropped {got}");
        // gap report recovers exactly the dropped frames that sit between
        // two recorded ones (leading/trailing drops leave no delta)
        let first_kept = cam.track.timestamps[0] / 40.0;
        let last_kept = *cam.track.timestamps.last().unwrap() / 40.0;
        let interior = cam
            .dropped_frames
            .iter()
            .filter(|&&f| (f as f64) > first_kept && (f as f64) < last_kept)
            .count();
        let report = crate::ingest::detect_dropped_frames(&cam.track, 25.0, 0.25);
        assert_eq!(report.total_missing() as usize, interior);
        assert_eq!(
            cam.events.len() + cam.missed_flashes.len(),
            schedule.times_ms.len()
        );
    }

    #[test]
    fn determinism_identical_seeds() {
        let specs = [spec("ref", 1.0, 0.0), {
            let mut s = spec("c2", 1.0 + 8e-6, 6066.7);
            s.drop_probability = 0.03;
            s.row_noise_sigma = 30.0;
            s
        }];
        let schedule = FlashSchedule::random(15, 300_000.0, 50_000.0, 120.0, 5);
        let a = simulate_capture(&specs, "ref", &schedule, 300_000.0, 42).unwrap();
        let b = simulate_capture(&specs, "ref", &schedule, 300_000.0, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_capture(&specs, "ref", &schedule, 300_000.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn non_identity_reference_rejected() {
        let s = spec("ref", 1.0 + 1e-6, 0.0);
        let schedule = FlashSchedule::random(3, 10_000.0, 1000.0, 120.0, 1);
        assert!(matches!(
            simulate_capture(&[s], "ref", &schedule, 10_000.0, 1),
            Err(SimError::NonIdentityReference)
        ));
    }

    #[test]
    fn flash_outside_interval_skipped() {
        let s = spec("ref", 1.0, 0.0);
        let schedule = FlashSchedule {
            times_ms: vec![-100.0, 2000.0, 900_000.0],
            duration_ms: 1.0,
            amplitude: 120.0,
            decay_ms: 0.3,
        };
        let sim = simulate_capture(&[s], "ref", &schedule, 5000.0, 1).unwrap();
        assert_eq!(sim.cameras[0].events.len(), 1);
        assert_eq!(sim.cameras[0].missed_flashes, vec![-100.0, 900_000.0]);
    }

    #[test]
    fn step_profile_for_instant_exposure() {
        let g = SensorGeometry::active_only(200).unwrap();
        let t_row = 40.0 / 200.0;
        // very slow decay: effectively a step at the flash row
        let d = synth_flash_profile(50.0 * t_row, 0.0, &g, 40.0, 100.0, 1e9);
        for (r, &v) in d.values.iter().enumerate() {
            if r < 50 {
                assert_eq!(v, 0.0, "row {r}");
            } else {
                assert_relative_eq!(v, 100.0, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn exposure_spreads_onset_over_matching_rows() {
        let g = SensorGeometry::active_only(400).unwrap();
        let t_row = 40.0 / 400.0;
        let exposure = 10.0 * t_row;
        let d = synth_flash_profile(100.0 * t_row, exposure, &g, 40.0, 100.0, 1e9);
        // rows before the flash row: zero
        for r in 0..100 {
            assert_eq!(d.values[r], 0.0, "row {r}");
        }
        // onset ramp across exactly 10 rows, then plateau
        for r in 101..110 {
            assert!(d.values[r] > d.values[r - 1], "row {r} not increasing");
        }
        for r in 110..130 {
            assert_relative_eq!(d.values[r], 100.0, max_relative = 1e-5);
        }
        // ramp is linear for a flat (slow-decay) flash; the huge decay
        // constant costs a few digits to cancellation
        let slope = d.values[105] - d.values[104];
        for r in 102..109 {
            assert_relative_eq!(d.values[r] - d.values[r - 1], slope, max_relative = 1e-3);
        }
    }

    #[test]
    fn profile_round_trip_through_detection() {
        let g = SensorGeometry::active_only(1000).unwrap();
        let t_row = 40.0 / 1000.0;
        let exposure = 8.0 * t_row;
        let flash_row = 300.0;
        let d = synth_flash_profile(flash_row * t_row, exposure, &g, 40.0, 150.0, 0.3);
        let events = crate::detect::detect_events("c", std::slice::from_ref(&d), 40.0);
        assert_eq!(events.len(), 1);
        let tolerance_rows = exposure / (2.0 * t_row);
        let err = (events[0].row as f64 - flash_row).abs();
        assert!(
            err <= tolerance_rows + 1.0,
            "edge error {err} rows exceeds {tolerance_rows}"
        );
    }
}
