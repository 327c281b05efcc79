//! Command-line frontend for the synchronization pipeline.
//!
//! Subcommands: `extract` (timestamps), `detect` (events), `solve`
//! (synchronization parameters), `apply` (map a frame/row to reference
//! time), `simulate` (synthetic datasets) and `report` (event timelines).
//!
//! Exit codes: 0 success, 2 input error, 3 numerical/degeneracy error.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use flashsync::config::{
    ProjectConfig, RawFramesSource, ThresholdConfig, TimestampFormat, TimestampSource,
};
use flashsync::detect::{self, CsvEvent, DiffProfile, EventObservation, Polarity, RowProfile};
use flashsync::ingest::{self, TimestampTrack};
use flashsync::simulate::{self, FlashSchedule, SimulatedCameraSpec};
use flashsync::syncsolve::{self, CameraEvents, SolveError, SyncSolution, TimedEvent};
use flashsync::timebase::apply_sync;

#[derive(Parser)]
#[command(
    name = "flashsync",
    about = "Synchronize rolling-shutter camera streams from flash events",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-frame timestamps from the configured sources into CSVs.
    Extract {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for `<camera>_timestamps.csv` files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Report dropped-frame gaps against this slack fraction.
        #[arg(long, default_value_t = 0.25)]
        slack: f64,
    },
    /// Detect flash events in row profiles or raw frame streams.
    Detect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Override the configured threshold (a number, or `auto`).
        #[arg(long)]
        threshold: Option<String>,
        /// Concurrent per-camera workers.
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Match events across cameras and solve for drift, shift and row periods.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding `<camera>_timestamps.csv` and `<camera>_events.csv`.
        #[arg(long)]
        events_dir: PathBuf,
        /// Solution JSON output path.
        #[arg(long, default_value = "solution.json")]
        out: PathBuf,
        /// Matched-events audit CSV output path.
        #[arg(long)]
        matched_out: Option<PathBuf>,
        /// Override the reference camera id.
        #[arg(long)]
        reference: Option<String>,
        /// Matching tolerance in milliseconds.
        #[arg(long)]
        tolerance_ms: Option<f64>,
        /// Manual coarse offset override, `camera=ms`; repeatable.
        #[arg(long = "manual-offset")]
        manual_offsets: Vec<String>,
        /// Solve each camera pair independently instead of jointly.
        #[arg(long)]
        pairwise: bool,
    },
    /// Map a camera (frame, row) position to reference time.
    Apply {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        camera: String,
        #[arg(long)]
        row: u32,
        /// Frame timestamp in milliseconds (camera-local clock).
        #[arg(long)]
        timestamp_ms: Option<f64>,
        /// Frame index, looked up in --timestamps.
        #[arg(long)]
        frame: Option<usize>,
        /// Timestamp CSV for --frame lookup.
        #[arg(long)]
        timestamps: Option<PathBuf>,
    },
    /// Generate a synthetic multi-camera dataset with ground truth.
    Simulate {
        /// Scenario JSON; omit for the built-in 4-camera default.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print per-camera event timelines from events CSVs.
    Report {
        #[arg(long)]
        events_dir: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 3 for numerical/degeneracy failures, 2 for input problems.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SolveError>() {
        Some(
            SolveError::Singular { .. }
            | SolveError::Underdetermined { .. }
            | SolveError::NoMatches
            | SolveError::AmbiguousOffset,
        ) => 3,
        _ => 2,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Extract {
            config,
            out_dir,
            slack,
        } => cmd_extract(&config, &out_dir, slack),
        Command::Detect {
            config,
            out_dir,
            threshold,
            workers,
        } => cmd_detect(&config, &out_dir, threshold.as_deref(), workers),
        Command::Solve {
            config,
            events_dir,
            out,
            matched_out,
            reference,
            tolerance_ms,
            manual_offsets,
            pairwise,
        } => cmd_solve(
            &config,
            &events_dir,
            &out,
            matched_out.as_deref(),
            reference.as_deref(),
            tolerance_ms,
            &manual_offsets,
            pairwise,
        ),
        Command::Apply {
            solution,
            camera,
            row,
            timestamp_ms,
            frame,
            timestamps,
        } => cmd_apply(
            &solution,
            &camera,
            row,
            timestamp_ms,
            frame,
            timestamps.as_deref(),
        ),
        Command::Simulate {
            scenario,
            seed,
            out_dir,
        } => cmd_simulate(scenario.as_deref(), seed, &out_dir),
        Command::Report { events_dir, config } => cmd_report(&events_dir, &config),
    }
}

fn load_config(path: &Path) -> Result<(ProjectConfig, PathBuf)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let config = ProjectConfig::from_json(&text)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((config, base))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

// ---------------------------------------------------------------- extract

fn cmd_extract(config_path: &Path, out_dir: &Path, slack: f64) -> Result<()> {
    let (config, base) = load_config(config_path)?;
    fs::create_dir_all(out_dir)?;
    for cam in &config.cameras {
        let Some(source) = &cam.timestamps else {
            continue;
        };
        let track = extract_track(&cam.camera_id, source, &base)?;
        let out = out_dir.join(format!("{}_timestamps.csv", cam.camera_id));
        let mut file = fs::File::create(&out)?;
        ingest::write_timestamp_csv(&track, &mut file)?;
        println!(
            "{}: {} frames -> {}",
            cam.camera_id,
            track.len(),
            out.display()
        );
        if let Some(fps) = cam.fps {
            let report = ingest::detect_dropped_frames(&track, fps, slack);
            if !report.gaps.is_empty() {
                println!(
                    "{}: {} dropped frames across {} gaps",
                    cam.camera_id,
                    report.total_missing(),
                    report.gaps.len()
                );
            }
        }
    }
    Ok(())
}

fn extract_track(
    camera_id: &str,
    source: &TimestampSource,
    base: &Path,
) -> Result<TimestampTrack> {
    let path = resolve(base, &source.path);
    let track = match source.format {
        TimestampFormat::Mp4 => {
            let data = fs::read(&path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            ingest::parse_mp4_timestamps(&data, camera_id)?
        }
        TimestampFormat::Rtp => {
            let file = fs::File::open(&path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let records = ingest::load_rtp_csv(BufReader::new(file))?;
            ingest::parse_rtp_timestamps(&records, camera_id)?
        }
        TimestampFormat::Csv => {
            let file = fs::File::open(&path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            ingest::load_timestamp_csv(BufReader::new(file), camera_id)?
        }
    };
    Ok(track)
}

// ----------------------------------------------------------------- detect

fn cmd_detect(
    config_path: &Path,
    out_dir: &Path,
    threshold_override: Option<&str>,
    workers: usize,
) -> Result<()> {
    let (config, base) = load_config(config_path)?;
    fs::create_dir_all(out_dir)?;

    let threshold = match threshold_override {
        Some("auto") => None,
        Some(v) => Some(
            v.parse::<f64>()
                .map_err(|_| anyhow!("--threshold must be a number or `auto`"))?,
        ),
        None => match config.threshold {
            ThresholdConfig::Value(v) => Some(v),
            ThresholdConfig::Auto(_) => None,
        },
    };

    let jobs: Vec<_> = config
        .cameras
        .iter()
        .filter(|c| c.profiles.is_some() || c.frames.is_some())
        .collect();
    let results: Vec<Result<String>> = run_parallel(&jobs, workers.max(1), |cam| {
        let profiles = load_profiles(cam, &base)?;
        let events = detect_camera_events(&cam.camera_id, &profiles, threshold, config.boundary_margin)?;
        let out = out_dir.join(format!("{}_events.csv", cam.camera_id));
        let mut file = fs::File::create(&out)?;
        detect::write_events_csv(&events, &mut file)?;
        let leading = events
            .iter()
            .filter(|e| e.polarity == Polarity::Leading)
            .count();
        Ok(format!(
            "{}: {} leading events ({} total) -> {}",
            cam.camera_id,
            leading,
            events.len(),
            out.display()
        ))
    });
    for r in results {
        println!("{}", r?);
    }
    Ok(())
}

/// Run `f` over `items` on up to `workers` scoped threads, preserving order.
fn run_parallel<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Vec<Result<R>> {
    let mut results: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.expect("slot filled")).collect()
}

fn load_profiles(cam: &flashsync::config::CameraConfig, base: &Path) -> Result<Vec<RowProfile>> {
    if let Some(path) = &cam.profiles {
        let path = resolve(base, path);
        let file = fs::File::open(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        return Ok(detect::load_profile_csv(BufReader::new(file))?);
    }
    if let Some(frames) = &cam.frames {
        return load_raw_frames(frames, base);
    }
    bail!("camera {} has neither profiles nor frames configured", cam.camera_id);
}

fn load_raw_frames(source: &RawFramesSource, base: &Path) -> Result<Vec<RowProfile>> {
    let path = resolve(base, &source.path);
    let data = fs::read(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let frame_bytes = source.width * source.height;
    if frame_bytes == 0 || data.len() % frame_bytes != 0 {
        bail!(
            "{}: size {} is not a multiple of {}x{} frames",
            path.display(),
            data.len(),
            source.width,
            source.height
        );
    }
    data.chunks_exact(frame_bytes)
        .enumerate()
        .map(|(i, chunk)| {
            detect::median_row_profile(i, chunk, source.height, source.width).map_err(Into::into)
        })
        .collect()
}

fn detect_camera_events(
    camera_id: &str,
    profiles: &[RowProfile],
    threshold: Option<f64>,
    boundary_margin: f64,
) -> Result<Vec<EventObservation>> {
    let diffs: Vec<DiffProfile> = profiles
        .windows(2)
        .map(|w| detect::diff_profiles(&w[1], &w[0]))
        .collect::<Result<_, _>>()?;
    let threshold = match threshold {
        Some(v) => v,
        None => detect::auto_threshold(&diffs)
            .ok_or_else(|| anyhow!("cannot auto-threshold an empty profile sequence"))?,
    };
    let events = detect::detect_events(camera_id, &diffs, threshold);
    let rows_active = profiles.first().map(|p| p.values.len()).unwrap_or(0) as u32;
    Ok(detect::reject_boundary_events(events, rows_active, boundary_margin))
}

// ------------------------------------------------------------------ solve

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    config_path: &Path,
    events_dir: &Path,
    out: &Path,
    matched_out: Option<&Path>,
    reference_override: Option<&str>,
    tolerance_override: Option<f64>,
    manual_offsets: &[String],
    pairwise: bool,
) -> Result<()> {
    let (config, _) = load_config(config_path)?;
    let reference_id = reference_override.unwrap_or(&config.reference).to_string();
    if config.camera(&reference_id).is_none() {
        bail!("reference camera {reference_id} not in config");
    }

    let manual: Vec<(String, f64)> = manual_offsets
        .iter()
        .map(|s| {
            let (cam, off) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("--manual-offset expects camera=ms, got {s}"))?;
            Ok((cam.to_string(), off.parse::<f64>()?))
        })
        .collect::<Result<_>>()?;

    let reference_events = load_camera_events(events_dir, &reference_id)?;
    let ref_cfg = config.camera(&reference_id).unwrap();
    let ref_frame_duration = ref_cfg
        .fps
        .map(|fps| 1000.0 / fps)
        .or_else(|| frame_duration_from_events(&reference_events))
        .ok_or_else(|| anyhow!("cannot determine reference frame duration; set fps in config"))?;
    let ref_t_row = nominal_t_row(ref_cfg, &reference_events, ref_frame_duration);

    let mut sets = Vec::new();
    for cam in config.cameras.iter().filter(|c| c.camera_id != reference_id) {
        let events = load_camera_events(events_dir, &cam.camera_id)?;
        let cam_frame_duration = cam
            .fps
            .map(|fps| 1000.0 / fps)
            .or_else(|| frame_duration_from_events(&events))
            .unwrap_or(ref_frame_duration);
        let timing = syncsolve::MatchTiming {
            t_row_camera_ms: nominal_t_row(cam, &events, cam_frame_duration),
            t_row_reference_ms: ref_t_row,
        };
        let offset = match manual.iter().find(|(id, _)| *id == cam.camera_id) {
            Some(&(_, off)) => off,
            None => {
                syncsolve::estimate_coarse_offset(
                    &events.events,
                    &reference_events.events,
                    ref_frame_duration,
                    timing,
                )?
                .offset_ms
            }
        };
        let tolerance = tolerance_override
            .or(config.tolerance_ms)
            .unwrap_or(ref_frame_duration / 2.0);
        let matched =
            syncsolve::match_events(&events, &reference_events, offset, tolerance, timing)?;
        println!(
            "{}: offset {:.1} ms, {} pairs ({} + {} unmatched)",
            cam.camera_id,
            offset,
            matched.pairs.len(),
            matched.unmatched_camera,
            matched.unmatched_reference
        );
        sets.push(matched);
    }
    if sets.is_empty() {
        bail!("no non-reference cameras to solve");
    }

    let solution = if pairwise {
        let mut cameras = Vec::new();
        let mut reference = None;
        for set in &sets {
            let sol = syncsolve::solve_pairwise(set, syncsolve::SolveMode::RowPeriodsFree)?;
            cameras.extend(sol.cameras);
            reference = Some(sol.reference);
        }
        SyncSolution {
            reference: reference.expect("at least one set"),
            cameras,
        }
    } else {
        syncsolve::solve_joint(&sets)?
    };

    for cam in &solution.cameras {
        println!(
            "{}: alpha-1 {:+.3e}, beta {:.3} ms, t_row {:.5} ms, std {:.3} ms",
            cam.camera_id,
            cam.params.alpha - 1.0,
            cam.params.beta_ms,
            cam.params.t_row_ms,
            cam.std_error_ms
        );
    }
    println!(
        "reference {}: t_row {:.5} ms",
        solution.reference.camera_id, solution.reference.t_row_ms
    );

    fs::write(out, solution.to_json())?;
    println!("solution -> {}", out.display());
    if let Some(matched_path) = matched_out {
        let report = syncsolve::residual_report(&solution, &sets);
        let mut file = fs::File::create(matched_path)?;
        syncsolve::write_matched_csv(&report, &mut file)?;
        println!("matched events -> {}", matched_path.display());
    }
    Ok(())
}

/// Leading events of one camera with frame timestamps attached, from
/// `<dir>/<camera>_events.csv` and `<dir>/<camera>_timestamps.csv`.
fn load_camera_events(dir: &Path, camera_id: &str) -> Result<CameraEvents> {
    let events_path = dir.join(format!("{camera_id}_events.csv"));
    let timestamps_path = dir.join(format!("{camera_id}_timestamps.csv"));
    let events_file = fs::File::open(&events_path)
        .with_context(|| format!("cannot read {}", events_path.display()))?;
    let csv_events = detect::load_events_csv(BufReader::new(events_file))?;
    let ts_file = fs::File::open(&timestamps_path)
        .with_context(|| format!("cannot read {}", timestamps_path.display()))?;
    let track = ingest::load_timestamp_csv(BufReader::new(ts_file), camera_id)?;
    let ms = track.timestamps_ms();
    let events = csv_events
        .iter()
        .filter(|e| e.polarity == Polarity::Leading)
        .map(|e: &CsvEvent| {
            let time_ms = *ms.get(e.frame).ok_or_else(|| {
                anyhow!(
                    "{camera_id}: event frame {} beyond {} timestamps",
                    e.frame,
                    ms.len()
                )
            })?;
            Ok(TimedEvent {
                frame: e.frame,
                row: e.row,
                time_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CameraEvents {
        camera_id: camera_id.to_string(),
        events,
    })
}

/// Nominal row period used to place events at sub-frame times for matching.
/// With sensor geometry available it is exact up to drift; otherwise assume
/// the readout spans the full frame over the rows seen in the events, which
/// is accurate enough for half-frame matching tolerances.
fn nominal_t_row(
    cfg: &flashsync::config::CameraConfig,
    events: &CameraEvents,
    frame_duration_ms: f64,
) -> f64 {
    if let Some(g) = &cfg.geometry {
        return frame_duration_ms / g.total_rows() as f64;
    }
    let max_row = events.events.iter().map(|e| e.row).fold(0.0_f64, f64::max);
    frame_duration_ms / (max_row + 1.0).max(1.0)
}

fn frame_duration_from_events(events: &CameraEvents) -> Option<f64> {
    // crude fallback: smallest positive gap between event frame timestamps
    // divided by the frame index gap
    let mut best: Option<f64> = None;
    for w in events.events.windows(2) {
        let frames = w[1].frame.saturating_sub(w[0].frame);
        if frames > 0 {
            let d = (w[1].time_ms - w[0].time_ms) / frames as f64;
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
    }
    best
}

// ------------------------------------------------------------------ apply

fn cmd_apply(
    solution_path: &Path,
    camera: &str,
    row: u32,
    timestamp_ms: Option<f64>,
    frame: Option<usize>,
    timestamps: Option<&Path>,
) -> Result<()> {
    let text = fs::read_to_string(solution_path)
        .with_context(|| format!("cannot read {}", solution_path.display()))?;
    let solution = SyncSolution::from_json(&text)?;

    let t_f = match (timestamp_ms, frame, timestamps) {
        (Some(t), _, _) => t,
        (None, Some(f), Some(ts_path)) => {
            let file = fs::File::open(ts_path)
                .with_context(|| format!("cannot read {}", ts_path.display()))?;
            let track = ingest::load_timestamp_csv(BufReader::new(file), camera)?;
            *track
                .timestamps_ms()
                .get(f)
                .ok_or_else(|| anyhow!("frame {f} beyond {} timestamps", track.len()))?
        }
        _ => bail!("provide --timestamp-ms, or --frame together with --timestamps"),
    };

    let t_ref = if camera == solution.reference.camera_id {
        t_f + row as f64 * solution.reference.t_row_ms
    } else {
        let cam = solution
            .camera(camera)
            .ok_or_else(|| anyhow!("camera {camera} not in solution"))?;
        apply_sync(&cam.params, t_f, row)
    };
    println!("{t_ref:.6}");
    Ok(())
}

// --------------------------------------------------------------- simulate

#[derive(Debug, Serialize, Deserialize)]
struct FlashScenario {
    /// Explicit flash times in reference time; overrides `count`.
    #[serde(default)]
    times_ms: Option<Vec<f64>>,
    #[serde(default = "default_flash_count")]
    count: usize,
    #[serde(default = "default_amplitude")]
    amplitude: f64,
    #[serde(default = "default_decay")]
    decay_ms: f64,
    #[serde(default = "default_flash_duration")]
    duration_ms: f64,
    /// Keep flashes this far from the capture interval ends.
    #[serde(default = "default_flash_margin")]
    margin_ms: f64,
}

fn default_flash_count() -> usize {
    15
}
fn default_amplitude() -> f64 {
    120.0
}
fn default_decay() -> f64 {
    0.3
}
fn default_flash_duration() -> f64 {
    1.0
}
fn default_flash_margin() -> f64 {
    50_000.0
}

#[derive(Debug, Serialize, Deserialize)]
struct Scenario {
    reference: String,
    duration_ms: f64,
    cameras: Vec<SimulatedCameraSpec>,
    flashes: FlashScenario,
    /// Also emit full per-frame profile CSVs (large).
    #[serde(default)]
    emit_profiles: bool,
    /// Exposure time used for profile synthesis, ms.
    #[serde(default = "default_exposure")]
    exposure_ms: f64,
    #[serde(default = "default_background")]
    background: f64,
}

fn default_exposure() -> f64 {
    0.5
}
fn default_background() -> f64 {
    100.0
}

impl Scenario {
    /// Four 25 fps cameras over five minutes with Table-scale drift and
    /// shift magnitudes.
    fn default_scenario() -> Self {
        let geometry = |before, active, after| {
            flashsync::timebase::SensorGeometry::new(before, active, after).expect("valid geometry")
        };
        let cam = |id: &str, geo, alpha: f64, beta: f64| SimulatedCameraSpec {
            camera_id: id.to_string(),
            fps: 25.0,
            geometry: geo,
            true_alpha: alpha,
            true_beta_ms: beta,
            drop_probability: 0.0,
            row_noise_sigma: 0.0,
            profile_noise_sigma: 0.0,
        };
        Scenario {
            reference: "cam1".to_string(),
            duration_ms: 300_000.0,
            cameras: vec![
                cam("cam1", geometry(220, 2160, 220), 1.0, 0.0),
                cam("cam2", geometry(220, 2160, 220), 1.0 + 8.39e-6, 6066.7),
                cam("cam3", geometry(40, 720, 40), 1.0 - 3.12e-6, -37_500.2),
                cam("cam4", geometry(40, 720, 40), 1.0 - 8.35e-6, -23_858.7),
            ],
            flashes: FlashScenario {
                times_ms: None,
                count: 15,
                amplitude: 120.0,
                decay_ms: 0.3,
                duration_ms: 1.0,
                margin_ms: 50_000.0,
            },
            emit_profiles: false,
            exposure_ms: 0.5,
            background: 100.0,
        }
    }
}

/// Ground-truth JSON written next to the simulated dataset.
#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthFile {
    reference: String,
    seed: u64,
    flash_times_ms: Vec<f64>,
    cameras: Vec<GroundTruthCamera>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthCamera {
    camera_id: String,
    alpha: f64,
    beta_ms: f64,
    t_row_ms: f64,
    dropped_frames: Vec<usize>,
    events: Vec<simulate::GroundTruthEvent>,
}

fn cmd_simulate(scenario_path: Option<&Path>, seed: u64, out_dir: &Path) -> Result<()> {
    let scenario: Scenario = match scenario_path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).context("invalid scenario JSON")?
        }
        None => Scenario::default_scenario(),
    };

    let schedule = match &scenario.flashes.times_ms {
        Some(times) => FlashSchedule {
            times_ms: times.clone(),
            duration_ms: scenario.flashes.duration_ms,
            amplitude: scenario.flashes.amplitude,
            decay_ms: scenario.flashes.decay_ms,
        },
        None => {
            let mut s = FlashSchedule::random(
                scenario.flashes.count,
                scenario.duration_ms,
                scenario.flashes.margin_ms,
                scenario.flashes.amplitude,
                seed,
            );
            s.duration_ms = scenario.flashes.duration_ms;
            s.decay_ms = scenario.flashes.decay_ms;
            s
        }
    };

    let sim = simulate::simulate_capture(
        &scenario.cameras,
        &scenario.reference,
        &schedule,
        scenario.duration_ms,
        seed,
    )?;

    fs::create_dir_all(out_dir)?;
    let mut truth = GroundTruthFile {
        reference: sim.reference_id.clone(),
        seed,
        flash_times_ms: schedule.times_ms.clone(),
        cameras: Vec::new(),
    };
    for cam in &sim.cameras {
        let id = &cam.spec.camera_id;
        let ts_path = out_dir.join(format!("{id}_timestamps.csv"));
        ingest::write_timestamp_csv(&cam.track, fs::File::create(&ts_path)?)?;

        // Events CSV mirrors what detection would produce: leading edges
        // inside the active area, strongest per frame.
        let observations: Vec<EventObservation> = cam
            .events
            .iter()
            .filter(|e| !e.boundary)
            .map(|e| EventObservation {
                camera_id: id.clone(),
                frame: e.frame,
                row: e.row,
                magnitude: schedule.amplitude,
                polarity: Polarity::Leading,
            })
            .collect();
        let ev_path = out_dir.join(format!("{id}_events.csv"));
        detect::write_events_csv(&observations, fs::File::create(&ev_path)?)?;

        if scenario.emit_profiles {
            let profiles =
                simulate::simulate_profiles(cam, &schedule, scenario.exposure_ms, scenario.background, seed);
            let prof_path = out_dir.join(format!("{id}_profiles.csv"));
            detect::write_profile_csv(&profiles, std::io::BufWriter::new(fs::File::create(&prof_path)?))?;
        }

        truth.cameras.push(GroundTruthCamera {
            camera_id: id.clone(),
            alpha: cam.truth.alpha,
            beta_ms: cam.truth.beta_ms,
            t_row_ms: cam.truth.t_row_ms,
            dropped_frames: cam.dropped_frames.clone(),
            events: cam.events.clone(),
        });
        println!(
            "{id}: {} frames, {} events ({} boundary), {} dropped",
            cam.track.len(),
            cam.events.len(),
            cam.events.iter().filter(|e| e.boundary).count(),
            cam.dropped_frames.len()
        );
    }
    let truth_path = out_dir.join("ground_truth.json");
    fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)?;
    println!("ground truth -> {}", truth_path.display());
    Ok(())
}

// ------------------------------------------------------------------ report

fn cmd_report(events_dir: &Path, config_path: &Path) -> Result<()> {
    let (config, _) = load_config(config_path)?;
    const WIDTH: usize = 72;
    let mut lines = Vec::new();
    let mut span: Option<(f64, f64)> = None;
    let mut per_camera: Vec<(String, Vec<f64>)> = Vec::new();
    for cam in &config.cameras {
        let Ok(events) = load_camera_events(events_dir, &cam.camera_id) else {
            continue;
        };
        let times: Vec<f64> = events.events.iter().map(|e| e.time_ms).collect();
        if let (Some(&lo), Some(&hi)) = (
            times.iter().min_by(|a, b| a.total_cmp(b)),
            times.iter().max_by(|a, b| a.total_cmp(b)),
        ) {
            span = Some(match span {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
        per_camera.push((cam.camera_id.clone(), times));
    }
    let Some((lo, hi)) = span else {
        bail!("no events found in {}", events_dir.display());
    };
    let scale = (hi - lo).max(1.0);
    for (id, times) in &per_camera {
        let mut strip = vec![b'.'; WIDTH];
        for &t in times {
            let pos = (((t - lo) / scale) * (WIDTH - 1) as f64).round() as usize;
            strip[pos.min(WIDTH - 1)] = b'|';
        }
        lines.push(format!(
            "{:>10} [{}] {} events",
            id,
            String::from_utf8_lossy(&strip),
            times.len()
        ));
    }
    println!(
        "event timelines, camera-local time {:.0}..{:.0} ms",
        lo, hi
    );
    for l in lines {
        println!("{l}");
    }
    Ok(())
}
