//! Cross-camera event matching and least-squares estimation of the affine
//! synchronization parameters.
//!
//! Every matched event pair contributes one equation
//! `alpha^c t^c + beta^c + r^c T_row^c = t^ref + r^ref T_row^ref`.
//! The overdetermined system is solved by QR on the design matrix after
//! centering timestamps per camera; raw timestamps around 1e5 ms against
//! drift terms around 1e-5 would otherwise make the system ill-conditioned.
//! Centering is exact and the shift is folded back into beta afterwards.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timebase::SyncParams;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no coarse offset with at least 2 agreeing event pairs; pass a manual offset")]
    AmbiguousOffset,
    #[error("no events matched; review detection threshold or coarse offset")]
    NoMatches,
    #[error("{equations} equations for {unknowns} unknowns; need more matched events")]
    Underdetermined { equations: usize, unknowns: usize },
    #[error("system is rank deficient: {parameter} is unobservable from the matched events")]
    Singular { parameter: String },
    #[error("matched sets reference different cameras: {expected} vs {found}")]
    InconsistentReference { expected: String, found: String },
    #[error("event lists must be non-empty")]
    EmptyEvents,
}

/// A synchronization event with its frame acquisition timestamp attached.
/// The row is fractional so that sub-row ground truth can flow through the
/// solver unquantized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedEvent {
    pub frame: usize,
    pub row: f64,
    /// Frame acquisition timestamp in milliseconds (camera-local clock).
    pub time_ms: f64,
}

/// All usable events of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraEvents {
    pub camera_id: String,
    pub events: Vec<TimedEvent>,
}

/// One cross-camera event correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub frame_c: usize,
    pub row_c: f64,
    pub t_c_ms: f64,
    pub frame_ref: usize,
    pub row_ref: f64,
    pub t_ref_ms: f64,
}

/// Event correspondences between one camera and the reference camera.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedEventSet {
    pub camera_id: String,
    pub reference_id: String,
    pub pairs: Vec<MatchedPair>,
    pub unmatched_camera: usize,
    pub unmatched_reference: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseOffset {
    /// Shift to add to camera-local event times to land on reference times.
    pub offset_ms: f64,
    pub inliers: usize,
}

/// Nominal per-camera row periods used to place events at sub-frame times
/// during offset search and matching. Frame timestamps alone quantize event
/// times to whole frames, which both splits true correspondences across
/// adjacent frame counts and makes a zero-row-period fit look exact; adding
/// `row * t_row_nominal` restores the sub-frame ordering. The values only
/// need to be roughly right -- the solver re-estimates the true periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchTiming {
    pub t_row_camera_ms: f64,
    pub t_row_reference_ms: f64,
}

/// Search all pairwise event-time differences for the shift that aligns the
/// most events to within half a frame duration. Ties go to the smallest
/// absolute offset.
pub fn estimate_coarse_offset(
    events_c: &[TimedEvent],
    events_ref: &[TimedEvent],
    nominal_frame_duration_ms: f64,
    timing: MatchTiming,
) -> Result<CoarseOffset, SolveError> {
    if events_c.is_empty() || events_ref.is_empty() {
        return Err(SolveError::EmptyEvents);
    }
    let tol = nominal_frame_duration_ms / 2.0;
    let mut tc: Vec<f64> = events_c
        .iter()
        .map(|e| e.time_ms + e.row * timing.t_row_camera_ms)
        .collect();
    let mut tr: Vec<f64> = events_ref
        .iter()
        .map(|e| e.time_ms + e.row * timing.t_row_reference_ms)
        .collect();
    tc.sort_by(|a, b| a.total_cmp(b));
    tr.sort_by(|a, b| a.total_cmp(b));

    let mut best: Option<CoarseOffset> = None;
    for &r in &tr {
        for &c in &tc {
            let offset = r - c;
            let inliers = count_aligned(&tc, &tr, offset, tol);
            let better = match best {
                None => true,
                Some(b) => {
                    inliers > b.inliers
                        || (inliers == b.inliers && offset.abs() < b.offset_ms.abs())
                }
            };
            if better {
                best = Some(CoarseOffset {
                    offset_ms: offset,
                    inliers,
                });
            }
        }
    }
    let best = best.expect("candidate set is non-empty");
    if best.inliers < 2 {
        return Err(SolveError::AmbiguousOffset);
    }
    Ok(best)
}

/// Greedy in-order count of camera/reference event pairs agreeing within
/// `tol` after shifting camera times by `offset`. Inputs must be sorted.
fn count_aligned(tc: &[f64], tr: &[f64], offset: f64, tol: f64) -> usize {
    let mut count = 0;
    let (mut i, mut j) = (0, 0);
    while i < tc.len() && j < tr.len() {
        let shifted = tc[i] + offset;
        if (shifted - tr[j]).abs() <= tol {
            count += 1;
            i += 1;
            j += 1;
        } else if shifted < tr[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    count
}

/// Greedy nearest-neighbor matching on coarsely shifted sub-frame event
/// times. Each event is used at most once; closest distances win.
pub fn match_events(
    camera: &CameraEvents,
    reference: &CameraEvents,
    coarse_offset_ms: f64,
    tolerance_ms: f64,
    timing: MatchTiming,
) -> Result<MatchedEventSet, SolveError> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, ec) in camera.events.iter().enumerate() {
        for (j, er) in reference.events.iter().enumerate() {
            let dist = (ec.time_ms + ec.row * timing.t_row_camera_ms + coarse_offset_ms
                - er.time_ms
                - er.row * timing.t_row_reference_ms)
                .abs();
            if dist <= tolerance_ms {
                candidates.push((dist, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut used_c = vec![false; camera.events.len()];
    let mut used_r = vec![false; reference.events.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if used_c[i] || used_r[j] {
            continue;
        }
        used_c[i] = true;
        used_r[j] = true;
        let ec = camera.events[i];
        let er = reference.events[j];
        pairs.push(MatchedPair {
            frame_c: ec.frame,
            row_c: ec.row,
            t_c_ms: ec.time_ms,
            frame_ref: er.frame,
            row_ref: er.row,
            t_ref_ms: er.time_ms,
        });
    }
    if pairs.is_empty() {
        return Err(SolveError::NoMatches);
    }
    pairs.sort_by(|a, b| a.t_c_ms.total_cmp(&b.t_c_ms));
    Ok(MatchedEventSet {
        camera_id: camera.camera_id.clone(),
        reference_id: reference.camera_id.clone(),
        pairs,
        unmatched_camera: used_c.iter().filter(|u| !**u).count(),
        unmatched_reference: used_r.iter().filter(|u| !**u).count(),
    })
}

/// How the per-camera row periods enter the pairwise solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMode {
    /// Row periods taken from sensor datasheets; only drift and shift are
    /// estimated (2 unknowns).
    RowPeriodsKnown {
        t_row_camera_ms: f64,
        t_row_reference_ms: f64,
    },
    /// Both row periods estimated alongside drift and shift (4 unknowns).
    RowPeriodsFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub camera_id: String,
    pub t_row_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSolution {
    pub camera_id: String,
    #[serde(flatten)]
    pub params: SyncParams,
    pub std_error_ms: f64,
    pub residuals_ms: Vec<f64>,
}

impl CameraSolution {
    /// Drift expressed as sensor lines per second, `(1 - alpha) / t_row * 1e3`.
    /// A derived diagnostic, not a fitted quantity.
    pub fn drift_lines_per_s(&self) -> f64 {
        (1.0 - self.params.alpha) / self.params.t_row_ms * 1e3
    }
}

/// Estimated synchronization parameters for all cameras against one
/// reference, with per-event residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncSolution {
    pub reference: ReferenceSolution,
    pub cameras: Vec<CameraSolution>,
}

impl SyncSolution {
    pub fn camera(&self, camera_id: &str) -> Option<&CameraSolution> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// Solve one camera against the reference.
pub fn solve_pairwise(matched: &MatchedEventSet, mode: SolveMode) -> Result<SyncSolution, SolveError> {
    match mode {
        SolveMode::RowPeriodsFree => solve_joint(std::slice::from_ref(matched)),
        SolveMode::RowPeriodsKnown {
            t_row_camera_ms,
            t_row_reference_ms,
        } => solve_known_periods(matched, t_row_camera_ms, t_row_reference_ms),
    }
}

fn midrange(values: impl Iterator<Item = f64>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo + hi) / 2.0
}

fn solve_known_periods(
    matched: &MatchedEventSet,
    t_row_c: f64,
    t_row_ref: f64,
) -> Result<SyncSolution, SolveError> {
    let k = matched.pairs.len();
    if k < 2 {
        return Err(SolveError::Underdetermined {
            equations: k,
            unknowns: 2,
        });
    }
    let mc = midrange(matched.pairs.iter().map(|p| p.t_c_ms));
    let mr = midrange(matched.pairs.iter().map(|p| p.t_ref_ms));
    let mut a = DMatrix::zeros(k, 2);
    let mut b = DVector::zeros(k);
    for (i, p) in matched.pairs.iter().enumerate() {
        a[(i, 0)] = p.t_c_ms - mc;
        a[(i, 1)] = 1.0;
        b[i] = (p.t_ref_ms - mr) + p.row_ref * t_row_ref - p.row_c * t_row_c;
    }
    let names = [
        format!("alpha[{}]", matched.camera_id),
        format!("beta[{}]", matched.camera_id),
    ];
    let x = qr_least_squares(&a, &b, &names)?;
    let alpha = x[0];
    let beta = x[1] - alpha * mc + mr;
    let params = SyncParams {
        alpha,
        beta_ms: beta,
        t_row_ms: t_row_c,
    };
    let residuals = pair_residuals(&matched.pairs, &params, t_row_ref);
    let std_error = population_std(&residuals);
    Ok(SyncSolution {
        reference: ReferenceSolution {
            camera_id: matched.reference_id.clone(),
            t_row_ms: t_row_ref,
        },
        cameras: vec![CameraSolution {
            camera_id: matched.camera_id.clone(),
            params,
            std_error_ms: std_error,
            residuals_ms: residuals,
        }],
    })
}

/// Solve all cameras against a shared reference in a single least-squares
/// system. The reference row period is a single unknown shared by every
/// pair block, so it is estimated jointly from all cameras.
pub fn solve_joint(sets: &[MatchedEventSet]) -> Result<SyncSolution, SolveError> {
    if sets.is_empty() {
        return Err(SolveError::EmptyEvents);
    }
    let reference_id = &sets[0].reference_id;
    for s in sets {
        if &s.reference_id != reference_id {
            return Err(SolveError::InconsistentReference {
                expected: reference_id.clone(),
                found: s.reference_id.clone(),
            });
        }
    }
    let n = sets.len();
    let unknowns = 3 * n + 1;
    let equations: usize = sets.iter().map(|s| s.pairs.len()).sum();
    if equations < unknowns {
        return Err(SolveError::Underdetermined {
            equations,
            unknowns,
        });
    }

    // Center camera timestamps per camera and reference timestamps globally.
    let centers: Vec<f64> = sets
        .iter()
        .map(|s| midrange(s.pairs.iter().map(|p| p.t_c_ms)))
        .collect();
    let mr = midrange(sets.iter().flat_map(|s| s.pairs.iter().map(|p| p.t_ref_ms)));

    let mut a = DMatrix::zeros(equations, unknowns);
    let mut b = DVector::zeros(equations);
    let mut names = Vec::with_capacity(unknowns);
    let mut row = 0;
    for (i, s) in sets.iter().enumerate() {
        names.push(format!("alpha[{}]", s.camera_id));
        names.push(format!("beta[{}]", s.camera_id));
        names.push(format!("t_row[{}]", s.camera_id));
        for p in &s.pairs {
            a[(row, 3 * i)] = p.t_c_ms - centers[i];
            a[(row, 3 * i + 1)] = 1.0;
            a[(row, 3 * i + 2)] = p.row_c;
            a[(row, 3 * n)] = -p.row_ref;
            b[row] = p.t_ref_ms - mr;
            row += 1;
        }
    }
    names.push(format!("t_row[{reference_id}]"));

    let x = qr_least_squares(&a, &b, &names)?;
    let t_row_ref = x[3 * n];

    let mut cameras = Vec::with_capacity(n);
    for (i, s) in sets.iter().enumerate() {
        let alpha = x[3 * i];
        let beta = x[3 * i + 1] - alpha * centers[i] + mr;
        let params = SyncParams {
            alpha,
            beta_ms: beta,
            t_row_ms: x[3 * i + 2],
        };
        let residuals = pair_residuals(&s.pairs, &params, t_row_ref);
        let std_error = population_std(&residuals);
        cameras.push(CameraSolution {
            camera_id: s.camera_id.clone(),
            params,
            std_error_ms: std_error,
            residuals_ms: residuals,
        });
    }
    Ok(SyncSolution {
        reference: ReferenceSolution {
            camera_id: reference_id.clone(),
            t_row_ms: t_row_ref,
        },
        cameras,
    })
}

/// Thin-QR least squares with a rank check on the R diagonal. A deficient
/// column is reported by the name of its unknown.
fn qr_least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    names: &[String],
) -> Result<DVector<f64>, SolveError> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    let col_norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let qr = a.clone().qr();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)].abs() <= 1e-10 * col_norms[j].max(f64::MIN_POSITIVE) {
            return Err(SolveError::Singular {
                parameter: names[j].clone(),
            });
        }
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| SolveError::Singular {
            parameter: "triangular solve".to_string(),
        })
}

/// Signed residual `s^c(f, r) - t^ref(f_ref, r_ref)` for each pair.
fn pair_residuals(pairs: &[MatchedPair], params: &SyncParams, t_row_ref: f64) -> Vec<f64> {
    pairs
        .iter()
        .map(|p| {
            params.alpha * p.t_c_ms + params.beta_ms + p.row_c * params.t_row_ms
                - (p.t_ref_ms + p.row_ref * t_row_ref)
        })
        .collect()
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

/// One row of the per-event audit table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub camera_id: String,
    pub pair: MatchedPair,
    pub residual_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualReport {
    pub rows: Vec<ResidualRow>,
    /// (camera_id, standard deviation of residuals in ms)
    pub per_camera_std_ms: Vec<(String, f64)>,
}

/// Recompute residuals of `solution` on `sets` independently of the values
/// stored during solving.
pub fn residual_report(solution: &SyncSolution, sets: &[MatchedEventSet]) -> ResidualReport {
    let mut report = ResidualReport::default();
    for s in sets {
        let Some(cam) = solution.camera(&s.camera_id) else {
            continue;
        };
        let residuals = pair_residuals(&s.pairs, &cam.params, solution.reference.t_row_ms);
        for (p, &res) in s.pairs.iter().zip(&residuals) {
            report.rows.push(ResidualRow {
                camera_id: s.camera_id.clone(),
                pair: *p,
                residual_ms: res,
            });
        }
        report
            .per_camera_std_ms
            .push((s.camera_id.clone(), population_std(&residuals)));
    }
    report
}

/// Audit CSV: `camera,frame_c,row_c,t_c_ms,frame_ref,row_ref,t_ref_ms,residual_ms`.
pub fn write_matched_csv(report: &ResidualReport, mut writer: impl Write) -> std::io::Result<()> {
    writeln!(
        writer,
        "camera,frame_c,row_c,t_c_ms,frame_ref,row_ref,t_ref_ms,residual_ms"
    )?;
    for row in &report.rows {
        let p = &row.pair;
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{}",
            row.camera_id,
            p.frame_c,
            p.row_c,
            p.t_c_ms,
            p.frame_ref,
            p.row_ref,
            p.t_ref_ms,
            row.residual_ms
        )?;
    }
    Ok(())
}
