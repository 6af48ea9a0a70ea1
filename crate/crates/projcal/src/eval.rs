//! Session evaluation: frame-budget arithmetic, reprojection summaries,
//! projector alignment statistics, a blended-image sharpness sweep, and an
//! ambient-light robustness probe.
//!
//! Everything here consumes pipeline outputs (calibration results, placement
//! homographies) together with the simulator's ground truth, and produces the
//! tables and curves the run report embeds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::CalibrationResult;
use crate::codec::{bits_for, DecodeParams, PatternSet};
use crate::decode::{extract_correspondences, DecodeError};
use crate::geom::{GeomError, Homography2D, Vec2};
use crate::sim::{
    board_to_projector, capture_stack, ground_truth_correspondence, RigConfig, SimError,
};

/// Board-plane rendering density for the sharpness sweep, in pixels per
/// millimeter. Four samples per millimeter keeps the highest swept frequency
/// (just under 0.5 cycles/mm) a factor of four below the raster Nyquist rate.
pub const MTF_PX_PER_MM: f64 = 4.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("alignment grid needs at least 2 samples per axis, got {x}x{y}")]
    GridTooSmall { x: usize, y: usize },
    #[error("frequency sweep start {start}, end {end}, step {step} selects no frequencies")]
    EmptySweep { start: f64, end: f64, step: f64 },
    #[error("projector footprints share no board area at this pose")]
    NoOverlap,
    #[error("ambient level {level} outside [0, {limit})")]
    AmbientOutOfRange { level: f64, limit: f64 },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// How a multi-projector session schedules its coded frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternMethod {
    /// Each projector takes its turn with a full coordinate code set.
    Sequential,
    /// All projectors run at once; ID bit frames tell their codes apart.
    Simultaneous,
}

/// Total frames a session needs. Sequential projection pays the coordinate
/// code (⌈log₂ w⌉ + ⌈log₂ h⌉ + the line frames) once per projector;
/// simultaneous projection pays it once, plus ⌈log₂ m⌉ ID bit frames shared
/// by everyone. Parameters must be positive; `line_frames` may be zero.
pub fn pattern_count(
    method: PatternMethod,
    projectors: u32,
    width: u32,
    height: u32,
    line_frames: u32,
) -> u64 {
    let coordinate_code = u64::from(bits_for(width) + bits_for(height) + line_frames);
    match method {
        PatternMethod::Sequential => u64::from(projectors) * coordinate_code,
        PatternMethod::Simultaneous => u64::from(bits_for(projectors)) + coordinate_code,
    }
}

/// One frame-budget table row; `total_frames` always equals
/// [`pattern_count`] of the other fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternBudget {
    pub method: PatternMethod,
    pub projectors: u32,
    pub width: u32,
    pub height: u32,
    pub line_frames: u32,
    pub total_frames: u64,
}

impl PatternBudget {
    pub fn new(
        method: PatternMethod,
        projectors: u32,
        width: u32,
        height: u32,
        line_frames: u32,
    ) -> Self {
        PatternBudget {
            method,
            projectors,
            width,
            height,
            line_frames,
            total_frames: pattern_count(method, projectors, width, height, line_frames),
        }
    }
}

/// Reprojection summary for one calibrated projector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionRow {
    pub projector: usize,
    pub rms_px: f64,
    pub max_px: f64,
    /// Pose indices as stored in the result, aligned with `per_pose_rms_px`.
    pub pose_indices: Vec<usize>,
    pub per_pose_rms_px: Vec<f64>,
}

/// Per-projector reprojection table, sorted by projector index. Statistics
/// are recomputed from the per-point residuals rather than copied, so a row
/// stays consistent with its own residual breakdown.
pub fn reprojection_report(results: &[(usize, &CalibrationResult)]) -> Vec<ReprojectionRow> {
    let mut rows: Vec<ReprojectionRow> = results
        .iter()
        .map(|&(projector, result)| {
            let residuals = &result.per_point_residuals_px;
            let rms_px =
                (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len().max(1) as f64)
                    .sqrt();
            let max_px = residuals.iter().copied().fold(0.0, f64::max);
            let mut per_pose_rms_px = Vec::with_capacity(result.points_per_pose.len());
            let mut offset = 0;
            for &n in &result.points_per_pose {
                let chunk = &residuals[offset..offset + n];
                per_pose_rms_px
                    .push((chunk.iter().map(|r| r * r).sum::<f64>() / n.max(1) as f64).sqrt());
                offset += n;
            }
            ReprojectionRow {
                projector,
                rms_px,
                max_px,
                pose_indices: result.pose_indices.clone(),
                per_pose_rms_px,
            }
        })
        .collect();
    rows.sort_by_key(|row| row.projector);
    rows
}

/// Board-plane gap between two placements of the same content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub mean_mm: f64,
    pub max_mm: f64,
}

/// Measures how far apart `h1` and `h2` (projector pixels → board
/// millimeters) place the same content point, sampled on a `grid.0` × `grid.1`
/// lattice spanning a `panel.0` × `panel.1` pixel content frame. Content is
/// canonical in the first projector's pixel grid, so calling this with one
/// projector's estimated and true maps measures placement error, and calling
/// it with two projectors' maps measures their overlap disparity.
pub fn alignment_error(
    h1: &Homography2D,
    h2: &Homography2D,
    panel: (u32, u32),
    grid: (usize, usize),
) -> Result<AlignmentReport, EvalError> {
    if grid.0 < 2 || grid.1 < 2 {
        return Err(EvalError::GridTooSmall { x: grid.0, y: grid.1 });
    }
    let mut sum = 0.0;
    let mut max_mm = 0.0f64;
    for j in 0..grid.1 {
        for i in 0..grid.0 {
            let q = Vec2::new(
                f64::from(panel.0.saturating_sub(1)) * i as f64 / (grid.0 - 1) as f64,
                f64::from(panel.1.saturating_sub(1)) * j as f64 / (grid.1 - 1) as f64,
            );
            let gap = (h1.apply(q)? - h2.apply(q)?).norm();
            sum += gap;
            max_mm = max_mm.max(gap);
        }
    }
    Ok(AlignmentReport { mean_mm: sum / (grid.0 * grid.1) as f64, max_mm })
}

/// Michelson contrast of a blended sine projection per spatial frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfCurve {
    /// Cycles per board millimeter, strictly increasing.
    pub frequencies: Vec<f64>,
    /// Contrast in [0, 1], aligned with `frequencies`.
    pub contrast: Vec<f64>,
}

/// Blended two-projector curve and the single-projector reference measured
/// over the same overlap region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfSweep {
    pub combined: MtfCurve,
    pub reference: MtfCurve,
}

/// Sweeps a horizontal sine pattern over `[freq_start, freq_end]` in steps of
/// `freq_step` cycles/mm and reports Michelson contrast (max − min)/(max + min)
/// of the two projectors' superposition over their shared board footprint,
/// next to the first projector's solo curve.
///
/// `h1` and `h2` are the placement maps under test (projector pixels → board
/// millimeters) for `projectors.0` and `projectors.1`; the rig supplies the
/// true geometry at `pose`. Each projector pre-warps the board-anchored sine
/// through its placement map, so exact maps superpose in phase while placement
/// errors show up as phase shifts that cancel contrast.
pub fn mtf_sweep(
    h1: &Homography2D,
    h2: &Homography2D,
    rig: &RigConfig,
    pose: usize,
    projectors: (usize, usize),
    freq_start: f64,
    freq_end: f64,
    freq_step: f64,
) -> Result<MtfSweep, EvalError> {
    if !(freq_start > 0.0 && freq_step > 0.0 && freq_end >= freq_start) {
        return Err(EvalError::EmptySweep {
            start: freq_start,
            end: freq_end,
            step: freq_step,
        });
    }
    let to_panel_a = board_to_projector(rig, pose, projectors.0)?;
    let to_panel_b = board_to_projector(rig, pose, projectors.1)?;
    let (panel_a, panel_b) = (&rig.projectors[projectors.0], &rig.projectors[projectors.1]);

    // Board samples covered by both panels, reduced to the content coordinate
    // each projector paints there: the true maps locate the panel pixel, the
    // placement maps under test say where that pixel's content belongs. The
    // pair is frequency independent, so it is computed once.
    let nx = (rig.board_width * MTF_PX_PER_MM).round().max(1.0) as u32;
    let ny = (rig.board_height * MTF_PX_PER_MM).round().max(1.0) as u32;
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            let board = Vec2::new(
                (f64::from(x) + 0.5) / MTF_PX_PER_MM,
                (f64::from(y) + 0.5) / MTF_PX_PER_MM,
            );
            let (Ok(qa), Ok(qb)) = (to_panel_a.apply(board), to_panel_b.apply(board)) else {
                continue;
            };
            if !on_panel(qa, panel_a.width, panel_a.height)
                || !on_panel(qb, panel_b.width, panel_b.height)
            {
                continue;
            }
            samples.push((h1.apply(qa)?.x, h2.apply(qb)?.x));
        }
    }
    if samples.is_empty() {
        return Err(EvalError::NoOverlap);
    }

    let steps = ((freq_end - freq_start) / freq_step + 1e-9).floor() as usize;
    let frequencies: Vec<f64> =
        (0..=steps).map(|k| freq_start + k as f64 * freq_step).collect();
    let mut combined = Vec::with_capacity(frequencies.len());
    let mut reference = Vec::with_capacity(frequencies.len());
    for &f in &frequencies {
        let omega = 2.0 * std::f64::consts::PI * f;
        let (mut lo_sum, mut hi_sum) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut lo_one, mut hi_one) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(ca, cb) in &samples {
            let va = 0.5 + 0.5 * (omega * ca).sin();
            let vb = 0.5 + 0.5 * (omega * cb).sin();
            lo_sum = lo_sum.min(va + vb);
            hi_sum = hi_sum.max(va + vb);
            lo_one = lo_one.min(va);
            hi_one = hi_one.max(va);
        }
        combined.push(michelson(lo_sum, hi_sum));
        reference.push(michelson(lo_one, hi_one));
    }
    Ok(MtfSweep {
        combined: MtfCurve { frequencies: frequencies.clone(), contrast: combined },
        reference: MtfCurve { frequencies, contrast: reference },
    })
}

fn on_panel(q: Vec2, width: u32, height: u32) -> bool {
    q.x >= 0.0 && q.y >= 0.0 && q.x <= f64::from(width - 1) && q.y <= f64::from(height - 1)
}

fn michelson(lo: f64, hi: f64) -> f64 {
    if hi + lo <= 0.0 {
        0.0
    } else {
        (hi - lo) / (hi + lo)
    }
}

/// One ambient level's decode outcome over every pose and camera of the rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbientProbeRow {
    pub ambient: f64,
    /// Recovered fraction of the (pose, camera, projector) links the rig
    /// geometry makes visible.
    pub decode_success_rate: f64,
    /// Mean |decoded − true| projector pixel distance over the recovered
    /// links; absent when nothing decoded.
    pub mean_projector_pixel_error_px: Option<f64>,
}

/// Reruns capture and decode with the rig's ambient light overridden to each
/// listed level. Levels must stay inside [0, min(saturation cap, 1)); decode
/// failures count against the success rate instead of aborting the probe.
pub fn ambient_probe(
    rig: &RigConfig,
    patterns: &PatternSet,
    params: &DecodeParams,
    ambient_levels: &[f64],
) -> Result<Vec<AmbientProbeRow>, EvalError> {
    let limit = rig.saturation_cap.min(1.0);
    let mut rows = Vec::with_capacity(ambient_levels.len());
    for &ambient in ambient_levels {
        if !(0.0..limit).contains(&ambient) {
            return Err(EvalError::AmbientOutOfRange { level: ambient, limit });
        }
        let mut probe = rig.clone();
        probe.ambient_level = ambient;
        let mut expected = 0usize;
        let mut matched = 0usize;
        let mut error_sum = 0.0;
        for pose in 0..probe.num_poses() {
            for camera in 0..probe.cameras.len() {
                let stack = capture_stack(&probe, patterns, pose, camera)?;
                let found = extract_correspondences(&stack, patterns, params)?;
                for projector in 0..probe.projectors.len() {
                    let truth = match ground_truth_correspondence(&probe, pose, projector, camera)
                    {
                        Ok(t) => t,
                        Err(SimError::NotVisible { .. }) => continue,
                        Err(e) => return Err(e.into()),
                    };
                    expected += 1;
                    if let Some(c) = found.iter().find(|c| c.projector == projector) {
                        matched += 1;
                        error_sum += (c.projector_pixel - truth.projector_pixel).norm();
                    }
                }
            }
        }
        rows.push(AmbientProbeRow {
            ambient,
            decode_success_rate: if expected == 0 {
                1.0
            } else {
                matched as f64 / expected as f64
            },
            mean_projector_pixel_error_px: (matched > 0).then(|| error_sum / matched as f64),
        });
    }
    Ok(rows)
}
