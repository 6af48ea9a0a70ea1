//! Run report types and their JSON/CSV writers.
//!
//! `report.json` holds only values that a scenario file and its seeds fully
//! determine, serialized with a stable field order, so reruns diff clean.
//! Wall-clock timings live in a separate `timings.json`; keeping them out of
//! the report is what makes the byte-identity guarantee possible.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::CalibrationResult;
use crate::compensate::MisalignmentMap;
use crate::decode::Correspondence;
use crate::eval::{AmbientProbeRow, MtfSweep, PatternBudget, ReprojectionRow};
use crate::geom::Intrinsics;
use crate::scenario::{CorrespondenceSource, MeasurementPath, Scenario};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// The deterministic payload of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub report_version: u32,
    pub scenario_digest_sha256: String,
    /// Effective capture seed after any command-line override.
    pub seed: u64,
    pub stages_run: Vec<String>,
    /// The resolved scenario, defaults included.
    pub scenario: Scenario,
    pub simulate: Option<SimulateSummary>,
    pub compensate: Option<CompensateSummary>,
    pub calibrate: Option<CalibrateSummary>,
    pub evaluate: Option<EvaluateSummary>,
}

impl RunReport {
    pub fn new(scenario: Scenario, digest_sha256: String) -> Self {
        RunReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            report_version: REPORT_VERSION,
            scenario_digest_sha256: digest_sha256,
            seed: scenario.rig.rng_seed,
            stages_run: Vec::new(),
            scenario,
            simulate: None,
            compensate: None,
            calibrate: None,
            evaluate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub correspondence_source: CorrespondenceSource,
    pub poses: usize,
    pub cameras: usize,
    pub projectors: usize,
    pub frames_per_capture: usize,
    pub total_correspondences: usize,
    /// Indexed by camera.
    pub per_camera_correspondences: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensateSummary {
    pub measurement: MeasurementPath,
    pub positions_per_camera: usize,
    pub maps: Vec<MisalignmentMapSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentMapSummary {
    pub camera: usize,
    /// Row-major, rescaled so the entry of largest magnitude is +1.
    pub homography_row_major: [f64; 9],
    pub inlier_count: usize,
    pub rms_residual_mm: f64,
}

impl MisalignmentMapSummary {
    pub fn from_map(map: &MisalignmentMap) -> Self {
        MisalignmentMapSummary {
            camera: map.camera,
            homography_row_major: map.homography.normalized().row_major(),
            inlier_count: map.inlier_count,
            rms_residual_mm: map.rms_residual_mm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateSummary {
    pub compensation_applied: bool,
    pub projectors: Vec<ProjectorCalibrationSummary>,
}

/// One projector's calibration outcome; failures carry the error text so a
/// bad projector never hides the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorCalibrationSummary {
    pub projector: usize,
    pub intrinsics: Option<Intrinsics>,
    pub rms_reprojection_px: Option<f64>,
    pub poses_used: usize,
    pub error: Option<String>,
}

impl ProjectorCalibrationSummary {
    pub fn success(projector: usize, result: &CalibrationResult) -> Self {
        ProjectorCalibrationSummary {
            projector,
            intrinsics: Some(result.intrinsics),
            rms_reprojection_px: Some(result.rms_reprojection_px),
            poses_used: result.poses.len(),
            error: None,
        }
    }

    pub fn failure(projector: usize, error: String) -> Self {
        ProjectorCalibrationSummary {
            projector,
            intrinsics: None,
            rms_reprojection_px: None,
            poses_used: 0,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSummary {
    pub pattern_budget: Vec<PatternBudget>,
    pub reprojection: Vec<ReprojectionRow>,
    /// Estimated vs true content placement, per calibrated projector.
    pub placement: Vec<PlacementRow>,
    /// Cross-projector registration through the estimated maps.
    pub overlap: Option<OverlapRow>,
    pub mtf: Option<MtfSummary>,
    pub ambient: Vec<AmbientProbeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRow {
    pub projector: usize,
    pub pose: usize,
    pub mean_mm: f64,
    pub max_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub pose: usize,
    pub pair: [usize; 2],
    pub mean_mm: f64,
    pub max_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfSummary {
    pub pose: usize,
    pub pair: [usize; 2],
    pub frequencies_cpmm: Vec<f64>,
    pub combined_contrast: Vec<f64>,
    pub reference_contrast: Vec<f64>,
}

impl MtfSummary {
    pub fn from_sweep(pose: usize, pair: [usize; 2], sweep: &MtfSweep) -> Self {
        MtfSummary {
            pose,
            pair,
            frequencies_cpmm: sweep.combined.frequencies.clone(),
            combined_contrast: sweep.combined.contrast.clone(),
            reference_contrast: sweep.reference.contrast.clone(),
        }
    }
}

/// Wall-clock measurements, written next to the report rather than into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub total_seconds: f64,
    pub stages: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Pretty JSON with a trailing newline; field order follows the struct
/// declarations, so identical values give identical bytes.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, ReportError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ReportError> {
    std::fs::write(path, to_json_bytes(value)?).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ReportError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, ReportError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_correspondence_csv(
    rows: &[Correspondence],
    path: &Path,
) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "pose",
        "camera",
        "projector",
        "projector_px_x",
        "projector_px_y",
        "camera_px_x",
        "camera_px_y",
        "board_mm_x",
        "board_mm_y",
    ])?;
    for r in rows {
        let board = r.board_point.map(|b| (b.x.to_string(), b.y.to_string()));
        let (bx, by) = board.unwrap_or_default();
        w.write_record([
            r.pose.to_string(),
            r.camera.to_string(),
            r.projector.to_string(),
            r.projector_pixel.x.to_string(),
            r.projector_pixel.y.to_string(),
            r.camera_pixel.x.to_string(),
            r.camera_pixel.y.to_string(),
            bx,
            by,
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_budget_csv(rows: &[PatternBudget], path: &Path) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "projectors", "width", "height", "line_frames", "total_frames"])?;
    for r in rows {
        let method = match r.method {
            crate::eval::PatternMethod::Sequential => "sequential",
            crate::eval::PatternMethod::Simultaneous => "simultaneous",
        };
        w.write_record([
            method.to_string(),
            r.projectors.to_string(),
            r.width.to_string(),
            r.height.to_string(),
            r.line_frames.to_string(),
            r.total_frames.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_reprojection_csv(rows: &[ReprojectionRow], path: &Path) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["projector", "pose", "rms_px", "max_px"])?;
    for r in rows {
        w.write_record([
            r.projector.to_string(),
            "all".to_string(),
            r.rms_px.to_string(),
            r.max_px.to_string(),
        ])?;
        for (pose, rms) in r.pose_indices.iter().zip(&r.per_pose_rms_px) {
            w.write_record([r.projector.to_string(), pose.to_string(), rms.to_string(), String::new()])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_placement_csv(
    placement: &[PlacementRow],
    overlap: Option<&OverlapRow>,
    path: &Path,
) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["kind", "projector", "pose", "mean_mm", "max_mm"])?;
    for r in placement {
        w.write_record([
            "placement".to_string(),
            r.projector.to_string(),
            r.pose.to_string(),
            r.mean_mm.to_string(),
            r.max_mm.to_string(),
        ])?;
    }
    if let Some(o) = overlap {
        w.write_record([
            "overlap".to_string(),
            format!("{}-{}", o.pair[0], o.pair[1]),
            o.pose.to_string(),
            o.mean_mm.to_string(),
            o.max_mm.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_mtf_csv(mtf: &MtfSummary, path: &Path) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["frequency_cpmm", "combined_contrast", "reference_contrast"])?;
    for ((f, c), r) in mtf
        .frequencies_cpmm
        .iter()
        .zip(&mtf.combined_contrast)
        .zip(&mtf.reference_contrast)
    {
        w.write_record([f.to_string(), c.to_string(), r.to_string()])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_ambient_csv(rows: &[AmbientProbeRow], path: &Path) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["ambient", "decode_success_rate", "mean_projector_pixel_error_px"])?;
    for r in rows {
        w.write_record([
            r.ambient.to_string(),
            r.decode_success_rate.to_string(),
            r.mean_projector_pixel_error_px.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
