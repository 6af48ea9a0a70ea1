//! Stage orchestration: simulate → compensate → calibrate → evaluate, with
//! JSON hand-off artifacts so any suffix of the pipeline can rerun against a
//! previous run's outputs.
//!
//! Each stage persists its artifact as soon as it finishes, so a later
//! failure leaves everything already computed on disk. Reports carry only
//! seed-determined values; see [`crate::report`] for the byte-identity
//! contract.

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::calib::{calibrate_all, CalibrationResult};
use crate::codec::{build_pattern_set, PatternSet};
use crate::compensate::{
    estimate_misalignment_homography, measure_board_intersection, oracle_session,
    CompensationSession, MisalignmentMap,
};
use crate::decode::{extract_correspondences, Correspondence};
use crate::eval::{
    alignment_error, ambient_probe, mtf_sweep, reprojection_report, PatternBudget, PatternMethod,
};
use crate::geom::Vec2;
use crate::raster::Raster;
use crate::report::{
    self, CalibrateSummary, CompensateSummary, EvaluateSummary, MisalignmentMapSummary,
    MtfSummary, OverlapRow, PlacementRow, ProjectorCalibrationSummary, ReportError, RunReport,
    SimulateSummary, StageTiming, Timings,
};
use crate::scenario::{
    CorrespondenceSource, MeasurementPath, Scenario, ScenarioError,
};
use crate::sim::{capture_stack, ground_truth_correspondence, RigConfig, SimError};

pub const CORRESPONDENCES_FILE: &str = "correspondences.json";
pub const MISALIGNMENT_MAPS_FILE: &str = "misalignment_maps.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Simulate,
    Compensate,
    Calibrate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Simulate, Stage::Compensate, Stage::Calibrate, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Compensate => "compensate",
            Stage::Calibrate => "calibrate",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "simulate" => Ok(Stage::Simulate),
            "compensate" => Ok(Stage::Compensate),
            "calibrate" => Ok(Stage::Calibrate),
            "evaluate" => Ok(Stage::Evaluate),
            other => Err(PipelineError::UnknownStage { name: other.to_string() }),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which stages a run executes; execution always follows pipeline order
/// regardless of how the set was written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageSet {
    pub simulate: bool,
    pub compensate: bool,
    pub calibrate: bool,
    pub evaluate: bool,
}

impl StageSet {
    pub fn all() -> Self {
        StageSet { simulate: true, compensate: true, calibrate: true, evaluate: true }
    }

    pub fn single(stage: Stage) -> Self {
        let mut set = StageSet::default();
        set.insert(stage);
        set
    }

    pub fn insert(&mut self, stage: Stage) {
        match stage {
            Stage::Simulate => self.simulate = true,
            Stage::Compensate => self.compensate = true,
            Stage::Calibrate => self.calibrate = true,
            Stage::Evaluate => self.evaluate = true,
        }
    }

    pub fn contains(&self, stage: Stage) -> bool {
        match stage {
            Stage::Simulate => self.simulate,
            Stage::Compensate => self.compensate,
            Stage::Calibrate => self.calibrate,
            Stage::Evaluate => self.evaluate,
        }
    }

    /// Parses a comma-separated list such as `simulate,calibrate`.
    pub fn parse_list(list: &str) -> Result<Self, PipelineError> {
        let mut set = StageSet::default();
        for item in list.split(',').filter(|s| !s.trim().is_empty()) {
            set.insert(item.parse()?);
        }
        if set == StageSet::default() {
            return Err(PipelineError::UnknownStage { name: list.to_string() });
        }
        Ok(set)
    }

    fn ordered(&self) -> Vec<Stage> {
        Stage::ALL.into_iter().filter(|s| self.contains(*s)).collect()
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} failed: {reason}")]
    StageFailure { stage: &'static str, reason: String },
    #[error("unknown stage {name:?}, expected simulate, compensate, calibrate or evaluate")]
    UnknownStage { name: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn stage_fail(stage: Stage, reason: impl std::fmt::Display) -> PipelineError {
    PipelineError::StageFailure { stage: stage.name(), reason: reason.to_string() }
}

/// One projector's persisted calibration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CalibrationArtifact {
    pub projector: usize,
    pub result: CalibrationResult,
}

/// A finished run: the deterministic report, its wall-clock timings and the
/// directory everything was written to.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub timings: Timings,
    pub out_dir: PathBuf,
}

struct StageContext {
    scenario: Scenario,
    rig: RigConfig,
    out: PathBuf,
    correspondences: Option<Vec<Correspondence>>,
    maps: Option<Vec<MisalignmentMap>>,
    calibrations: Option<Vec<CalibrationArtifact>>,
}

impl StageContext {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn patterns(&self, stage: Stage) -> Result<PatternSet, PipelineError> {
        let spec = self.scenario.pattern_spec()?;
        build_pattern_set(&spec).map_err(|e| stage_fail(stage, e))
    }

    /// In-memory artifact if this run produced it, else the persisted copy,
    /// else a stage failure naming what is missing.
    fn require_correspondences(&mut self) -> Result<&[Correspondence], PipelineError> {
        if self.correspondences.is_none() {
            let path = self.path(CORRESPONDENCES_FILE);
            if !path.exists() {
                return Err(stage_fail(Stage::Calibrate, "simulate artifacts missing"));
            }
            self.correspondences = Some(report::read_json(&path)?);
        }
        Ok(self.correspondences.as_deref().expect("just filled"))
    }

    fn require_maps(&mut self) -> Result<&[MisalignmentMap], PipelineError> {
        if self.maps.is_none() {
            let path = self.path(MISALIGNMENT_MAPS_FILE);
            if !path.exists() {
                return Err(stage_fail(Stage::Calibrate, "compensate artifacts missing"));
            }
            self.maps = Some(report::read_json(&path)?);
        }
        Ok(self.maps.as_deref().expect("just filled"))
    }

    fn require_calibrations(&mut self) -> Result<&[CalibrationArtifact], PipelineError> {
        if self.calibrations.is_none() {
            let path = self.path(CALIBRATION_FILE);
            if !path.exists() {
                return Err(stage_fail(Stage::Evaluate, "calibrate artifacts missing"));
            }
            self.calibrations = Some(report::read_json(&path)?);
        }
        Ok(self.calibrations.as_deref().expect("just filled"))
    }
}

/// Executes the selected stages in pipeline order and writes the report,
/// timings, artifacts and configured exports into `out_dir`.
///
/// The scenario must already be resolved; apply seed or compensation
/// overrides before calling. A disabled compensation section skips that stage
/// rather than failing, which is how the ablation runs.
pub fn run(
    scenario: Scenario,
    digest_sha256: String,
    stages: StageSet,
    out_dir: &Path,
) -> Result<RunOutcome, PipelineError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|source| PipelineError::Io { path: out_dir.to_path_buf(), source })?;
    let rig = scenario.build_rig()?;
    let mut report = RunReport::new(scenario.clone(), digest_sha256);
    let mut ctx = StageContext {
        scenario,
        rig,
        out: out_dir.to_path_buf(),
        correspondences: None,
        maps: None,
        calibrations: None,
    };
    let mut timings = Timings::default();
    let total_start = Instant::now();
    for stage in stages.ordered() {
        if stage == Stage::Compensate && !ctx.scenario.compensation.enabled {
            log::info!("compensation disabled, skipping the stage");
            continue;
        }
        let start = Instant::now();
        match stage {
            Stage::Simulate => report.simulate = Some(run_simulate(&mut ctx)?),
            Stage::Compensate => report.compensate = Some(run_compensate(&mut ctx)?),
            Stage::Calibrate => report.calibrate = Some(run_calibrate(&mut ctx)?),
            Stage::Evaluate => report.evaluate = Some(run_evaluate(&mut ctx)?),
        }
        report.stages_run.push(stage.name().to_string());
        timings
            .stages
            .push(StageTiming { stage: stage.name().to_string(), seconds: start.elapsed().as_secs_f64() });
    }
    timings.total_seconds = total_start.elapsed().as_secs_f64();
    report::write_json(&report, &ctx.path(REPORT_FILE))?;
    report::write_json(&timings, &ctx.path(TIMINGS_FILE))?;
    Ok(RunOutcome { report, timings, out_dir: ctx.out })
}

fn run_simulate(ctx: &mut StageContext) -> Result<SimulateSummary, PipelineError> {
    let stage = Stage::Simulate;
    let patterns = ctx.patterns(stage)?;
    let poses = ctx.rig.num_poses();
    let cameras = ctx.rig.cameras.len();
    let projectors = ctx.rig.projectors.len();
    let source = ctx.scenario.simulate.correspondence_source;
    let save_captures = ctx.scenario.outputs.save_captures;
    let captures_dir = ctx.path("captures");
    if save_captures {
        std::fs::create_dir_all(&captures_dir)
            .map_err(|source| PipelineError::Io { path: captures_dir.clone(), source })?;
    }

    let mut correspondences = Vec::new();
    for pose in 0..poses {
        for camera in 0..cameras {
            match source {
                CorrespondenceSource::Decode => {
                    let stack = capture_stack(&ctx.rig, &patterns, pose, camera)
                        .map_err(|e| stage_fail(stage, e))?;
                    if save_captures {
                        for (f, frame) in stack.frames.iter().enumerate() {
                            let name = format!("pose{pose:02}_cam{camera}_frame{f:03}.pgm");
                            frame
                                .write_pgm(&captures_dir.join(&name))
                                .map_err(|e| stage_fail(stage, e))?;
                        }
                    }
                    let found = extract_correspondences(&stack, &patterns, &ctx.scenario.decode)
                        .map_err(|e| stage_fail(stage, e))?;
                    correspondences.extend(found);
                }
                CorrespondenceSource::Oracle => {
                    for projector in 0..projectors {
                        match ground_truth_correspondence(&ctx.rig, pose, projector, camera) {
                            Ok(truth) => correspondences.push(Correspondence {
                                pose,
                                camera,
                                projector,
                                projector_pixel: truth.projector_pixel,
                                camera_pixel: truth.camera_pixel,
                                board_point: None,
                            }),
                            Err(SimError::NotVisible { .. }) => {}
                            Err(e) => return Err(stage_fail(stage, e)),
                        }
                    }
                }
            }
        }
    }

    if ctx.scenario.outputs.save_patterns {
        let dir = ctx.path("patterns");
        for m in 0..projectors {
            export_pattern_frames(&patterns, m as u32, &dir)?;
        }
    }

    report::write_json(&correspondences, &ctx.path(CORRESPONDENCES_FILE))?;
    if ctx.scenario.outputs.save_correspondence_csv {
        report::write_correspondence_csv(&correspondences, &ctx.path("correspondences.csv"))?;
    }

    let mut per_camera = vec![0usize; cameras];
    for corr in &correspondences {
        per_camera[corr.camera] += 1;
    }
    let summary = SimulateSummary {
        correspondence_source: source,
        poses,
        cameras,
        projectors,
        frames_per_capture: patterns.len(),
        total_correspondences: correspondences.len(),
        per_camera_correspondences: per_camera,
    };
    ctx.correspondences = Some(correspondences);
    Ok(summary)
}

fn run_compensate(ctx: &mut StageContext) -> Result<CompensateSummary, PipelineError> {
    let stage = Stage::Compensate;
    let comp = ctx.scenario.compensation.clone();
    let mut maps = Vec::with_capacity(ctx.rig.cameras.len());
    let session_patterns = match comp.measurement {
        MeasurementPath::Rendered => {
            let spec = ctx.scenario.session_pattern_spec()?;
            Some(build_pattern_set(&spec).map_err(|e| stage_fail(stage, e))?)
        }
        MeasurementPath::Oracle => None,
    };
    let mut positions_per_camera = 0;
    for camera in 0..ctx.rig.cameras.len() {
        let positions = ctx.scenario.session_positions(camera);
        positions_per_camera = positions.len();
        let session = match comp.measurement {
            MeasurementPath::Oracle => oracle_session(&ctx.rig, &positions, camera)
                .map_err(|e| stage_fail(stage, e))?,
            MeasurementPath::Rendered => {
                let session_rig = ctx.scenario.session_rig(camera)?;
                let patterns = session_patterns.as_ref().expect("built for rendered path");
                let mut samples = Vec::with_capacity(positions.len());
                for k in 0..positions.len() {
                    samples.push(
                        measure_board_intersection(
                            &session_rig,
                            patterns,
                            &ctx.scenario.decode,
                            &comp.measure,
                            k,
                            0,
                            camera,
                        )
                        .map_err(|e| stage_fail(stage, format!("camera {camera}, position {k}: {e}")))?,
                    );
                }
                CompensationSession { camera, samples }
            }
        };
        maps.push(
            estimate_misalignment_homography(&session, &comp.ransac)
                .map_err(|e| stage_fail(stage, format!("camera {camera}: {e}")))?,
        );
    }
    report::write_json(&maps, &ctx.path(MISALIGNMENT_MAPS_FILE))?;
    let summary = CompensateSummary {
        measurement: comp.measurement,
        positions_per_camera,
        maps: maps.iter().map(MisalignmentMapSummary::from_map).collect(),
    };
    ctx.maps = Some(maps);
    Ok(summary)
}

fn run_calibrate(ctx: &mut StageContext) -> Result<CalibrateSummary, PipelineError> {
    let use_compensation = ctx.scenario.compensation.enabled;
    let min_poses = ctx.scenario.calibration.min_poses;
    let lm = ctx.scenario.calibration.lm;
    let nominal: Vec<Vec2> = ctx.rig.cameras.iter().map(|c| c.nominal_board_point).collect();
    ctx.require_correspondences()?;
    if use_compensation {
        ctx.require_maps()?;
    }
    let correspondences = ctx.correspondences.as_deref().expect("required above");
    let maps = ctx.maps.as_deref().unwrap_or(&[]);

    let outcomes = calibrate_all(correspondences, maps, &nominal, use_compensation, min_poses, &lm);
    let mut artifacts = Vec::new();
    let mut rows = Vec::with_capacity(outcomes.len());
    for (projector, outcome) in outcomes {
        match outcome {
            Ok(result) => {
                rows.push(ProjectorCalibrationSummary::success(projector, &result));
                artifacts.push(CalibrationArtifact { projector, result });
            }
            Err(e) => {
                log::warn!("projector {projector} failed to calibrate: {e}");
                rows.push(ProjectorCalibrationSummary::failure(projector, e.to_string()));
            }
        }
    }
    report::write_json(&artifacts, &ctx.path(CALIBRATION_FILE))?;
    ctx.calibrations = Some(artifacts);
    Ok(CalibrateSummary { compensation_applied: use_compensation, projectors: rows })
}

fn run_evaluate(ctx: &mut StageContext) -> Result<EvaluateSummary, PipelineError> {
    let stage = Stage::Evaluate;
    ctx.require_calibrations()?;
    let calibrations = ctx.calibrations.as_deref().expect("required above");
    let scenario = &ctx.scenario;
    let rig = &ctx.rig;
    let spec = scenario.pattern_spec()?;

    let budget_of = |method| {
        PatternBudget::new(
            method,
            spec.num_projectors,
            spec.projector_width,
            spec.projector_height,
            spec.line_shift_count,
        )
    };
    let pattern_budget =
        vec![budget_of(PatternMethod::Sequential), budget_of(PatternMethod::Simultaneous)];

    let reprojection = reprojection_report(
        &calibrations.iter().map(|c| (c.projector, &c.result)).collect::<Vec<_>>(),
    );

    // Estimated and true placement maps (projector pixels → board mm) at one
    // pose; projectors that never saw that pose are skipped.
    let placement_maps = |pose: usize| -> Result<Vec<(usize, crate::geom::Homography2D, crate::geom::Homography2D)>, PipelineError> {
        let mut rows = Vec::new();
        for artifact in calibrations {
            let Some(row) = artifact.result.pose_indices.iter().position(|p| *p == pose) else {
                log::warn!(
                    "projector {} has no observations at pose {pose}, skipping placement",
                    artifact.projector
                );
                continue;
            };
            let estimated = artifact
                .result
                .board_to_projector(row)
                .expect("row index comes from pose_indices")
                .inverse()
                .map_err(|e| stage_fail(stage, e))?;
            let truth = crate::sim::board_to_projector(rig, pose, artifact.projector)
                .map_err(|e| stage_fail(stage, e))?
                .inverse()
                .map_err(|e| stage_fail(stage, e))?;
            rows.push((artifact.projector, estimated, truth));
        }
        Ok(rows)
    };

    let align = &scenario.evaluate.alignment;
    let grid = (align.grid[0], align.grid[1]);
    let mut placement = Vec::new();
    let maps_at_pose = placement_maps(align.pose)?;
    for (projector, estimated, truth) in &maps_at_pose {
        let panel = (rig.projectors[*projector].width, rig.projectors[*projector].height);
        let result = alignment_error(estimated, truth, panel, grid)
            .map_err(|e| stage_fail(stage, format!("projector {projector}: {e}")))?;
        placement.push(PlacementRow {
            projector: *projector,
            pose: align.pose,
            mean_mm: result.mean_mm,
            max_mm: result.max_mm,
        });
    }

    // Content lives in the first paired projector's pixels: it lands where
    // that projector truly puts it, versus where the second projector puts it
    // after routing through both estimated maps.
    let mut overlap = None;
    if rig.projectors.len() > 1 {
        let [a, b] = align.pair;
        let find = |m: usize| maps_at_pose.iter().find(|(p, _, _)| *p == m);
        if let (Some((_, est_a, true_a)), Some((_, est_b, true_b))) = (find(a), find(b)) {
            let est_b_inv = est_b.inverse().map_err(|e| stage_fail(stage, e))?;
            let routed = true_b.compose(&est_b_inv.compose(est_a));
            let panel = (rig.projectors[a].width, rig.projectors[a].height);
            let result = alignment_error(true_a, &routed, panel, grid)
                .map_err(|e| stage_fail(stage, format!("pair {a}-{b}: {e}")))?;
            overlap = Some(OverlapRow {
                pose: align.pose,
                pair: align.pair,
                mean_mm: result.mean_mm,
                max_mm: result.max_mm,
            });
        } else {
            log::warn!("overlap pair ({a}, {b}) not fully calibrated at pose {}", align.pose);
        }
    }

    let mtf_cfg = &scenario.evaluate.mtf;
    let mut mtf = None;
    if mtf_cfg.enabled && rig.projectors.len() > 1 {
        let [a, b] = mtf_cfg.pair;
        let maps_at_pose = placement_maps(mtf_cfg.pose)?;
        let find = |m: usize| maps_at_pose.iter().find(|(p, _, _)| *p == m);
        if let (Some((_, est_a, _)), Some((_, est_b, _))) = (find(a), find(b)) {
            let sweep = mtf_sweep(
                est_a,
                est_b,
                rig,
                mtf_cfg.pose,
                (a, b),
                mtf_cfg.frequency_start_cpmm,
                mtf_cfg.frequency_end_cpmm,
                mtf_cfg.frequency_step_cpmm,
            )
            .map_err(|e| stage_fail(stage, format!("mtf pair {a}-{b}: {e}")))?;
            mtf = Some(MtfSummary::from_sweep(mtf_cfg.pose, mtf_cfg.pair, &sweep));
        } else {
            log::warn!("mtf pair ({a}, {b}) not fully calibrated at pose {}", mtf_cfg.pose);
        }
    }

    let mut ambient = Vec::new();
    if !scenario.evaluate.ambient_levels.is_empty() {
        let patterns = ctx.patterns(stage)?;
        ambient = ambient_probe(rig, &patterns, &scenario.decode, &scenario.evaluate.ambient_levels)
            .map_err(|e| stage_fail(stage, e))?;
    }

    let summary = EvaluateSummary { pattern_budget, reprojection, placement, overlap, mtf, ambient };
    if scenario.outputs.save_evaluation_csv {
        report::write_budget_csv(&summary.pattern_budget, &ctx.path("budget.csv"))?;
        report::write_reprojection_csv(&summary.reprojection, &ctx.path("reprojection.csv"))?;
        report::write_placement_csv(&summary.placement, summary.overlap.as_ref(), &ctx.path("placement.csv"))?;
        if let Some(m) = &summary.mtf {
            report::write_mtf_csv(m, &ctx.path("mtf.csv"))?;
        }
        if !summary.ambient.is_empty() {
            report::write_ambient_csv(&summary.ambient, &ctx.path("ambient.csv"))?;
        }
    }
    Ok(summary)
}

/// Renders one projector's view of a pattern frame at full panel resolution.
pub fn render_pattern_frame(
    patterns: &PatternSet,
    index: usize,
    projector: u32,
) -> Result<Raster, crate::codec::CodecError> {
    let spec = patterns.spec();
    let frame = &patterns.frames()[index];
    let mut raster = Raster::new(spec.projector_width, spec.projector_height);
    for y in 0..spec.projector_height {
        for x in 0..spec.projector_width {
            raster.set(x, y, patterns.frame_intensity(frame, projector, (x, y), None)?);
        }
    }
    Ok(raster)
}

/// Writes every frame of the set as `proj{m}_frame{index}.pgm` under `dir`.
pub fn export_pattern_frames(
    patterns: &PatternSet,
    projector: u32,
    dir: &Path,
) -> Result<usize, PipelineError> {
    let fail = |e: &dyn std::fmt::Display| PipelineError::StageFailure {
        stage: "patterns",
        reason: e.to_string(),
    };
    std::fs::create_dir_all(dir)
        .map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    for index in 0..patterns.len() {
        let raster = render_pattern_frame(patterns, index, projector).map_err(|e| fail(&e))?;
        raster
            .write_pgm(&dir.join(format!("proj{projector}_frame{index:03}.pgm")))
            .map_err(|e| fail(&e))?;
    }
    Ok(patterns.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn two_projector_oracle_toml() -> String {
        let mut cameras = String::new();
        for (x, y, off) in [
            (60.0, 40.0, [2.0, -1.0, 2.5]),
            (140.0, 40.0, [-3.0, 1.5, 1.5]),
            (60.0, 100.0, [1.0, 4.0, -2.0]),
            (140.0, 100.0, [-2.5, -3.5, 3.0]),
        ] {
            cameras.push_str(&format!(
                "[[rig.cameras]]\n\
                 nominal_board_point_mm = [{x}, {y}]\n\
                 true_offset_mm = [{}, {}, {}]\n\
                 focal_px = [60.0, 60.0]\n\
                 sensor_px = [33, 25]\n",
                off[0], off[1], off[2]
            ));
        }
        format!(
            "schema_version = 1\n\
             [rig]\n\
             board_size_mm = [200.0, 140.0]\n\
             rng_seed = 5\n\
             {cameras}\
             [[rig.projectors]]\n\
             position_m = [0.10, 0.07, 1.00]\n\
             focal_px = [300.0, 310.0]\n\
             panel_px = [64, 48]\n\
             [[rig.projectors]]\n\
             position_m = [0.25, 0.12, 1.10]\n\
             focal_px = [280.0, 285.0]\n\
             panel_px = [64, 48]\n\
             [board_poses]\n\
             count = 5\n\
             tilt_max_deg = 12.0\n\
             seed = 7\n\
             [simulate]\n\
             correspondence_source = \"oracle\"\n\
             [evaluate.mtf]\n\
             frequency_start_cpmm = 0.05\n\
             frequency_end_cpmm = 0.25\n\
             frequency_step_cpmm = 0.05\n"
        )
    }

    fn scenario() -> Scenario {
        Scenario::from_toml_str(&two_projector_oracle_toml()).unwrap()
    }

    #[test]
    fn stage_lists_parse_in_any_order() {
        let set = StageSet::parse_list("calibrate, simulate").unwrap();
        assert_eq!(set.ordered(), vec![Stage::Simulate, Stage::Calibrate]);
        assert!(StageSet::parse_list("simulate,paint").is_err());
        assert!(StageSet::parse_list("").is_err());
        assert_eq!(StageSet::all().ordered().len(), 4);
    }

    #[test]
    fn full_oracle_run_recovers_the_rig_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let outcome = run(scenario(), "digest".into(), StageSet::all(), dir.path()).unwrap();
        let report = &outcome.report;
        assert_eq!(report.stages_run, ["simulate", "compensate", "calibrate", "evaluate"]);

        let sim = report.simulate.as_ref().unwrap();
        // Every projector is visible from every camera at every pose.
        assert_eq!(sim.total_correspondences, 5 * 4 * 2);
        assert_eq!(sim.per_camera_correspondences, vec![10; 4]);

        let comp = report.compensate.as_ref().unwrap();
        assert_eq!(comp.positions_per_camera, 36);
        for map in &comp.maps {
            assert_eq!(map.inlier_count, 36);
            assert!(map.rms_residual_mm < 1e-9, "camera {}: {}", map.camera, map.rms_residual_mm);
        }

        let calib = report.calibrate.as_ref().unwrap();
        assert!(calib.compensation_applied);
        let truth = [[300.0, 310.0], [280.0, 285.0]];
        for row in &calib.projectors {
            assert!(row.error.is_none(), "projector {}: {:?}", row.projector, row.error);
            assert!(row.rms_reprojection_px.unwrap() < 1e-8);
            let k = row.intrinsics.unwrap();
            let [fx, fy] = truth[row.projector];
            assert!((k.fx - fx).abs() / fx < 1e-6, "fx {} vs {fx}", k.fx);
            assert!((k.fy - fy).abs() / fy < 1e-6, "fy {} vs {fy}", k.fy);
        }

        let eval = report.evaluate.as_ref().unwrap();
        assert_eq!(eval.pattern_budget[0].total_frames, 2 * (6 + 6 + 10));
        assert_eq!(eval.pattern_budget[1].total_frames, 1 + 6 + 6 + 10);
        assert_eq!(eval.reprojection.len(), 2);
        assert_eq!(eval.placement.len(), 2);
        for row in &eval.placement {
            assert!(row.max_mm < 1e-6, "projector {}: {}", row.projector, row.max_mm);
        }
        let overlap = eval.overlap.as_ref().unwrap();
        assert!(overlap.max_mm < 1e-6, "{}", overlap.max_mm);
        let mtf = eval.mtf.as_ref().unwrap();
        assert_eq!(mtf.frequencies_cpmm.len(), 5);
        for (c, r) in mtf.combined_contrast.iter().zip(&mtf.reference_contrast) {
            assert!(c >= &(0.95 * r), "combined {c} vs reference {r}");
        }

        for file in [
            CORRESPONDENCES_FILE,
            MISALIGNMENT_MAPS_FILE,
            CALIBRATION_FILE,
            REPORT_FILE,
            TIMINGS_FILE,
            "correspondences.csv",
            "budget.csv",
            "reprojection.csv",
            "placement.csv",
            "mtf.csv",
        ] {
            assert!(dir.path().join(file).exists(), "{file} missing");
        }
    }

    #[test]
    fn disabling_compensation_skips_the_stage_and_hurts_accuracy() {
        let dir_on = tempfile::tempdir().unwrap();
        let on = run(scenario(), "d".into(), StageSet::all(), dir_on.path()).unwrap();

        let mut ablated = scenario();
        ablated.compensation.enabled = false;
        let dir_off = tempfile::tempdir().unwrap();
        let off = run(ablated, "d".into(), StageSet::all(), dir_off.path()).unwrap();

        assert_eq!(off.report.stages_run, ["simulate", "calibrate", "evaluate"]);
        assert!(off.report.compensate.is_none());
        assert!(!off.report.calibrate.as_ref().unwrap().compensation_applied);
        for (with, without) in on
            .report
            .evaluate
            .as_ref()
            .unwrap()
            .reprojection
            .iter()
            .zip(&off.report.evaluate.as_ref().unwrap().reprojection)
        {
            assert!(
                without.rms_px > 2.0 * with.rms_px.max(1e-9),
                "projector {}: {} vs {}",
                with.projector,
                without.rms_px,
                with.rms_px
            );
        }
    }

    #[test]
    fn reruns_with_the_same_seed_are_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run(scenario(), "digest".into(), StageSet::all(), dir_a.path()).unwrap();
        run(scenario(), "digest".into(), StageSet::all(), dir_b.path()).unwrap();
        let a = std::fs::read(dir_a.path().join(REPORT_FILE)).unwrap();
        let b = std::fs::read(dir_b.path().join(REPORT_FILE)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_alone_without_artifacts_names_the_missing_stage() {
        let dir = tempfile::tempdir().unwrap();
        let err =
            run(scenario(), "d".into(), StageSet::single(Stage::Evaluate), dir.path()).unwrap_err();
        match err {
            PipelineError::StageFailure { stage, reason } => {
                assert_eq!(stage, "evaluate");
                assert_eq!(reason, "calibrate artifacts missing");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rerunning_evaluate_against_artifacts_matches_the_full_run() {
        let dir = tempfile::tempdir().unwrap();
        let full = run(scenario(), "d".into(), StageSet::all(), dir.path()).unwrap();
        let again =
            run(scenario(), "d".into(), StageSet::single(Stage::Evaluate), dir.path()).unwrap();
        assert_eq!(again.report.stages_run, ["evaluate"]);
        assert_eq!(again.report.evaluate, full.report.evaluate);
    }

    #[test]
    fn calibrate_alone_needs_simulated_correspondences() {
        let dir = tempfile::tempdir().unwrap();
        let err =
            run(scenario(), "d".into(), StageSet::single(Stage::Calibrate), dir.path()).unwrap_err();
        match err {
            PipelineError::StageFailure { stage, reason } => {
                assert_eq!(stage, "calibrate");
                assert_eq!(reason, "simulate artifacts missing");
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
