//! Scenario files: the TOML description of a rig, its pattern session and the
//! estimation parameters, plus the resolution step that turns one into
//! simulator and pipeline inputs.
//!
//! Parsing is strict (unknown keys are rejected) and every omitted field gets
//! a documented default during [`Scenario::resolve`], so serializing a loaded
//! scenario echoes the exact configuration a run used. Reports embed that
//! echo; a report plus this module reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calib::DEFAULT_MIN_POSES;
use crate::calib::refine::LmOptions;
use crate::codec::{CodecError, DecodeParams, PatternSetSpec};
use crate::compensate::{MeasureParams, RansacParams};
use crate::geom::{rodrigues, Extrinsics, GeomError, Intrinsics, Pt3, Vec2, Vec3};
use crate::sim::{
    generate_board_poses, EmbeddedCameraSpec, ProjectorGroundTruth, RigConfig, SimError, MM_PER_M,
};

/// Scenario files carry `schema_version = 1`; anything else is rejected so a
/// stale tool never silently misreads a newer file.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {got}, this tool reads version {SCHEMA_VERSION}")]
    SchemaVersion { got: u32 },
    #[error("invalid scenario: {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

fn invalid(field: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), reason: reason.into() }
}

/// Where the projector↔camera correspondences come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrespondenceSource {
    /// Decode captured pattern stacks; carries the codec's sub-pixel limits.
    Decode,
    /// Analytic ray intersections; exact, for accuracy studies.
    Oracle,
}

/// How the compensation session measures board intersections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementPath {
    /// Analytic ray-plane crossings; exact.
    Oracle,
    /// Rendered line footprints, binarized and Hough-fitted.
    Rendered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub rig: RigSection,
    pub board_poses: BoardPosesSection,
    #[serde(default)]
    pub patterns: PatternsSection,
    #[serde(default)]
    pub decode: DecodeParams,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub compensation: CompensationSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSection {
    /// Board extent in millimeters; cameras must sit inside it.
    #[serde(default = "default_board_size")]
    pub board_size_mm: [f64; 2],
    /// Uniform stray light added to every capture, in [0, 1).
    #[serde(default)]
    pub ambient_level: f64,
    /// Per-pixel Gaussian sensor noise sigma; 0 disables noise.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Intensity ceiling applied after ambient and noise.
    #[serde(default = "default_one")]
    pub saturation_cap: f64,
    /// Seed for capture noise; board-pose generation has its own seed.
    #[serde(default)]
    pub rng_seed: u64,
    pub cameras: Vec<CameraSection>,
    pub projectors: Vec<ProjectorSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    /// Where the rig believes the camera sits, board millimeters.
    pub nominal_board_point_mm: [f64; 2],
    /// True displacement from the nominal point (the misalignment the
    /// pipeline must estimate); z points off the board.
    #[serde(default)]
    pub true_offset_mm: [f64; 3],
    /// Device-frame rotation from the board-normal mounting, axis direction
    /// with magnitude in degrees.
    #[serde(default)]
    pub orientation_axis_angle_deg: [f64; 3],
    pub focal_px: [f64; 2],
    /// Defaults to the sensor center.
    #[serde(default)]
    pub principal_px: Option<[f64; 2]>,
    pub sensor_px: [u32; 2],
    #[serde(default)]
    pub psf_sigma_px: f64,
    #[serde(default = "default_one")]
    pub gain: f64,
    /// Incidence angle at which sensitivity halves, per device axis.
    #[serde(default = "default_falloff")]
    pub falloff_half_angle_deg: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorSection {
    /// Optical center in the pose-0 board frame, meters.
    pub position_m: [f64; 3],
    /// Board point the optical axis passes through; defaults to the board
    /// center.
    #[serde(default)]
    pub look_at_mm: Option<[f64; 2]>,
    pub focal_px: [f64; 2],
    /// Defaults to the panel center.
    #[serde(default)]
    pub principal_px: Option<[f64; 2]>,
    pub panel_px: [u32; 2],
}

/// Board poses are either generated (seeded tilts about the board center) or
/// written out one by one; exactly one of `count` and `explicit` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoardPosesSection {
    pub count: Option<usize>,
    pub tilt_max_deg: f64,
    /// Distance change along the board normal, as a fraction of
    /// `nominal_distance_m`.
    pub distance_jitter: f64,
    pub nominal_distance_m: f64,
    pub seed: u64,
    pub explicit: Vec<ExplicitPose>,
}

impl Default for BoardPosesSection {
    fn default() -> Self {
        BoardPosesSection {
            count: None,
            tilt_max_deg: 15.0,
            distance_jitter: 0.05,
            nominal_distance_m: 1.0,
            seed: 0,
            explicit: Vec::new(),
        }
    }
}

/// One hand-written board pose: rotate about the board center, then translate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplicitPose {
    /// Axis direction with magnitude in degrees.
    pub axis_angle_deg: [f64; 3],
    pub translation_mm: [f64; 3],
}

impl Default for ExplicitPose {
    fn default() -> Self {
        ExplicitPose { axis_angle_deg: [0.0; 3], translation_mm: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternsSection {
    /// Line-shift frames; must be 2·(2k+1) for some k, or 0 to disable.
    pub line_shift_count: u32,
    pub include_reference_frames: bool,
    /// Defaults to the projectors' panel width, which must then be shared.
    pub width: Option<u32>,
    pub height: Option<u32>,
}

impl Default for PatternsSection {
    fn default() -> Self {
        PatternsSection {
            line_shift_count: 10,
            include_reference_frames: true,
            width: None,
            height: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub correspondence_source: CorrespondenceSource,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { correspondence_source: CorrespondenceSource::Decode }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompensationSection {
    pub enabled: bool,
    pub measurement: MeasurementPath,
    pub session: SessionSection,
    pub ransac: RansacParams,
    /// Used by the rendered measurement path only.
    pub measure: MeasureParams,
}

impl Default for CompensationSection {
    fn default() -> Self {
        CompensationSection {
            enabled: true,
            measurement: MeasurementPath::Oracle,
            session: SessionSection::default(),
            ransac: RansacParams::default(),
            measure: MeasureParams::default(),
        }
    }
}

/// Placement of the movable session projector used to measure each camera's
/// misalignment. Positions form a `grid` of viewing directions covering
/// `fov_fraction` of the camera's field of view, `distance_m` out along the
/// camera axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionSection {
    pub grid: [u32; 2],
    pub distance_m: f64,
    pub fov_fraction: f64,
    /// Session projector focal length; long so one panel pixel subtends a
    /// fraction of a millimeter on the board (rendered path).
    pub projector_focal_px: f64,
    pub projector_panel_px: [u32; 2],
}

impl Default for SessionSection {
    fn default() -> Self {
        SessionSection {
            grid: [6, 6],
            distance_m: 0.6,
            fov_fraction: 0.8,
            projector_focal_px: 4000.0,
            projector_panel_px: [1024, 1024],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub min_poses: usize,
    pub lm: LmOptions,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection { min_poses: DEFAULT_MIN_POSES, lm: LmOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Ambient levels for the robustness probe; empty skips it.
    pub ambient_levels: Vec<f64>,
    pub alignment: AlignmentSection,
    pub mtf: MtfSection,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            ambient_levels: Vec::new(),
            alignment: AlignmentSection::default(),
            mtf: MtfSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentSection {
    /// Board pose the placement maps are compared at.
    pub pose: usize,
    /// Sample lattice over the content frame.
    pub grid: [usize; 2],
    /// Projector pair for the overlap table; ignored with one projector.
    pub pair: [usize; 2],
}

impl Default for AlignmentSection {
    fn default() -> Self {
        AlignmentSection { pose: 0, grid: [24, 24], pair: [0, 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MtfSection {
    pub enabled: bool,
    pub pose: usize,
    pub pair: [usize; 2],
    pub frequency_start_cpmm: f64,
    pub frequency_end_cpmm: f64,
    pub frequency_step_cpmm: f64,
}

impl Default for MtfSection {
    fn default() -> Self {
        MtfSection {
            enabled: true,
            pose: 0,
            pair: [0, 1],
            frequency_start_cpmm: 2.0 / 128.0,
            frequency_end_cpmm: 63.0 / 128.0,
            frequency_step_cpmm: 1.0 / 128.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsSection {
    pub directory: PathBuf,
    /// Hand-off artifacts (correspondences, maps, calibration) always persist;
    /// these toggles control the extra exports.
    pub save_correspondence_csv: bool,
    pub save_evaluation_csv: bool,
    pub save_captures: bool,
    pub save_patterns: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection {
            directory: PathBuf::from("out"),
            save_correspondence_csv: true,
            save_evaluation_csv: true,
            save_captures: false,
            save_patterns: false,
        }
    }
}

fn default_board_size() -> [f64; 2] {
    [470.0, 320.0]
}

fn default_one() -> f64 {
    1.0
}

fn default_falloff() -> [f64; 2] {
    [40.0, 32.0]
}

/// A parsed scenario together with the digest of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub digest_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Reads, parses, resolves and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    Ok(LoadedScenario {
        scenario: Scenario::from_toml_str(&text)?,
        digest_sha256: sha256_hex(text.as_bytes()),
    })
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let mut scenario: Scenario = toml::from_str(text)?;
        scenario.resolve()?;
        Ok(scenario)
    }

    /// Fills context-dependent defaults and validates the whole tree; called
    /// by the loaders. Resolution is idempotent.
    pub fn resolve(&mut self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersion { got: self.schema_version });
        }
        let board = self.rig.board_size_mm;
        for cam in &mut self.rig.cameras {
            let [w, h] = cam.sensor_px;
            cam.principal_px.get_or_insert([w as f64 / 2.0, h as f64 / 2.0]);
        }
        for proj in &mut self.rig.projectors {
            let [w, h] = proj.panel_px;
            proj.principal_px.get_or_insert([w as f64 / 2.0, h as f64 / 2.0]);
            proj.look_at_mm.get_or_insert([board[0] / 2.0, board[1] / 2.0]);
        }
        self.validate()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        match (self.board_poses.count, self.board_poses.explicit.is_empty()) {
            (None, true) => {
                return Err(invalid("board_poses", "give either count or explicit poses"));
            }
            (Some(_), false) => {
                return Err(invalid("board_poses", "count and explicit poses are exclusive"));
            }
            (Some(0), _) => return Err(invalid("board_poses.count", "must be positive")),
            _ => {}
        }
        if !(0.0..=20.0).contains(&self.board_poses.tilt_max_deg) {
            return Err(invalid("board_poses.tilt_max_deg", "must be in [0, 20] degrees"));
        }
        if !(0.0..=0.15).contains(&self.board_poses.distance_jitter) {
            return Err(invalid("board_poses.distance_jitter", "must be in [0, 0.15]"));
        }
        for (m, proj) in self.rig.projectors.iter().enumerate() {
            for (given, axis, panel) in [
                (self.patterns.width, "width", proj.panel_px[0]),
                (self.patterns.height, "height", proj.panel_px[1]),
            ] {
                if let Some(w) = given.filter(|w| *w != panel) {
                    return Err(invalid(
                        &format!("patterns.{axis}"),
                        format!(
                            "pattern {axis} {w} does not match rig.projectors[{m}].panel_px {axis} {panel}"
                        ),
                    ));
                }
            }
        }
        let rig = self.build_rig()?;
        rig.validate()?;
        self.pattern_spec()?.validate()?;
        if self.compensation.enabled {
            let s = &self.compensation.session;
            if (s.grid[0] * s.grid[1]) < 4 {
                return Err(invalid(
                    "compensation.session.grid",
                    "needs at least 4 positions to fit a homography",
                ));
            }
            if s.distance_m <= 0.0 {
                return Err(invalid("compensation.session.distance_m", "must be positive"));
            }
            if !(0.0 < s.fov_fraction && s.fov_fraction < 1.0) {
                return Err(invalid("compensation.session.fov_fraction", "must be in (0, 1)"));
            }
            if self.compensation.measurement == MeasurementPath::Rendered {
                self.session_rig(0)?.validate()?;
            }
        }
        if self.calibration.min_poses < 1 {
            return Err(invalid("calibration.min_poses", "must be at least 1"));
        }
        let limit = self.rig.saturation_cap.min(1.0);
        for &level in &self.evaluate.ambient_levels {
            if !(0.0 <= level && level < limit) {
                return Err(invalid(
                    "evaluate.ambient_levels",
                    format!("level {level} outside [0, {limit})"),
                ));
            }
        }
        for (name, pair) in
            [("evaluate.alignment.pair", self.evaluate.alignment.pair), ("evaluate.mtf.pair", self.evaluate.mtf.pair)]
        {
            for m in pair {
                if m >= self.rig.projectors.len() && self.rig.projectors.len() > 1 {
                    return Err(invalid(name, format!("projector {m} does not exist")));
                }
            }
        }
        for (name, pose) in
            [("evaluate.alignment.pose", self.evaluate.alignment.pose), ("evaluate.mtf.pose", self.evaluate.mtf.pose)]
        {
            if pose >= self.num_poses() {
                return Err(invalid(name, format!("pose {pose} does not exist")));
            }
        }
        Ok(())
    }

    pub fn num_poses(&self) -> usize {
        self.board_poses.count.unwrap_or(self.board_poses.explicit.len())
    }

    /// Transforms from each pose's board frame to the pose-0 frame.
    pub fn board_pose_transforms(&self) -> Vec<Extrinsics> {
        let [w, h] = self.rig.board_size_mm;
        match self.board_poses.count {
            Some(count) => generate_board_poses(
                count,
                self.board_poses.tilt_max_deg,
                self.board_poses.distance_jitter,
                self.board_poses.nominal_distance_m,
                w,
                h,
                self.board_poses.seed,
            ),
            None => {
                let center = Vec3::new(w, h, 0.0) / (2.0 * MM_PER_M);
                self.board_poses
                    .explicit
                    .iter()
                    .map(|p| {
                        let axis = Vec3::from(p.axis_angle_deg) * (std::f64::consts::PI / 180.0);
                        let rotation = rodrigues(&axis);
                        let translation =
                            center - rotation * center + Vec3::from(p.translation_mm) / MM_PER_M;
                        Extrinsics { rotation, translation }
                    })
                    .collect()
            }
        }
    }

    /// Builds the ground-truth rig: cameras as specified, projectors placed
    /// once in the pose-0 frame and re-expressed in every posed board frame.
    pub fn build_rig(&self) -> Result<RigConfig, ScenarioError> {
        let transforms = self.board_pose_transforms();
        let mut projectors = Vec::with_capacity(self.rig.projectors.len());
        for (m, p) in self.rig.projectors.iter().enumerate() {
            let look = p.look_at_mm.expect("resolved");
            let target = Pt3::new(look[0] / MM_PER_M, look[1] / MM_PER_M, 0.0);
            let position = Pt3::from(Vec3::from(p.position_m));
            let placed =
                Extrinsics::looking_at(position, target, -Vec3::y()).map_err(|e| {
                    invalid(&format!("rig.projectors[{m}]"), format!("cannot aim at target: {e}"))
                })?;
            let principal = p.principal_px.expect("resolved");
            projectors.push(ProjectorGroundTruth {
                intrinsics: Intrinsics::new(p.focal_px[0], p.focal_px[1], principal[0], principal[1]),
                poses: transforms.iter().map(|t| placed.after(t)).collect(),
                width: p.panel_px[0],
                height: p.panel_px[1],
            });
        }
        Ok(RigConfig {
            board_width: self.rig.board_size_mm[0],
            board_height: self.rig.board_size_mm[1],
            cameras: self.rig.cameras.iter().map(CameraSection::to_spec).collect(),
            projectors,
            ambient_level: self.rig.ambient_level,
            noise_sigma: self.rig.noise_sigma,
            saturation_cap: self.rig.saturation_cap,
            rng_seed: self.rig.rng_seed,
        })
    }

    pub fn pattern_spec(&self) -> Result<PatternSetSpec, ScenarioError> {
        let first = self
            .rig
            .projectors
            .first()
            .ok_or_else(|| invalid("rig.projectors", "need at least one projector"))?;
        let width = self.patterns.width.unwrap_or(first.panel_px[0]);
        let height = self.patterns.height.unwrap_or(first.panel_px[1]);
        Ok(PatternSetSpec::new(
            self.rig.projectors.len() as u32,
            width,
            height,
            self.patterns.line_shift_count,
            self.patterns.include_reference_frames,
        )?)
    }

    /// World positions the session projector visits for one camera: a grid of
    /// viewing directions through the camera's nominal point, covering
    /// `fov_fraction` of its field of view at `distance_m` along its axis.
    pub fn session_positions(&self, camera: usize) -> Vec<Pt3> {
        let cam = &self.rig.cameras[camera];
        let s = &self.compensation.session;
        let nominal = Vec3::new(
            cam.nominal_board_point_mm[0] / MM_PER_M,
            cam.nominal_board_point_mm[1] / MM_PER_M,
            0.0,
        );
        let orientation = cam.orientation();
        let half_tan = |axis: usize| -> f64 {
            s.fov_fraction * cam.sensor_px[axis] as f64 / (2.0 * cam.focal_px[axis])
        };
        let steps = |i: u32, n: u32, extent: f64| -> f64 {
            if n <= 1 { 0.0 } else { extent * (2.0 * i as f64 / (n - 1) as f64 - 1.0) }
        };
        let mut positions = Vec::with_capacity((s.grid[0] * s.grid[1]) as usize);
        for j in 0..s.grid[1] {
            for i in 0..s.grid[0] {
                let device_dir = Vec3::new(
                    steps(i, s.grid[0], half_tan(0)),
                    steps(j, s.grid[1], half_tan(1)),
                    1.0,
                );
                let world_dir = orientation.transpose() * device_dir;
                positions.push(Pt3::from(nominal + world_dir * s.distance_m));
            }
        }
        positions
    }

    /// Rig for the rendered measurement path: the main board and cameras, one
    /// long-focal projector that visits every session position as its "poses",
    /// each time aimed at the camera's nominal point.
    pub fn session_rig(&self, camera: usize) -> Result<RigConfig, ScenarioError> {
        let mut rig = self.build_rig()?;
        let cam = &self.rig.cameras[camera];
        let target = Pt3::new(
            cam.nominal_board_point_mm[0] / MM_PER_M,
            cam.nominal_board_point_mm[1] / MM_PER_M,
            0.0,
        );
        let s = &self.compensation.session;
        let mut poses = Vec::new();
        for (k, position) in self.session_positions(camera).into_iter().enumerate() {
            poses.push(Extrinsics::looking_at(position, target, -Vec3::y()).map_err(|e| {
                invalid(
                    "compensation.session",
                    format!("position {k} for camera {camera} cannot aim at its target: {e}"),
                )
            })?);
        }
        let [w, h] = s.projector_panel_px;
        rig.projectors = vec![ProjectorGroundTruth {
            intrinsics: Intrinsics::new(
                s.projector_focal_px,
                s.projector_focal_px,
                w as f64 / 2.0,
                h as f64 / 2.0,
            ),
            poses,
            width: w,
            height: h,
        }];
        Ok(rig)
    }

    /// Pattern spec for the session rig: one projector on the session panel,
    /// reusing the scenario's line-shift budget.
    pub fn session_pattern_spec(&self) -> Result<PatternSetSpec, ScenarioError> {
        let s = &self.compensation.session;
        Ok(PatternSetSpec::new(
            1,
            s.projector_panel_px[0],
            s.projector_panel_px[1],
            self.patterns.line_shift_count,
            true,
        )?)
    }

    /// Applies the command line's seed override: capture noise and generated
    /// board poses re-seed, algorithmic seeds (RANSAC) stay with the file.
    pub fn override_seed(&mut self, seed: u64) {
        self.rig.rng_seed = seed;
        self.board_poses.seed = seed;
    }
}

impl CameraSection {
    fn orientation(&self) -> crate::geom::Mat3 {
        let axis = Vec3::from(self.orientation_axis_angle_deg) * (std::f64::consts::PI / 180.0);
        rodrigues(&axis)
    }

    fn to_spec(&self) -> EmbeddedCameraSpec {
        let principal = self.principal_px.expect("resolved");
        EmbeddedCameraSpec {
            nominal_board_point: Vec2::new(
                self.nominal_board_point_mm[0],
                self.nominal_board_point_mm[1],
            ),
            true_offset: Vec3::from(self.true_offset_mm),
            orientation: self.orientation(),
            intrinsics: Intrinsics::new(
                self.focal_px[0],
                self.focal_px[1],
                principal[0],
                principal[1],
            ),
            sensor_width: self.sensor_px[0],
            sensor_height: self.sensor_px[1],
            psf_sigma: self.psf_sigma_px,
            gain: self.gain,
            falloff_half_angle_x: self.falloff_half_angle_deg[0],
            falloff_half_angle_y: self.falloff_half_angle_deg[1],
        }
    }
}
