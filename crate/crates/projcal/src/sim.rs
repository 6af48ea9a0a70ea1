//! Deterministic ray-optics rig simulator.
//!
//! The simulated scene is a planar calibration board with cameras embedded in
//! it, illuminated by projectors that all play the same pattern sequence. Image
//! formation per projector and camera follows a single ray through both optical
//! centers: the projector pixel `p` that contains the camera's optical center
//! is looked up in the current frame, and the resulting intensity lands on the
//! camera sensor as one blob at the pixel `c` that images the projector's
//! optical center. The simulator therefore produces exactly one blob per
//! visible projector per camera, attenuated by the camera's angular falloff
//! and the configured gain, blurred by a Gaussian PSF, on top of ambient light
//! and per-capture Gaussian noise.
//!
//! Coordinate conventions: the board frame of the current pose is the world
//! frame. The board occupies [0, board_width] × [0, board_height] millimeters
//! at z = 0 with normal +z; 3D is in meters. Cameras ride the board, so their
//! placement is pose-independent; projector extrinsics are given per pose.
//!
//! Everything the estimation pipeline later recovers is also available here as
//! ground truth, through [`ground_truth_correspondence`] and the stored
//! [`ProjectorGroundTruth`] parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, PatternFrame, PatternSet};
use crate::geom::{
    project, ray_plane_intersect, Extrinsics, GeomError, Homography2D, Intrinsics, Mat3, Plane,
    Pt3, Ray, Vec2, Vec3,
};
use crate::raster::Raster;

/// Attenuations below this count as "projector not visible from the camera".
pub const VISIBILITY_FLOOR: f64 = 0.01;

pub const MM_PER_M: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid rig: {reason}")]
    InvalidRig { reason: String },
    #[error("{what} index {index} out of range (count {count})")]
    BadIndex { what: &'static str, index: usize, count: usize },
    #[error("projector {projector}'s optical axis does not hit the board plane")]
    ProjectorBehindBoard { projector: usize },
    #[error("projector {projector} is not visible from camera {camera}")]
    NotVisible { projector: usize, camera: usize },
    #[error("projector {projector} panel {got_w}x{got_h} does not match pattern set {want_w}x{want_h}")]
    PanelMismatch { projector: usize, got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// A camera mounted in the board surface.
///
/// `nominal_board_point` is where the rig believes the optical center sits;
/// `true_offset` is the actual displacement from that point (the misalignment
/// the pipeline must compensate). Both are in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedCameraSpec {
    pub nominal_board_point: Vec2,
    pub true_offset: Vec3,
    /// Rotation of the device frame relative to the board-normal-aligned
    /// mounting (identity = optical axis along +z).
    pub orientation: Mat3,
    pub intrinsics: Intrinsics,
    pub sensor_width: u32,
    pub sensor_height: u32,
    /// Gaussian defocus blur in sensor pixels; 0 disables blur.
    pub psf_sigma: f64,
    /// Light attenuation of the mounted ND filter, in (0, 1].
    pub gain: f64,
    /// Incidence angle (degrees) at which sensitivity halves, per device axis.
    pub falloff_half_angle_x: f64,
    pub falloff_half_angle_y: f64,
}

impl EmbeddedCameraSpec {
    /// True optical center in board-frame meters.
    pub fn optical_center(&self) -> Pt3 {
        Pt3::new(
            (self.nominal_board_point.x + self.true_offset.x) / MM_PER_M,
            (self.nominal_board_point.y + self.true_offset.y) / MM_PER_M,
            self.true_offset.z / MM_PER_M,
        )
    }

    pub fn extrinsics(&self) -> Extrinsics {
        let c = self.optical_center();
        Extrinsics { rotation: self.orientation, translation: -(self.orientation * c.coords) }
    }
}

/// Ground-truth parameters of one projector, per board pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorGroundTruth {
    pub intrinsics: Intrinsics,
    /// Board-frame extrinsics, one entry per board pose.
    pub poses: Vec<Extrinsics>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub board_width: f64,
    pub board_height: f64,
    pub cameras: Vec<EmbeddedCameraSpec>,
    pub projectors: Vec<ProjectorGroundTruth>,
    pub ambient_level: f64,
    pub noise_sigma: f64,
    pub saturation_cap: f64,
    pub rng_seed: u64,
}

impl RigConfig {
    pub fn num_poses(&self) -> usize {
        self.projectors.first().map_or(0, |p| p.poses.len())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |reason: String| Err(SimError::InvalidRig { reason });
        if self.cameras.len() < 4 {
            return fail(format!("need at least 4 cameras, got {}", self.cameras.len()));
        }
        if self.projectors.is_empty() {
            return fail("need at least one projector".into());
        }
        if !(self.board_width > 0.0 && self.board_height > 0.0) {
            return fail("board dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ambient_level) {
            return fail(format!("ambient_level {} outside [0, 1)", self.ambient_level));
        }
        if self.noise_sigma < 0.0 {
            return fail("noise_sigma must be nonnegative".into());
        }
        if self.saturation_cap <= 0.0 {
            return fail("saturation_cap must be positive".into());
        }
        let poses = self.num_poses();
        if poses == 0 {
            return fail("projectors need at least one pose".into());
        }
        for (m, p) in self.projectors.iter().enumerate() {
            if p.poses.len() != poses {
                return fail(format!("projector {m} has {} poses, expected {poses}", p.poses.len()));
            }
            if p.width < 2 || p.height < 2 {
                return fail(format!("projector {m} panel too small"));
            }
            p.intrinsics.validate()?;
        }
        for (n, cam) in self.cameras.iter().enumerate() {
            cam.intrinsics.validate()?;
            if cam.sensor_width < 16 || cam.sensor_height < 16 {
                return fail(format!("camera {n} sensor below 16x16"));
            }
            if cam.psf_sigma < 0.0 {
                return fail(format!("camera {n} psf_sigma negative"));
            }
            if !(cam.gain > 0.0 && cam.gain <= 1.0) {
                return fail(format!("camera {n} gain {} outside (0, 1]", cam.gain));
            }
            if cam.falloff_half_angle_x <= 0.0 || cam.falloff_half_angle_y <= 0.0 {
                return fail(format!("camera {n} falloff half-angles must be positive"));
            }
            let p = cam.nominal_board_point;
            if !(0.0..=self.board_width).contains(&p.x) || !(0.0..=self.board_height).contains(&p.y)
            {
                return fail(format!("camera {n} nominal point ({}, {}) off the board", p.x, p.y));
            }
        }
        Ok(())
    }
}

/// One camera's frames for one pose, aligned with the pattern set.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureStack {
    pub camera: usize,
    pub pose: usize,
    pub frames: Vec<Raster>,
}

/// Per-axis raised-cosine sensitivity profile: 1 at normal incidence, 0.5 at
/// the half-angle, 0 from twice the half-angle on. Axes combine
/// multiplicatively.
pub fn falloff(angle_x_deg: f64, angle_y_deg: f64, spec: &EmbeddedCameraSpec) -> f64 {
    axis_falloff(angle_x_deg.abs(), spec.falloff_half_angle_x)
        * axis_falloff(angle_y_deg.abs(), spec.falloff_half_angle_y)
}

fn axis_falloff(angle: f64, half_angle: f64) -> f64 {
    if angle >= 2.0 * half_angle {
        0.0
    } else {
        let c = (std::f64::consts::PI * angle / (4.0 * half_angle)).cos();
        c * c
    }
}

/// Geometry of one projector as seen by one camera: the projector pixel
/// containing the camera's optical center, the camera pixel imaging the
/// projector's optical center, and the falloff attenuation.
#[derive(Debug, Clone, Copy)]
pub struct ProjectorView {
    pub projector_pixel: Vec2,
    pub camera_pixel: Vec2,
    pub attenuation: f64,
}

fn axis_hits_board(extr: &Extrinsics) -> bool {
    let origin = extr.optical_center();
    let axis_world = extr.rotation.transpose() * Vec3::z();
    match Ray::new(origin, axis_world) {
        Ok(ray) => ray_plane_intersect(&ray, &Plane::board()).is_ok(),
        Err(_) => false,
    }
}

/// Computes the view geometry, or `None` when no light can travel the path
/// (either center behind the other device, ray outside the projector panel,
/// or attenuation exactly zero).
fn projector_view(
    rig: &RigConfig,
    pose: usize,
    m: usize,
    n: usize,
) -> Result<Option<ProjectorView>, SimError> {
    let proj = &rig.projectors[m];
    let cam = &rig.cameras[n];
    let proj_extr = &proj.poses[pose];
    if !axis_hits_board(proj_extr) {
        return Err(SimError::ProjectorBehindBoard { projector: m });
    }
    let cam_center = cam.optical_center();
    let proj_center = proj_extr.optical_center();

    let projector_pixel = match project(&proj.intrinsics, proj_extr, &cam_center) {
        Ok(p) => p,
        Err(GeomError::DepthNonPositive { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let (px, py) = (projector_pixel.x.round(), projector_pixel.y.round());
    if px < 0.0 || py < 0.0 || px >= f64::from(proj.width) || py >= f64::from(proj.height) {
        return Ok(None);
    }
    let cam_extr = cam.extrinsics();
    let camera_pixel = match project(&cam.intrinsics, &cam_extr, &proj_center) {
        Ok(c) => c,
        Err(GeomError::DepthNonPositive { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };

    let dir_dev = cam.orientation * (proj_center - cam_center);
    if dir_dev.z <= 0.0 {
        return Ok(None);
    }
    let angle_x = dir_dev.x.abs().atan2(dir_dev.z).to_degrees();
    let angle_y = dir_dev.y.abs().atan2(dir_dev.z).to_degrees();
    let attenuation = falloff(angle_x, angle_y, cam);
    if attenuation <= 0.0 {
        return Ok(None);
    }
    Ok(Some(ProjectorView { projector_pixel, camera_pixel, attenuation }))
}

/// Splats a peak-normalized Gaussian blob; `sigma = 0` degenerates to the
/// nearest pixel. Support is truncated at radius 3σ.
fn splat_blob(raster: &mut Raster, cx: f64, cy: f64, amplitude: f64, sigma: f64) {
    if sigma <= 0.0 {
        let (x, y) = (cx.round() as i64, cy.round() as i64);
        if raster.contains(x, y) {
            raster.add(x as u32, y as u32, amplitude);
        }
        return;
    }
    let radius = 3.0 * sigma;
    let r2 = radius * radius;
    let x0 = (cx - radius).floor().max(0.0) as i64;
    let x1 = (cx + radius).ceil().min(f64::from(raster.width()) - 1.0) as i64;
    let y0 = (cy - radius).floor().max(0.0) as i64;
    let y1 = (cy + radius).ceil().min(f64::from(raster.height()) - 1.0) as i64;
    if x1 < x0 || y1 < y0 {
        return;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in y0..=y1 {
        let dy = y as f64 - cy;
        for x in x0..=x1 {
            let dx = x as f64 - cx;
            let d2 = dx * dx + dy * dy;
            if d2 <= r2 {
                raster.add(x as u32, y as u32, amplitude * (-d2 * inv).exp());
            }
        }
    }
}

/// RNG for one (pose, camera, frame) capture; independent of iteration order.
fn capture_rng(seed: u64, pose: usize, camera: usize, frame: usize) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((pose as u64).to_le_bytes());
    hasher.update((camera as u64).to_le_bytes());
    hasher.update((frame as u64).to_le_bytes());
    ChaCha12Rng::from_seed(hasher.finalize().into())
}

fn check_indices(rig: &RigConfig, pose: usize, camera: Option<usize>, projector: Option<usize>) -> Result<(), SimError> {
    let poses = rig.num_poses();
    if pose >= poses {
        return Err(SimError::BadIndex { what: "pose", index: pose, count: poses });
    }
    if let Some(n) = camera {
        if n >= rig.cameras.len() {
            return Err(SimError::BadIndex { what: "camera", index: n, count: rig.cameras.len() });
        }
    }
    if let Some(m) = projector {
        if m >= rig.projectors.len() {
            return Err(SimError::BadIndex {
                what: "projector",
                index: m,
                count: rig.projectors.len(),
            });
        }
    }
    Ok(())
}

/// Renders every pattern frame as seen by camera `n` at board pose `pose`,
/// with all projectors lit simultaneously.
pub fn capture_stack(
    rig: &RigConfig,
    patterns: &PatternSet,
    pose: usize,
    camera: usize,
) -> Result<CaptureStack, SimError> {
    check_indices(rig, pose, Some(camera), None)?;
    let spec = patterns.spec();
    if rig.projectors.len() != spec.num_projectors as usize {
        return Err(SimError::InvalidRig {
            reason: format!(
                "rig has {} projectors but the pattern set encodes {}",
                rig.projectors.len(),
                spec.num_projectors
            ),
        });
    }
    for (m, p) in rig.projectors.iter().enumerate() {
        if p.width != spec.projector_width || p.height != spec.projector_height {
            return Err(SimError::PanelMismatch {
                projector: m,
                got_w: p.width,
                got_h: p.height,
                want_w: spec.projector_width,
                want_h: spec.projector_height,
            });
        }
    }

    let cam = &rig.cameras[camera];
    let mut views: Vec<(u32, ProjectorView)> = Vec::with_capacity(rig.projectors.len());
    for m in 0..rig.projectors.len() {
        if let Some(view) = projector_view(rig, pose, m, camera)? {
            views.push((m as u32, view));
        } else {
            log::debug!("projector {m} invisible from camera {camera} at pose {pose}");
        }
    }

    let mut frames = Vec::with_capacity(patterns.len());
    for (fi, frame) in patterns.frames().iter().enumerate() {
        let mut raster = Raster::filled(cam.sensor_width, cam.sensor_height, rig.ambient_level);
        for (m, view) in &views {
            let p = view.projector_pixel;
            let center = (p.x.round(), p.y.round());
            let value =
                patterns.frame_intensity_footprint(frame, *m, (p.x, p.y), Some(center))?;
            let amplitude = value * cam.gain * view.attenuation;
            if amplitude > 0.0 {
                splat_blob(&mut raster, view.camera_pixel.x, view.camera_pixel.y, amplitude, cam.psf_sigma);
            }
        }
        if rig.noise_sigma > 0.0 {
            let mut rng = capture_rng(rig.rng_seed, pose, camera, fi);
            let normal = Normal::new(0.0, rig.noise_sigma).expect("validated sigma");
            for v in raster.pixels_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        let cap = rig.saturation_cap;
        raster.map_in_place(|v| v.clamp(0.0, cap));
        frames.push(raster);
    }
    Ok(CaptureStack { camera, pose, frames })
}

/// Everything the pipeline is supposed to recover for one (projector, camera)
/// pair: exact sub-pixel p, c, and the board intersection of the shared ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthCorrespondence {
    pub projector_pixel: Vec2,
    pub camera_pixel: Vec2,
    /// Board-plane intersection of the projector→camera ray, in millimeters.
    pub board_point: Vec2,
}

pub fn ground_truth_correspondence(
    rig: &RigConfig,
    pose: usize,
    projector: usize,
    camera: usize,
) -> Result<GroundTruthCorrespondence, SimError> {
    check_indices(rig, pose, Some(camera), Some(projector))?;
    let proj = &rig.projectors[projector];
    let cam = &rig.cameras[camera];
    let proj_extr = &proj.poses[pose];
    let cam_center = cam.optical_center();
    let proj_center = proj_extr.optical_center();

    let view = projector_view(rig, pose, projector, camera)?
        .filter(|v| v.attenuation >= VISIBILITY_FLOOR)
        .ok_or(SimError::NotVisible { projector, camera })?;

    let ray = Ray::new(proj_center, cam_center - proj_center)?;
    let hit = ray_plane_intersect(&ray, &Plane::board())?;
    Ok(GroundTruthCorrespondence {
        projector_pixel: view.projector_pixel,
        camera_pixel: view.camera_pixel,
        board_point: Vec2::new(hit.x * MM_PER_M, hit.y * MM_PER_M),
    })
}

/// Orthographic raster of a board-plane region, carrying its own placement.
#[derive(Debug, Clone, PartialEq)]
pub struct BoardRaster {
    pub raster: Raster,
    /// Board coordinates (mm) of the raster's (0, 0) pixel corner.
    pub origin_mm: Vec2,
    /// Pixels per millimeter.
    pub resolution: f64,
}

impl BoardRaster {
    /// Board point (mm) at the center of raster pixel (x, y).
    pub fn pixel_center_mm(&self, x: f64, y: f64) -> Vec2 {
        Vec2::new(
            self.origin_mm.x + (x + 0.5) / self.resolution,
            self.origin_mm.y + (y + 0.5) / self.resolution,
        )
    }
}

/// Plane-induced map from board millimeters to projector pixels at one pose:
/// q ~ K [r1/1000 | r2/1000 | t] (x, y, 1)ᵀ. Columns divide by 1000 because
/// projector extrinsics are in meters while board coordinates are in
/// millimeters.
pub fn board_to_projector(
    rig: &RigConfig,
    pose: usize,
    projector: usize,
) -> Result<Homography2D, SimError> {
    check_indices(rig, pose, None, Some(projector))?;
    let proj = &rig.projectors[projector];
    let extr = &proj.poses[pose];
    let k = proj.intrinsics.matrix();
    let r = extr.rotation;
    Ok(Homography2D::new(k * Mat3::from_columns(&[
        r.column(0) / MM_PER_M,
        r.column(1) / MM_PER_M,
        extr.translation.column(0).into_owned(),
    ])))
}

/// Renders what projector `m` paints onto a rectangular board window
/// (orthographic, `resolution` px/mm). Line frames need `line_center` (in
/// projector pixels) to place the line.
pub fn render_board_window(
    rig: &RigConfig,
    pose: usize,
    projector: usize,
    frame: &PatternFrame,
    resolution: f64,
    line_center: Option<(f64, f64)>,
    origin_mm: Vec2,
    window_w_mm: f64,
    window_h_mm: f64,
) -> Result<BoardRaster, SimError> {
    check_indices(rig, pose, None, Some(projector))?;
    let proj = &rig.projectors[projector];
    let extr = &proj.poses[pose];
    if !axis_hits_board(extr) {
        return Err(SimError::ProjectorBehindBoard { projector });
    }
    let h = board_to_projector(rig, pose, projector)?.matrix;

    let width = (window_w_mm * resolution).round().max(1.0) as u32;
    let height = (window_h_mm * resolution).round().max(1.0) as u32;
    let mut out = BoardRaster { raster: Raster::new(width, height), origin_mm, resolution };
    for y in 0..height {
        for x in 0..width {
            let b = out.pixel_center_mm(f64::from(x), f64::from(y));
            let q = h * Vec3::new(b.x, b.y, 1.0);
            if q.z <= crate::geom::MIN_DEPTH {
                continue;
            }
            let (u, v) = ((q.x / q.z).round(), (q.y / q.z).round());
            if u < 0.0 || v < 0.0 || u >= f64::from(proj.width) || v >= f64::from(proj.height) {
                continue;
            }
            let value = frame.value_at(projector as u32, (u as u32, v as u32), line_center)?;
            if value > 0.0 {
                out.raster.set(x, y, value);
            }
        }
    }
    Ok(out)
}

/// Full-board footprint of one frame; see [`render_board_window`].
pub fn render_board_footprint(
    rig: &RigConfig,
    pose: usize,
    projector: usize,
    frame: &PatternFrame,
    resolution: f64,
    line_center: Option<(f64, f64)>,
) -> Result<BoardRaster, SimError> {
    render_board_window(
        rig,
        pose,
        projector,
        frame,
        resolution,
        line_center,
        Vec2::zeros(),
        rig.board_width,
        rig.board_height,
    )
}

/// Generates board poses around the identity: random in-plane tilt axis,
/// tilt angle up to `tilt_max_deg`, and a distance change along the board
/// normal of up to ±`distance_jitter`·`nominal_distance_m`. The rotation
/// pivots about the board center so the board stays in frame.
pub fn generate_board_poses(
    count: usize,
    tilt_max_deg: f64,
    distance_jitter: f64,
    nominal_distance_m: f64,
    board_width_mm: f64,
    board_height_mm: f64,
    seed: u64,
) -> Vec<Extrinsics> {
    use rand::RngExt;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let center = Vec3::new(board_width_mm / (2.0 * MM_PER_M), board_height_mm / (2.0 * MM_PER_M), 0.0);
    (0..count)
        .map(|_| {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            // Sampling away from zero tilt keeps pose sets well-conditioned
            // for planar calibration.
            let tilt = rng.random_range(0.25 * tilt_max_deg..=tilt_max_deg).to_radians();
            let axis = Vec3::new(phi.cos(), phi.sin(), 0.0);
            let rotation = crate::geom::rodrigues(&(axis * tilt));
            let dz = rng.random_range(-distance_jitter..=distance_jitter) * nominal_distance_m;
            let translation = center - rotation * center + Vec3::new(0.0, 0.0, dz);
            Extrinsics { rotation, translation }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{build_pattern_set, PatternSetSpec};
    use approx::assert_abs_diff_eq;

    fn simple_camera(nominal: Vec2, offset: Vec3) -> EmbeddedCameraSpec {
        EmbeddedCameraSpec {
            nominal_board_point: nominal,
            true_offset: offset,
            orientation: Mat3::identity(),
            intrinsics: Intrinsics::new(60.0, 60.0, 16.0, 12.0),
            sensor_width: 33,
            sensor_height: 25,
            psf_sigma: 0.0,
            gain: 1.0,
            falloff_half_angle_x: 40.0,
            falloff_half_angle_y: 32.0,
        }
    }

    fn aimed_projector(position: Pt3, target_mm: Vec2, poses: usize) -> ProjectorGroundTruth {
        let target = Pt3::new(target_mm.x / MM_PER_M, target_mm.y / MM_PER_M, 0.0);
        let extr = Extrinsics::looking_at(position, target, -Vec3::y()).unwrap();
        ProjectorGroundTruth {
            intrinsics: Intrinsics::new(300.0, 300.0, 32.0, 24.0),
            poses: vec![extr; poses],
            width: 64,
            height: 48,
        }
    }

    fn four_corner_cameras() -> Vec<EmbeddedCameraSpec> {
        [(60.0, 40.0), (140.0, 40.0), (60.0, 100.0), (140.0, 100.0)]
            .into_iter()
            .map(|(x, y)| simple_camera(Vec2::new(x, y), Vec3::zeros()))
            .collect()
    }

    fn basic_rig() -> RigConfig {
        let cam_target = Vec2::new(100.0, 70.0);
        RigConfig {
            board_width: 200.0,
            board_height: 140.0,
            cameras: four_corner_cameras(),
            projectors: vec![
                aimed_projector(Pt3::new(0.1, 0.07, 1.0), cam_target, 1),
                aimed_projector(Pt3::new(0.25, 0.12, 1.1), cam_target, 1),
            ],
            ambient_level: 0.0,
            noise_sigma: 0.0,
            saturation_cap: 1.0,
            rng_seed: 11,
        }
    }

    fn patterns_for(rig: &RigConfig, l: u32) -> crate::codec::PatternSet {
        let spec = PatternSetSpec::new(
            rig.projectors.len() as u32,
            rig.projectors[0].width,
            rig.projectors[0].height,
            l,
            true,
        )
        .unwrap();
        build_pattern_set(&spec).unwrap()
    }

    #[test]
    fn on_axis_projector_lights_the_principal_point() {
        let mut rig = basic_rig();
        rig.projectors.truncate(1);
        // Directly above camera 0: the camera sees it at the principal point.
        rig.projectors[0] = aimed_projector(Pt3::new(0.06, 0.04, 1.2), Vec2::new(60.0, 40.0), 1);
        let patterns = patterns_for(&rig, 0);
        let white = PatternFrame::White;
        let set = build_pattern_set(
            &PatternSetSpec::new(1, 64, 48, 0, true).unwrap(),
        )
        .unwrap();
        assert_eq!(set.frames()[0], white);
        let stack = capture_stack(&rig, &patterns, 0, 0).unwrap();
        let frame = &stack.frames[0];
        let lit: Vec<(u32, u32, f64)> = (0..frame.height())
            .flat_map(|y| (0..frame.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| frame.get(x, y) > 0.0)
            .map(|(x, y)| (x, y, frame.get(x, y)))
            .collect();
        assert_eq!(lit.len(), 1);
        assert_eq!((lit[0].0, lit[0].1), (16, 12));
        assert_abs_diff_eq!(lit[0].2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn black_frame_shows_ambient_everywhere() {
        let mut rig = basic_rig();
        rig.ambient_level = 0.3;
        let patterns = patterns_for(&rig, 0);
        let stack = capture_stack(&rig, &patterns, 0, 1).unwrap();
        let black = &stack.frames[1];
        for &v in black.data() {
            assert_abs_diff_eq!(v, 0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn captures_are_deterministic() {
        let mut rig = basic_rig();
        rig.noise_sigma = 0.02;
        rig.ambient_level = 0.1;
        let patterns = patterns_for(&rig, 2);
        let a = capture_stack(&rig, &patterns, 0, 2).unwrap();
        let b = capture_stack(&rig, &patterns, 0, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn superposition_of_single_projector_captures() {
        let mut rig = basic_rig();
        rig.ambient_level = 0.2;
        for cam in &mut rig.cameras {
            cam.psf_sigma = 1.5;
            cam.gain = 0.3;
        }
        let patterns = patterns_for(&rig, 0);
        let multi = capture_stack(&rig, &patterns, 0, 0).unwrap();

        let mut singles = Vec::new();
        for m in 0..2 {
            let mut solo = rig.clone();
            solo.projectors = vec![rig.projectors[m].clone()];
            let spec = PatternSetSpec::new(1, 64, 48, 0, true).unwrap();
            let set = build_pattern_set(&spec).unwrap();
            singles.push(capture_stack(&solo, &set, 0, 0).unwrap());
        }
        // Single-projector sets lack ID frames; compare on the shared
        // reference and Gray frames by matching frame kinds.
        let multi_set = patterns_for(&rig, 0);
        let solo_set = build_pattern_set(&PatternSetSpec::new(1, 64, 48, 0, true).unwrap()).unwrap();
        for (si, sf) in solo_set.frames().iter().enumerate() {
            let mi = multi_set.frames().iter().position(|f| f == sf).unwrap();
            let a = &multi.frames[mi];
            for (idx, &v) in a.data().iter().enumerate() {
                let expected =
                    singles[0].frames[si].data()[idx] + singles[1].frames[si].data()[idx] - 0.2;
                assert!((v - expected).abs() < 1e-12, "frame {mi} pixel {idx}");
            }
        }
    }

    #[test]
    fn falloff_profile_hits_its_anchors() {
        let cam = simple_camera(Vec2::new(10.0, 10.0), Vec3::zeros());
        assert_abs_diff_eq!(falloff(0.0, 0.0, &cam), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(falloff(40.0, 0.0, &cam), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(falloff(0.0, 32.0, &cam), 0.5, epsilon = 1e-12);
        assert!(falloff(80.0, 0.0, &cam) < 0.1);
        assert_abs_diff_eq!(falloff(40.0, 32.0, &cam), 0.25, epsilon = 1e-12);
        // Monotone decrease along each axis.
        let mut last = 2.0;
        for a in 0..=80 {
            let v = falloff(f64::from(a), 0.0, &cam);
            assert!(v <= last + 1e-15);
            last = v;
        }
    }

    #[test]
    fn zero_offset_cameras_see_rays_through_their_nominal_point() {
        let rig = basic_rig();
        for n in 0..rig.cameras.len() {
            for m in 0..rig.projectors.len() {
                let gt = ground_truth_correspondence(&rig, 0, m, n).unwrap();
                let nominal = rig.cameras[n].nominal_board_point;
                assert_abs_diff_eq!(gt.board_point, nominal, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn offset_camera_sees_projector_dependent_board_points() {
        let mut rig = basic_rig();
        rig.cameras[0].true_offset = Vec3::new(0.0, 0.0, 5.0);
        let a = ground_truth_correspondence(&rig, 0, 0, 0).unwrap();
        let b = ground_truth_correspondence(&rig, 0, 1, 0).unwrap();
        let gap = (a.board_point - b.board_point).norm();
        assert!(gap > 0.1, "distinct projectors must land at distinct points, gap {gap}");
    }

    #[test]
    fn blob_energy_is_local_and_peak_normalized() {
        let mut raster = Raster::new(64, 64);
        let (cx, cy, sigma, amp) = (31.3, 30.7, 2.0, 0.8);
        splat_blob(&mut raster, cx, cy, amp, sigma);
        let mut inside = 0.0;
        let mut outside = 0.0;
        for y in 0..64 {
            for x in 0..64 {
                let d2 = (f64::from(x) - cx).powi(2) + (f64::from(y) - cy).powi(2);
                if d2 <= (3.0 * sigma).powi(2) {
                    inside += raster.get(x, y);
                } else {
                    outside += raster.get(x, y);
                }
            }
        }
        assert_eq!(outside, 0.0);
        // Discrete sum tracks the truncated Gaussian integral.
        let expected = amp * 2.0 * std::f64::consts::PI * sigma * sigma * (1.0 - (-4.5f64).exp());
        assert!((inside - expected).abs() / expected < 0.02, "energy {inside} vs {expected}");
        // Peak value is the amplitude (within sub-pixel center offset).
        assert!(raster.get(31, 31) > 0.9 * amp);
    }

    #[test]
    fn white_footprint_is_binary_with_a_lit_interior() {
        let rig = basic_rig();
        let fp = render_board_footprint(&rig, 0, 0, &PatternFrame::White, 2.0, None).unwrap();
        let lit = fp.raster.data().iter().filter(|&&v| v == 1.0).count();
        let zeros = fp.raster.data().iter().filter(|&&v| v == 0.0).count();
        assert!(lit > 100, "footprint should cover part of the board, lit = {lit}");
        assert_eq!(lit + zeros, fp.raster.data().len());
    }

    #[test]
    fn plane_map_agrees_with_full_projection() {
        let rig = basic_rig();
        let h = board_to_projector(&rig, 0, 1).unwrap();
        let proj = &rig.projectors[1];
        for (x, y) in [(10.0, 15.0), (100.0, 70.0), (180.0, 120.0)] {
            let via_map = h.apply(Vec2::new(x, y)).unwrap();
            let world = Pt3::new(x / MM_PER_M, y / MM_PER_M, 0.0);
            let direct = project(&proj.intrinsics, &proj.poses[0], &world).unwrap();
            assert_abs_diff_eq!(via_map.x, direct.x, epsilon = 1e-9);
            assert_abs_diff_eq!(via_map.y, direct.y, epsilon = 1e-9);
        }
    }

    #[test]
    fn oblique_projector_lines_stay_straight() {
        let mut rig = basic_rig();
        // Strongly oblique placement.
        rig.projectors[0].poses[0] = Extrinsics::looking_at(
            Pt3::new(-0.3, 0.02, 0.8),
            Pt3::new(0.1, 0.07, 0.0),
            -Vec3::y(),
        )
        .unwrap();
        let res = 4.0;
        let fp = render_board_footprint(
            &rig,
            0,
            0,
            &PatternFrame::LineShiftX(0),
            res,
            Some((32.0, 24.0)),
        )
        .unwrap();
        // Column centroid per raster row, then straight-line residuals.
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for y in 0..fp.raster.height() {
            let mut sum = 0.0;
            let mut cnt = 0.0;
            for x in 0..fp.raster.width() {
                if fp.raster.get(x, y) > 0.0 {
                    sum += f64::from(x);
                    cnt += 1.0;
                }
            }
            if cnt > 0.0 {
                pts.push((f64::from(y), sum / cnt));
            }
        }
        assert!(pts.len() > 20, "line too short: {} rows", pts.len());
        let n = pts.len() as f64;
        let (sy, sx) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (my, mx) = (sy / n, sx / n);
        let (mut num, mut den) = (0.0, 0.0);
        for (y, x) in &pts {
            num += (y - my) * (x - mx);
            den += (y - my) * (y - my);
        }
        let slope = num / den;
        let max_resid = pts
            .iter()
            .map(|(y, x)| (x - (mx + slope * (y - my))).abs())
            .fold(0.0f64, f64::max);
        assert!(max_resid < 0.5, "line bends by {max_resid} raster px");
    }

    #[test]
    fn sideways_projector_is_rejected() {
        let mut rig = basic_rig();
        // Optical axis parallel to the board plane.
        rig.projectors[0].poses[0] = Extrinsics {
            rotation: crate::geom::rodrigues(&Vec3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0)),
            translation: Vec3::new(0.0, 0.0, -1.0),
        };
        let patterns = patterns_for(&rig, 0);
        assert!(matches!(
            capture_stack(&rig, &patterns, 0, 0),
            Err(SimError::ProjectorBehindBoard { projector: 0 })
        ));
    }

    #[test]
    fn generated_poses_are_valid_rotations_with_bounded_tilt() {
        let poses = generate_board_poses(8, 20.0, 0.15, 1.0, 200.0, 140.0, 5);
        assert_eq!(poses.len(), 8);
        let center = Vec3::new(0.1, 0.07, 0.0);
        for p in &poses {
            assert!(Extrinsics::new(p.rotation, p.translation).is_ok());
            let tilt = (p.rotation * Vec3::z()).dot(&Vec3::z()).clamp(-1.0, 1.0).acos();
            assert!(tilt.to_degrees() <= 20.0 + 1e-9);
            // The pivot is the board center, which only moves along z.
            let moved = p.rotation * center + p.translation;
            assert!((moved - center).xy().norm() < 1e-12);
            assert!((moved - center).z.abs() <= 0.15 + 1e-9);
        }
        // Determinism.
        let again = generate_board_poses(8, 20.0, 0.15, 1.0, 200.0, 140.0, 5);
        assert_eq!(poses, again);
    }

    #[test]
    fn rig_validation_catches_bad_configs() {
        let mut rig = basic_rig();
        assert!(rig.validate().is_ok());
        rig.cameras.truncate(3);
        assert!(rig.validate().is_err());
        let mut rig = basic_rig();
        rig.cameras[0].nominal_board_point = Vec2::new(-5.0, 10.0);
        assert!(rig.validate().is_err());
        let mut rig = basic_rig();
        rig.ambient_level = 1.0;
        assert!(rig.validate().is_err());
        let mut rig = basic_rig();
        rig.cameras[1].gain = 0.0;
        assert!(rig.validate().is_err());
    }
}
