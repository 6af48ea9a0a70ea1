//! Camera misalignment compensation: measures where each projector ray
//! actually crosses the board by rendering orthogonal panel lines, fits the
//! camera-pixel to board-point homography robustly, and applies it to
//! correspondences.
//!
//! An embedded camera whose optical center sits exactly on the board plane
//! receives every projector ray at its nominal board position. A displaced
//! center shifts the crossing point per projector; because the displacement
//! acts through a pinhole onto a plane, the pixel-to-board map stays
//! projective and a homography absorbs it exactly.

use nalgebra as na;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{dlt, CalibError};
use crate::codec::{DecodeParams, PatternFrame, PatternSet};
use crate::decode::{extract_correspondences, Correspondence, DecodeError};
use crate::geom::{ray_plane_intersect, Homography2D, Plane, Pt3, Ray};
use crate::raster::Raster;
use crate::sim::{
    capture_stack, render_board_window, BoardRaster, RigConfig, SimError, MM_PER_M,
};

type Vec2 = na::Vector2<f64>;

/// Two measured lines closer than this in angle carry no usable intersection.
pub const MEASURED_LINE_ANGLE_TOL: f64 = 1e-6;
/// General intersection degeneracy bound on |sin(theta1 - theta2)|.
pub const LINE_PARALLEL_TOL: f64 = 1e-9;
/// Accumulator peaks supported by fewer votes than this are noise.
pub const HOUGH_MIN_VOTES: usize = 10;

#[derive(Debug, Error)]
pub enum CompensateError {
    #[error("raster has no light to binarize")]
    AllDark,
    #[error("no line found: strongest accumulator peak has {votes} votes")]
    NoLineFound { votes: usize },
    #[error("lines are parallel within tolerance")]
    LinesParallel,
    #[error("projector {projector} was not decoded by camera {camera}")]
    ProjectorNotDecoded { projector: usize, camera: usize },
    #[error("session has {got} samples, need at least 4")]
    InsufficientPoints { got: usize },
    #[error("every minimal sample set was degenerate")]
    DegenerateConfiguration,
    #[error("only {inliers} of {total} samples fit a homography, need {needed}")]
    TooFewInliers { inliers: usize, needed: usize, total: usize },
    #[error("map fitted for camera {expected}, got a correspondence from camera {got}")]
    CameraMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Calib(#[from] Box<CalibError>),
}

/// Line in normal form: x cos(theta) + y sin(theta) = rho, theta in [0, pi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub rho: f64,
    pub theta: f64,
}

impl LineParams {
    /// Folds theta into [0, pi), negating rho when crossing the boundary.
    pub fn canonical(mut self) -> Self {
        while self.theta < 0.0 {
            self.theta += std::f64::consts::PI;
            self.rho = -self.rho;
        }
        while self.theta >= std::f64::consts::PI {
            self.theta -= std::f64::consts::PI;
            self.rho = -self.rho;
        }
        self
    }
}

/// One projector position's measurement for a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationSample {
    /// World-frame projector optical center, meters.
    pub projector_position: Pt3,
    /// Blob centroid on the camera sensor.
    pub camera_pixel: Vec2,
    /// Measured board-plane crossing of the ray, millimeters.
    pub board_point: Vec2,
}

/// All measurements for one camera.
#[derive(Debug, Clone)]
pub struct CompensationSession {
    pub camera: usize,
    pub samples: Vec<CompensationSample>,
}

/// Fitted camera-pixel to board-mm homography with fit diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MisalignmentMap {
    pub camera: usize,
    pub homography: Homography2D,
    pub inlier_count: usize,
    pub rms_residual_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold_mm: f64,
    /// Fraction of the session that must be inliers for a usable fit.
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iterations: 2000,
            inlier_threshold_mm: 0.5,
            min_inlier_ratio: 0.5,
            seed: 1,
        }
    }
}

/// Knobs for the rendered-line measurement path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureParams {
    /// Binarization threshold as a fraction of the raster maximum.
    pub binarize_threshold: f64,
    pub rho_resolution_px: f64,
    pub theta_resolution_rad: f64,
    /// Board raster sampling density, pixels per millimeter.
    pub board_resolution: f64,
    /// Half size of the rendered board window around the nominal camera point.
    pub window_half_extent_mm: f64,
}

impl Default for MeasureParams {
    fn default() -> Self {
        MeasureParams {
            binarize_threshold: 0.5,
            rho_resolution_px: 1.0,
            theta_resolution_rad: 0.5_f64.to_radians(),
            board_resolution: 10.0,
            window_half_extent_mm: 60.0,
        }
    }
}

/// Pixels whose intensity exceeds the given fraction of the raster maximum.
#[derive(Debug, Clone)]
pub struct BinaryRaster {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryRaster {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn set_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }
}

pub fn binarize(raster: &Raster, threshold: f64) -> Result<BinaryRaster, CompensateError> {
    let peak = raster.max();
    if peak <= 0.0 {
        return Err(CompensateError::AllDark);
    }
    let gate = threshold * peak;
    Ok(BinaryRaster {
        width: raster.width(),
        height: raster.height(),
        data: raster.data().iter().map(|&v| v > gate).collect(),
    })
}

/// Strongest line in the binary raster by Hough voting over (rho, theta) bins,
/// refined by the vote-weighted centroid of the peak's 3x3 neighborhood and a
/// least-squares refit over the pixels supporting the peak. The returned rho
/// is the signed distance from pixel (0, 0) in pixel units; callers convert to
/// physical units afterward.
///
/// Votes are accumulated about the raster center. For a chord of a centered
/// rectangle the perpendicular foot falls near the chord midpoint, so the vote
/// mass of neighboring theta columns stays inside the 3x3 window and the
/// centroid refinement is unbiased; about a corner origin the neighboring
/// columns smear outside the window and drag the centroid.
pub fn hough_lines(
    binary: &BinaryRaster,
    rho_resolution: f64,
    theta_resolution: f64,
) -> Result<LineParams, CompensateError> {
    let set: Vec<(u32, u32)> = binary.set_pixels().collect();
    if set.len() < 2 {
        return Err(CompensateError::NoLineFound { votes: set.len() });
    }
    let cx = 0.5 * f64::from(binary.width - 1);
    let cy = 0.5 * f64::from(binary.height - 1);
    let n_theta = (std::f64::consts::PI / theta_resolution).round() as usize;
    let rho_max = cx.hypot(cy).ceil();
    let n_rho = (2.0 * rho_max / rho_resolution).round() as usize + 1;
    let rho_index = |rho: f64| -> Option<usize> {
        let i = ((rho + rho_max) / rho_resolution).round();
        (i >= 0.0 && i < n_rho as f64).then_some(i as usize)
    };

    let trig: Vec<(f64, f64)> = (0..n_theta)
        .map(|k| {
            let theta = k as f64 * theta_resolution;
            (theta.cos(), theta.sin())
        })
        .collect();
    // Each vote is split linearly between the two nearest rho bins; rounding
    // into a single bin aliases long lines and biases the peak neighborhood.
    let mut acc = vec![0.0f64; n_theta * n_rho];
    for &(x, y) in &set {
        for (k, &(c, s)) in trig.iter().enumerate() {
            let rho = (f64::from(x) - cx) * c + (f64::from(y) - cy) * s;
            let u = (rho + rho_max) / rho_resolution;
            let i0 = u.floor();
            let frac = u - i0;
            if i0 >= 0.0 && i0 < n_rho as f64 {
                acc[k * n_rho + i0 as usize] += 1.0 - frac;
            }
            if i0 + 1.0 >= 0.0 && i0 + 1.0 < n_rho as f64 {
                acc[k * n_rho + i0 as usize + 1] += frac;
            }
        }
    }

    let (peak_idx, &peak_votes) = acc
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.total_cmp(b))
        .expect("accumulator is nonempty");
    if peak_votes.round() < HOUGH_MIN_VOTES as f64 {
        return Err(CompensateError::NoLineFound { votes: peak_votes.round() as usize });
    }
    let peak_k = peak_idx / n_rho;
    let peak_i = peak_idx % n_rho;

    // Votes for the cell at (theta + dk*theta_res, rho + di*rho_res), folding
    // theta out of [0, pi) back in with rho negated; such a virtual cell names
    // the same line as its folded twin.
    let votes_at = |dk: i64, di: i64| -> f64 {
        let mut k = peak_k as i64 + dk;
        let mut rho = (peak_i as i64 + di) as f64 * rho_resolution - rho_max;
        if k < 0 {
            k += n_theta as i64;
            rho = -rho;
        } else if k >= n_theta as i64 {
            k -= n_theta as i64;
            rho = -rho;
        }
        match rho_index(rho) {
            Some(i) => acc[k as usize * n_rho + i],
            None => 0.0,
        }
    };
    let mut cells = [[0.0f64; 3]; 3];
    let mut floor = f64::INFINITY;
    for dk in -1..=1i64 {
        for di in -1..=1i64 {
            let v = votes_at(dk, di);
            cells[(dk + 1) as usize][(di + 1) as usize] = v;
            floor = floor.min(v);
        }
    }
    // Long lines alias into every neighboring theta bin, giving the whole
    // neighborhood a shared pedestal; the centroid is meaningful only on the
    // vote mass above it.
    let mut weight = 0.0;
    let mut dk_sum = 0.0;
    let mut di_sum = 0.0;
    for dk in -1..=1i64 {
        for di in -1..=1i64 {
            let v = cells[(dk + 1) as usize][(di + 1) as usize] - floor;
            weight += v;
            dk_sum += dk as f64 * v;
            di_sum += di as f64 * v;
        }
    }
    let (theta, centered_rho) = if weight > 0.0 {
        (
            peak_k as f64 * theta_resolution + theta_resolution * dk_sum / weight,
            peak_i as f64 * rho_resolution - rho_max + rho_resolution * di_sum / weight,
        )
    } else {
        (
            peak_k as f64 * theta_resolution,
            peak_i as f64 * rho_resolution - rho_max,
        )
    };

    // Once a chord is short enough that neighboring theta columns capture the
    // whole line, the window cells hold no sub-bin angle information and the
    // centroid alone is only good to about half a bin. A least-squares refit
    // over the supporting pixels recovers the angle to a small fraction of a
    // bin, which the rho reported about a distant origin depends on.
    // The band must swallow a binarized line footprint (about 1 px half
    // thickness) plus the centroid's worst-case half-bin rho error without
    // clipping one edge of the band, which would tilt the fit.
    let band = 2.5 * rho_resolution.max(1.0);
    let (theta, centered_rho) = refit_supporting_pixels(&set, cx, cy, theta, centered_rho, band)
        .unwrap_or((theta, centered_rho));
    let rho = centered_rho + cx * theta.cos() + cy * theta.sin();
    Ok(LineParams { rho, theta }.canonical())
}

/// Total least squares over the set pixels within `band` of the current line,
/// in coordinates centered on (cx, cy). The fitted normal is the minor axis of
/// the pixel scatter; two select-and-fit rounds let the band follow the first
/// correction. Returns None when the support is too thin to orient.
fn refit_supporting_pixels(
    set: &[(u32, u32)],
    cx: f64,
    cy: f64,
    theta0: f64,
    rho0: f64,
    band: f64,
) -> Option<(f64, f64)> {
    let mut theta = theta0;
    let mut rho = rho0;
    for _ in 0..2 {
        let (c, s) = (theta.cos(), theta.sin());
        let mut n = 0.0f64;
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        let (mut sxx, mut sxy, mut syy) = (0.0f64, 0.0f64, 0.0f64);
        for &(x, y) in set {
            let u = f64::from(x) - cx;
            let v = f64::from(y) - cy;
            if (u * c + v * s - rho).abs() > band {
                continue;
            }
            n += 1.0;
            sx += u;
            sy += v;
            sxx += u * u;
            sxy += u * v;
            syy += v * v;
        }
        if n < 2.0 {
            return None;
        }
        let mx = sx / n;
        let my = sy / n;
        let a = sxx / n - mx * mx;
        let b = sxy / n - mx * my;
        let d = syy / n - my * my;
        let mean = 0.5 * (a + d);
        let gap = (0.25 * (a - d).powi(2) + b * b).sqrt();
        let l_min = mean - gap;
        let l_max = mean + gap;
        if l_max <= 0.0 || gap / l_max < 1e-9 {
            return None;
        }
        // Eigenvector of the smaller eigenvalue, taking the better-conditioned
        // of the two solve rows.
        let v1 = (b, l_min - a);
        let v2 = (l_min - d, b);
        let (nx, ny) = if v1.0 * v1.0 + v1.1 * v1.1 >= v2.0 * v2.0 + v2.1 * v2.1 {
            v1
        } else {
            v2
        };
        if nx == 0.0 && ny == 0.0 {
            return None;
        }
        theta = ny.atan2(nx);
        if theta < 0.0 {
            theta += std::f64::consts::PI;
        } else if theta >= std::f64::consts::PI {
            theta -= std::f64::consts::PI;
        }
        rho = mx * theta.cos() + my * theta.sin();
    }
    Some((theta, rho))
}

/// Solves the 2x2 normal-form system for the crossing point.
pub fn intersect_lines(a: &LineParams, b: &LineParams) -> Result<Vec2, CompensateError> {
    let det = (b.theta - a.theta).sin();
    if det.abs() < LINE_PARALLEL_TOL {
        return Err(CompensateError::LinesParallel);
    }
    Ok(Vec2::new(
        (a.rho * b.theta.sin() - b.rho * a.theta.sin()) / det,
        (b.rho * a.theta.cos() - a.rho * b.theta.cos()) / det,
    ))
}

/// Converts a line fitted in raster pixel indices to board millimeters using
/// the window's origin and density. Pixel index (i, j) sits at board point
/// origin + ((i + 0.5)/res, (j + 0.5)/res).
pub fn line_to_board_mm(line: LineParams, window: &BoardRaster) -> LineParams {
    let (c, s) = (line.theta.cos(), line.theta.sin());
    LineParams {
        rho: (line.rho + 0.5 * (c + s)) / window.resolution
            + window.origin_mm.x * c
            + window.origin_mm.y * s,
        theta: line.theta,
    }
    .canonical()
}

/// Measures where the ray from `projector` through `camera`'s optical center
/// crosses the board.
///
/// The capture stack is decoded to get the projector pixel p and the camera
/// blob centroid; the projector then renders the panel column and row through
/// the rounded p onto a board window, and the Hough-fitted lines intersect at
/// the measured board point.
pub fn measure_board_intersection(
    rig: &RigConfig,
    patterns: &PatternSet,
    decode: &DecodeParams,
    measure: &MeasureParams,
    pose: usize,
    projector: usize,
    camera: usize,
) -> Result<CompensationSample, CompensateError> {
    let stack = capture_stack(rig, patterns, pose, camera)?;
    let corrs = extract_correspondences(&stack, patterns, decode)?;
    let corr = corrs
        .iter()
        .find(|c| c.projector == projector)
        .ok_or(CompensateError::ProjectorNotDecoded { projector, camera })?;
    let center = (corr.projector_pixel.x, corr.projector_pixel.y);

    let nominal = rig.cameras[camera].nominal_board_point;
    let half = measure.window_half_extent_mm;
    let origin = Vec2::new(nominal.x - half, nominal.y - half);
    let mut lines = [LineParams { rho: 0.0, theta: 0.0 }; 2];
    for (slot, frame) in [PatternFrame::LineShiftX(0), PatternFrame::LineShiftY(0)]
        .iter()
        .enumerate()
    {
        let window = render_board_window(
            rig,
            pose,
            projector,
            frame,
            measure.board_resolution,
            Some(center),
            origin,
            2.0 * half,
            2.0 * half,
        )?;
        let binary = binarize(&window.raster, measure.binarize_threshold)?;
        let line = hough_lines(&binary, measure.rho_resolution_px, measure.theta_resolution_rad)?;
        lines[slot] = line_to_board_mm(line, &window);
    }
    let dt = (lines[0].theta - lines[1].theta).abs();
    if dt.min(std::f64::consts::PI - dt) < MEASURED_LINE_ANGLE_TOL {
        return Err(CompensateError::LinesParallel);
    }
    let board_point = intersect_lines(&lines[0], &lines[1])?;
    Ok(CompensationSample {
        projector_position: rig.projectors[projector].poses[pose].optical_center(),
        camera_pixel: corr.camera_pixel,
        board_point,
    })
}

/// Analytic stand-in for the rendered measurement: the camera pixel is the
/// exact projection of the projector position and the board point the exact
/// ray-plane crossing. Exercises the fit without raster quantization.
pub fn oracle_session(
    rig: &RigConfig,
    positions: &[Pt3],
    camera: usize,
) -> Result<CompensationSession, CompensateError> {
    let cam = &rig.cameras[camera];
    let extr = cam.extrinsics();
    let center = cam.optical_center();
    let board = Plane::board();
    let mut samples = Vec::with_capacity(positions.len());
    for &pos in positions {
        let camera_pixel = crate::geom::project(&cam.intrinsics, &extr, &pos)
            .map_err(SimError::from)?;
        let ray = Ray::new(pos, center - pos).map_err(SimError::from)?;
        let hit = ray_plane_intersect(&ray, &board).map_err(SimError::from)?;
        samples.push(CompensationSample {
            projector_position: pos,
            camera_pixel,
            board_point: Vec2::new(hit.x, hit.y) * MM_PER_M,
        });
    }
    Ok(CompensationSession { camera, samples })
}

/// RANSAC homography fit from camera pixels to measured board points.
///
/// Minimal sets of four samples seed candidate maps; sets with three collinear
/// pixels or board points are skipped. The best candidate by inlier count is
/// refit on all of its inliers.
pub fn estimate_misalignment_homography(
    session: &CompensationSession,
    params: &RansacParams,
) -> Result<MisalignmentMap, CompensateError> {
    let k = session.samples.len();
    if k < 4 {
        return Err(CompensateError::InsufficientPoints { got: k });
    }
    let pairs: Vec<(Vec2, Vec2)> = session
        .samples
        .iter()
        .map(|s| (s.camera_pixel, s.board_point))
        .collect();
    let needed = ((params.min_inlier_ratio * k as f64).ceil() as usize).max(4);

    let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
    let mut indices: Vec<usize> = (0..k).collect();
    let mut best: Option<Vec<usize>> = None;
    for _ in 0..params.iterations {
        indices.shuffle(&mut rng);
        let minimal: Vec<(Vec2, Vec2)> = indices[..4].iter().map(|&i| pairs[i]).collect();
        let src: Vec<Vec2> = minimal.iter().map(|p| p.0).collect();
        let dst: Vec<Vec2> = minimal.iter().map(|p| p.1).collect();
        if dlt::any_three_collinear(&src) || dlt::any_three_collinear(&dst) {
            continue;
        }
        let h = match dlt::estimate_homography_dlt(&minimal) {
            Ok(h) => h,
            Err(_) => continue,
        };
        let inliers: Vec<usize> = (0..k)
            .filter(|&i| match h.apply(pairs[i].0) {
                Ok(mapped) => (mapped - pairs[i].1).norm() <= params.inlier_threshold_mm,
                Err(_) => false,
            })
            .collect();
        let full_consensus = inliers.len() == k;
        if best.as_ref().map_or(true, |b| inliers.len() > b.len()) {
            best = Some(inliers);
        }
        if full_consensus {
            break;
        }
    }
    let inliers = best.ok_or(CompensateError::DegenerateConfiguration)?;
    if inliers.len() < needed {
        return Err(CompensateError::TooFewInliers {
            inliers: inliers.len(),
            needed,
            total: k,
        });
    }

    let inlier_pairs: Vec<(Vec2, Vec2)> = inliers.iter().map(|&i| pairs[i]).collect();
    let homography = dlt::estimate_homography_dlt(&inlier_pairs).map_err(Box::new)?;
    let mut sum_sq = 0.0;
    for &(src, dst) in &inlier_pairs {
        let mapped = homography.apply(src).map_err(SimError::from)?;
        sum_sq += (mapped - dst).norm_squared();
    }
    Ok(MisalignmentMap {
        camera: session.camera,
        homography,
        inlier_count: inliers.len(),
        rms_residual_mm: (sum_sq / inliers.len() as f64).sqrt(),
    })
}

/// Fills in the correspondence's board point through the camera's map.
pub fn compensate(
    map: &MisalignmentMap,
    corr: &Correspondence,
) -> Result<Correspondence, CompensateError> {
    if map.camera != corr.camera {
        return Err(CompensateError::CameraMismatch {
            expected: map.camera,
            got: corr.camera,
        });
    }
    let board = map.homography.apply(corr.camera_pixel).map_err(SimError::from)?;
    Ok(Correspondence {
        board_point: Some(board),
        ..*corr
    })
}
