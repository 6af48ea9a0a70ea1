//! Planar projector calibration from board-plane correspondences: per-pose
//! homography estimation, closed-form intrinsics, extrinsics extraction, and
//! nonlinear reprojection refinement.

pub mod dlt;
pub mod extrinsics;
pub mod intrinsics;
pub mod refine;

use nalgebra as na;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compensate::{self, CompensateError, MisalignmentMap};
use crate::decode::Correspondence;
use crate::geom::{Extrinsics, GeomError, Homography2D, Intrinsics, Mat3};

pub use dlt::estimate_homography_dlt;
pub use extrinsics::extrinsics_from_homography;
pub use intrinsics::intrinsics_from_homographies;
pub use refine::{refine_lm, LmOptions};

type Vec2 = na::Vector2<f64>;

/// Fewer than this many poses makes the conic system poorly conditioned even
/// when it is solvable.
pub const DEFAULT_MIN_POSES: usize = 3;
/// Below this many points per pose the homography fit has no redundancy.
pub const POINTS_PER_POSE_WARN: usize = 6;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("need at least {needed} point pairs, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("need at least {needed} poses, got {got}")]
    InsufficientPoses { needed: usize, got: usize },
    #[error("degenerate point configuration: {reason}")]
    DegenerateConfiguration { reason: &'static str },
    #[error("recovered conic is not positive definite; pose set is degenerate")]
    NotPositiveDefinite,
    #[error("board lies behind the projector for both sign choices")]
    BehindBoard,
    #[error("normal equations stayed singular up to damping {damping:.3e}")]
    SingularNormalEquations { damping: f64 },
    #[error("pose {pose}: {source}")]
    Pose {
        pose: usize,
        #[source]
        source: Box<CalibError>,
    },
    #[error(transparent)]
    Compensate(#[from] CompensateError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Board-to-projector point pairs observed at one board pose.
#[derive(Debug, Clone)]
pub struct PoseObservations {
    pub pose: usize,
    /// (board point mm on the z = 0 plane, projector pixel).
    pub points: Vec<(Vec2, Vec2)>,
}

/// Calibration output for one projector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub intrinsics: Intrinsics,
    /// Pose of the board in the projector frame, one entry per observed pose.
    pub poses: Vec<Extrinsics>,
    /// Pose indices matching `poses`; poses the projector never saw are absent.
    pub pose_indices: Vec<usize>,
    pub rms_reprojection_px: f64,
    /// Residuals ordered pose-major: all points of `poses[0]`, then
    /// `poses[1]`, and so on. `points_per_pose` gives the slice widths.
    pub per_point_residuals_px: Vec<f64>,
    pub points_per_pose: Vec<usize>,
}

impl CalibrationResult {
    /// Plane-induced map from board millimeters to projector pixels for
    /// `poses[index]`: q ~ K [r1 | r2 | t] (x, y, 1)ᵀ. No unit scaling here;
    /// calibrated translations are already in millimeters because the board
    /// observations were.
    pub fn board_to_projector(&self, index: usize) -> Option<Homography2D> {
        let extr = self.poses.get(index)?;
        let r = extr.rotation;
        Some(Homography2D::new(self.intrinsics.matrix() * Mat3::from_columns(&[
            r.column(0).into_owned(),
            r.column(1).into_owned(),
            extr.translation.column(0).into_owned(),
        ])))
    }

    /// Residual of one observed point under the current model, in pixels.
    fn residual(intr: &Intrinsics, extr: &Extrinsics, board: Vec2, observed: Vec2) -> f64 {
        let world = na::Point3::new(board.x, board.y, 0.0);
        match crate::geom::project(intr, extr, &world) {
            Ok(p) => (p - observed).norm(),
            Err(_) => f64::INFINITY,
        }
    }

    fn from_model(
        intrinsics: Intrinsics,
        poses: Vec<Extrinsics>,
        pose_indices: Vec<usize>,
        observations: &[PoseObservations],
    ) -> Self {
        let mut per_point_residuals_px = Vec::new();
        let mut points_per_pose = Vec::with_capacity(poses.len());
        for (extr, obs) in poses.iter().zip(observations) {
            points_per_pose.push(obs.points.len());
            for &(board, pixel) in &obs.points {
                per_point_residuals_px.push(Self::residual(&intrinsics, extr, board, pixel));
            }
        }
        let rms = (per_point_residuals_px.iter().map(|r| r * r).sum::<f64>()
            / per_point_residuals_px.len().max(1) as f64)
            .sqrt();
        CalibrationResult {
            intrinsics,
            poses,
            pose_indices,
            rms_reprojection_px: rms,
            per_point_residuals_px,
            points_per_pose,
        }
    }
}

/// Closed-form pipeline plus refinement for one projector.
pub fn calibrate_projector(
    observations: &[PoseObservations],
    min_poses: usize,
    options: &LmOptions,
) -> Result<CalibrationResult, CalibError> {
    if observations.len() < min_poses {
        return Err(CalibError::InsufficientPoses {
            needed: min_poses,
            got: observations.len(),
        });
    }
    let mut homographies = Vec::with_capacity(observations.len());
    for obs in observations {
        if obs.points.len() < POINTS_PER_POSE_WARN {
            log::warn!(
                "pose {}: homography fit from only {} points has no redundancy",
                obs.pose,
                obs.points.len()
            );
        }
        let h = estimate_homography_dlt(&obs.points).map_err(|e| CalibError::Pose {
            pose: obs.pose,
            source: Box::new(e),
        })?;
        homographies.push(h);
    }
    let intrinsics = intrinsics_from_homographies(&homographies, min_poses)?;
    let mut poses = Vec::with_capacity(homographies.len());
    for (h, obs) in homographies.iter().zip(observations) {
        let extr = extrinsics_from_homography(&intrinsics, h).map_err(|e| CalibError::Pose {
            pose: obs.pose,
            source: Box::new(e),
        })?;
        poses.push(extr);
    }
    let pose_indices: Vec<usize> = observations.iter().map(|o| o.pose).collect();
    let init = CalibrationResult::from_model(intrinsics, poses, pose_indices, observations);
    refine_lm(&init, observations, options)
}

/// Groups correspondences by projector and calibrates each one.
///
/// With compensation on, each correspondence's board point comes from its
/// camera's misalignment map; off, the nominal camera position stands in, which
/// reproduces the uncompensated condition. Projectors are reported
/// individually so one failure does not hide the others.
pub fn calibrate_all(
    correspondences: &[Correspondence],
    maps: &[MisalignmentMap],
    nominal_points: &[Vec2],
    use_compensation: bool,
    min_poses: usize,
    options: &LmOptions,
) -> Vec<(usize, Result<CalibrationResult, CalibError>)> {
    let num_projectors = correspondences
        .iter()
        .map(|c| c.projector + 1)
        .max()
        .unwrap_or(0);
    let mut results = Vec::with_capacity(num_projectors);
    for m in 0..num_projectors {
        results.push((m, observations_for(correspondences, maps, nominal_points, use_compensation, m)
            .and_then(|obs| calibrate_projector(&obs, min_poses, options))));
    }
    results
}

fn observations_for(
    correspondences: &[Correspondence],
    maps: &[MisalignmentMap],
    nominal_points: &[Vec2],
    use_compensation: bool,
    projector: usize,
) -> Result<Vec<PoseObservations>, CalibError> {
    let mut by_pose: Vec<(usize, Vec<(Vec2, Vec2)>)> = Vec::new();
    for corr in correspondences.iter().filter(|c| c.projector == projector) {
        let board = if use_compensation {
            let map = maps
                .iter()
                .find(|m| m.camera == corr.camera)
                .ok_or(CalibError::DegenerateConfiguration {
                    reason: "no misalignment map for a camera in the correspondence set",
                })?;
            compensate::compensate(map, corr)?
                .board_point
                .expect("compensate always fills the board point")
        } else {
            nominal_points[corr.camera]
        };
        match by_pose.iter_mut().find(|(p, _)| *p == corr.pose) {
            Some((_, pts)) => pts.push((board, corr.projector_pixel)),
            None => by_pose.push((corr.pose, vec![(board, corr.projector_pixel)])),
        }
    }
    by_pose.sort_by_key(|(p, _)| *p);
    Ok(by_pose
        .into_iter()
        .map(|(pose, points)| PoseObservations { pose, points })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{rodrigues, Extrinsics, Intrinsics};
    use nalgebra as na;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    type Vec3 = na::Vector3<f64>;

    pub(crate) fn synthetic_pose(rng: &mut ChaCha12Rng) -> Extrinsics {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.2..0.2),
        );
        let angle = rng.random_range(0.1..0.45);
        let r = rodrigues(&(axis.normalize() * angle));
        let t = Vec3::new(
            rng.random_range(-60.0..60.0),
            rng.random_range(-60.0..60.0),
            rng.random_range(650.0..950.0),
        );
        Extrinsics::new(r, t).unwrap()
    }

    pub(crate) fn synthetic_observations(
        intr: &Intrinsics,
        poses: &[Extrinsics],
        grid: usize,
        pitch_mm: f64,
    ) -> Vec<PoseObservations> {
        poses
            .iter()
            .enumerate()
            .map(|(i, extr)| {
                let mut points = Vec::new();
                for gy in 0..grid {
                    for gx in 0..grid {
                        let board = Vec2::new(gx as f64 * pitch_mm, gy as f64 * pitch_mm);
                        let world = na::Point3::new(board.x, board.y, 0.0);
                        let pixel = crate::geom::project(intr, extr, &world).unwrap();
                        points.push((board, pixel));
                    }
                }
                PoseObservations { pose: i, points }
            })
            .collect()
    }

    #[test]
    fn closed_form_plus_refinement_recovers_ground_truth() {
        let mut rng = ChaCha12Rng::seed_from_u64(91);
        let intr = Intrinsics::new(1400.0, 1350.0, 620.0, 370.0);
        let poses: Vec<Extrinsics> = (0..8).map(|_| synthetic_pose(&mut rng)).collect();
        let obs = synthetic_observations(&intr, &poses, 5, 30.0);
        let result = calibrate_projector(&obs, DEFAULT_MIN_POSES, &LmOptions::default()).unwrap();
        assert!((result.intrinsics.fx - intr.fx).abs() / intr.fx < 1e-8);
        assert!((result.intrinsics.fy - intr.fy).abs() / intr.fy < 1e-8);
        assert!((result.intrinsics.cx - intr.cx).abs() / intr.fx < 1e-8);
        assert!((result.intrinsics.cy - intr.cy).abs() / intr.fy < 1e-8);
        assert!(result.rms_reprojection_px < 1e-9);
        assert_eq!(result.pose_indices, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_poses_is_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let intr = Intrinsics::new(1000.0, 1000.0, 320.0, 240.0);
        let poses: Vec<Extrinsics> = (0..2).map(|_| synthetic_pose(&mut rng)).collect();
        let obs = synthetic_observations(&intr, &poses, 4, 40.0);
        assert!(matches!(
            calibrate_projector(&obs, 3, &LmOptions::default()),
            Err(CalibError::InsufficientPoses { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn rms_matches_per_point_residuals() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let intr = Intrinsics::new(1200.0, 1180.0, 500.0, 400.0);
        let poses: Vec<Extrinsics> = (0..4).map(|_| synthetic_pose(&mut rng)).collect();
        let obs = synthetic_observations(&intr, &poses, 4, 35.0);
        let result = calibrate_projector(&obs, 3, &LmOptions::default()).unwrap();
        let rms = (result
            .per_point_residuals_px
            .iter()
            .map(|r| r * r)
            .sum::<f64>()
            / result.per_point_residuals_px.len() as f64)
            .sqrt();
        assert!((result.rms_reprojection_px - rms).abs() < 1e-12);
        assert_eq!(result.points_per_pose, vec![16; 4]);
        assert_eq!(
            result.points_per_pose.iter().sum::<usize>(),
            result.per_point_residuals_px.len()
        );
    }

    #[test]
    fn plane_map_reproduces_the_observed_pixels() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let intr = Intrinsics::new(900.0, 910.0, 400.0, 300.0);
        let poses: Vec<Extrinsics> = (0..4).map(|_| synthetic_pose(&mut rng)).collect();
        let obs = synthetic_observations(&intr, &poses, 4, 30.0);
        let result = calibrate_projector(&obs, 3, &LmOptions::default()).unwrap();
        for (i, pose_obs) in obs.iter().enumerate() {
            let h = result.board_to_projector(i).unwrap();
            for &(board, pixel) in &pose_obs.points {
                let mapped = h.apply(board).unwrap();
                assert!((mapped - pixel).norm() < 1e-6, "pose {i}: {mapped:?} vs {pixel:?}");
            }
        }
        assert!(result.board_to_projector(result.poses.len()).is_none());
    }

    #[test]
    fn board_rescaling_only_rescales_translation() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let intr = Intrinsics::new(1500.0, 1500.0, 640.0, 400.0);
        let poses: Vec<Extrinsics> = (0..5).map(|_| synthetic_pose(&mut rng)).collect();
        let obs = synthetic_observations(&intr, &poses, 5, 25.0);
        let scaled: Vec<PoseObservations> = obs
            .iter()
            .map(|o| PoseObservations {
                pose: o.pose,
                points: o.points.iter().map(|&(b, p)| (b * 2.0, p)).collect(),
            })
            .collect();
        // Unchanged pixels with doubled board coordinates are consistent with
        // doubled translations and the same rotation and intrinsics.
        let a = calibrate_projector(&obs, 3, &LmOptions::default()).unwrap();
        let b = calibrate_projector(&scaled, 3, &LmOptions::default()).unwrap();
        assert!((a.intrinsics.fx - b.intrinsics.fx).abs() / a.intrinsics.fx < 1e-8);
        assert!((a.intrinsics.fy - b.intrinsics.fy).abs() / a.intrinsics.fy < 1e-8);
        for (pa, pb) in a.poses.iter().zip(&b.poses) {
            assert!((pa.rotation - pb.rotation).norm() < 1e-7);
            assert!((pa.translation * 2.0 - pb.translation).norm() / pb.translation.norm() < 1e-7);
        }
    }
}
