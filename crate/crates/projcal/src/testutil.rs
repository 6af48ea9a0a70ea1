//! Shared fixtures for unit tests: a small desk-scale rig that every pipeline
//! stage can see end to end.

use crate::codec::{build_pattern_set, PatternSet, PatternSetSpec};
use crate::geom::{Extrinsics, Intrinsics, Mat3, Pt3, Vec2, Vec3};
use crate::sim::{EmbeddedCameraSpec, ProjectorGroundTruth, RigConfig};

pub(crate) const MM_PER_M: f64 = 1000.0;

pub(crate) fn test_camera(nominal: Vec2, offset: Vec3) -> EmbeddedCameraSpec {
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

pub(crate) fn corner_cameras() -> Vec<EmbeddedCameraSpec> {
    [(60.0, 40.0), (140.0, 40.0), (60.0, 100.0), (140.0, 100.0)]
        .into_iter()
        .map(|(x, y)| test_camera(Vec2::new(x, y), Vec3::zeros()))
        .collect()
}

pub(crate) fn aimed_projector(position: Pt3, target_mm: Vec2, poses: usize) -> ProjectorGroundTruth {
    let target = Pt3::new(target_mm.x / MM_PER_M, target_mm.y / MM_PER_M, 0.0);
    let extr = Extrinsics::looking_at(position, target, -Vec3::y()).unwrap();
    ProjectorGroundTruth {
        intrinsics: Intrinsics::new(300.0, 300.0, 32.0, 24.0),
        poses: vec![extr; poses],
        width: 64,
        height: 48,
    }
}

/// Board 200×140 mm, four corner cameras, `m` projectors ~1 m out aimed at the
/// board center, one pose, noiseless.
pub(crate) fn test_rig(m: usize) -> RigConfig {
    let positions = [
        Pt3::new(0.10, 0.07, 1.00),
        Pt3::new(0.25, 0.12, 1.10),
        Pt3::new(-0.05, 0.03, 0.95),
        Pt3::new(0.12, 0.22, 1.05),
        Pt3::new(0.02, -0.06, 1.15),
        Pt3::new(0.20, -0.02, 0.90),
        Pt3::new(-0.02, 0.16, 1.08),
        Pt3::new(0.16, 0.14, 0.85),
    ];
    assert!(m <= positions.len());
    let target = Vec2::new(100.0, 70.0);
    RigConfig {
        board_width: 200.0,
        board_height: 140.0,
        cameras: corner_cameras(),
        projectors: positions[..m].iter().map(|&p| aimed_projector(p, target, 1)).collect(),
        ambient_level: 0.0,
        noise_sigma: 0.0,
        saturation_cap: 1.0,
        rng_seed: 11,
    }
}

pub(crate) fn test_patterns(rig: &RigConfig, line_shifts: u32) -> PatternSet {
    let spec = PatternSetSpec::new(
        rig.projectors.len() as u32,
        rig.projectors[0].width,
        rig.projectors[0].height,
        line_shifts,
        true,
    )
    .unwrap();
    build_pattern_set(&spec).unwrap()
}
