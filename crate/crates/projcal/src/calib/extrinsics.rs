//! Board pose extraction from a calibrated homography.

use nalgebra as na;

use super::CalibError;
use crate::geom::{Extrinsics, Homography2D, Intrinsics, Mat3};

type Vec3 = na::Vector3<f64>;

/// Recovers the board pose from H ~ K [r1 r2 t].
///
/// The first two rotation columns and the translation are K^-1 times the
/// homography columns, scaled so r1 has unit norm; r3 completes the frame.
/// Noise leaves [r1 r2 r3] only approximately orthonormal, so the rotation is
/// snapped to the nearest one by its orthogonal polar factor. The overall sign
/// is chosen to put the board in front of the projector.
pub fn extrinsics_from_homography(
    intr: &Intrinsics,
    h: &Homography2D,
) -> Result<Extrinsics, CalibError> {
    let k_inv = intr
        .matrix()
        .try_inverse()
        .expect("valid intrinsics are invertible");
    let a = k_inv * h.matrix;
    let scale = a.column(0).norm();
    if scale <= 0.0 {
        return Err(CalibError::DegenerateConfiguration {
            reason: "homography column collapses under K^-1",
        });
    }
    let mut r1: Vec3 = a.column(0) / scale;
    let mut r2: Vec3 = a.column(1) / scale;
    let mut t: Vec3 = a.column(2) / scale;
    if t.z < 0.0 {
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    if t.z <= 0.0 {
        return Err(CalibError::BehindBoard);
    }
    let r3 = r1.cross(&r2);
    let approx = Mat3::from_columns(&[r1, r2, r3]);

    let svd = na::SVD::new(approx, true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut rotation = u * v_t;
    if rotation.determinant() < 0.0 {
        let mut flip = Mat3::identity();
        flip[(2, 2)] = -1.0;
        rotation = u * flip * v_t;
    }
    Ok(Extrinsics::new(rotation, t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::tests::synthetic_pose;
    use crate::geom::rodrigues_inv;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn homography_for(intr: &Intrinsics, extr: &Extrinsics) -> Homography2D {
        let rt = Mat3::from_columns(&[
            extr.rotation.column(0).clone_owned(),
            extr.rotation.column(1).clone_owned(),
            extr.translation,
        ]);
        Homography2D::new(intr.matrix() * rt)
    }

    #[test]
    fn synthesized_poses_are_recovered() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let intr = Intrinsics::new(1600.0, 1550.0, 640.0, 400.0);
        for _ in 0..30 {
            let truth = synthetic_pose(&mut rng);
            let h = homography_for(&intr, &truth).normalized();
            let got = extrinsics_from_homography(&intr, &h).unwrap();
            let residual = rodrigues_inv(&(truth.rotation.transpose() * got.rotation)).norm();
            assert!(residual < 1e-8, "rotation angle error {residual}");
            assert!((got.translation - truth.translation).norm() / truth.translation.norm() < 1e-8);
        }
    }

    #[test]
    fn fronto_parallel_pose_recovers_identity() {
        let intr = Intrinsics::new(1200.0, 1200.0, 600.0, 450.0);
        let truth = Extrinsics::new(Mat3::identity(), Vec3::new(10.0, -20.0, 750.0)).unwrap();
        let got = extrinsics_from_homography(&intr, &homography_for(&intr, &truth)).unwrap();
        assert!((got.rotation - Mat3::identity()).norm() < 1e-10);
        assert!((got.translation - truth.translation).norm() < 1e-7);
    }

    #[test]
    fn homography_sign_is_irrelevant() {
        let mut rng = ChaCha12Rng::seed_from_u64(27);
        let intr = Intrinsics::new(1400.0, 1400.0, 500.0, 380.0);
        let truth = synthetic_pose(&mut rng);
        let h = homography_for(&intr, &truth);
        let flipped = Homography2D::new(-h.matrix);
        let a = extrinsics_from_homography(&intr, &h).unwrap();
        let b = extrinsics_from_homography(&intr, &flipped).unwrap();
        assert!((a.rotation - b.rotation).norm() < 1e-12);
        assert!((a.translation - b.translation).norm() < 1e-12);
    }

    #[test]
    fn output_rotation_is_orthonormal_under_noise() {
        let mut rng = ChaCha12Rng::seed_from_u64(63);
        let intr = Intrinsics::new(1000.0, 980.0, 320.0, 240.0);
        for i in 0..20 {
            let truth = synthetic_pose(&mut rng);
            let mut m = homography_for(&intr, &truth).normalized().matrix;
            // Perturb the homography so the lifted columns are not orthogonal.
            m[(0, 1)] += 1e-4 * (i as f64 + 1.0);
            m[(1, 0)] -= 5e-5 * (i as f64 + 1.0);
            let got = extrinsics_from_homography(&intr, &Homography2D::new(m)).unwrap();
            let gram = got.rotation.transpose() * got.rotation;
            assert!((gram - Mat3::identity()).norm() < 1e-12);
            assert!((got.rotation.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
