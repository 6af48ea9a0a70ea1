//! Closed-form intrinsics from per-pose homography constraints on the image
//! of the absolute conic, with skew fixed to zero.

use nalgebra as na;

use super::CalibError;
use crate::geom::{Homography2D, Intrinsics};

/// Below this ratio between the fourth and first singular values the conic
/// system has extra null directions and the pose set is degenerate.
const CONIC_RANK_TOL: f64 = 1e-9;

/// Constraint row h_i^T B h_j on the packed conic b = (B11, B22, B13, B23,
/// B33); B12 is identically zero with zero skew.
fn conic_row(h: &Homography2D, i: usize, j: usize) -> na::RowSVector<f64, 5> {
    let m = &h.matrix;
    let hi = m.column(i);
    let hj = m.column(j);
    na::RowSVector::<f64, 5>::from_row_slice(&[
        hi[0] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ])
}

/// Solves for fx, fy, cx, cy from at least `min_poses` board-to-projector
/// homographies.
///
/// Each homography contributes the orthogonality constraint h1^T B h2 = 0 and
/// the equal-norm constraint h1^T B h1 = h2^T B h2 on B = K^-T K^-1. The
/// stacked system is solved by singular value decomposition; B must come out
/// positive definite up to sign for a valid pinhole.
pub fn intrinsics_from_homographies(
    hs: &[Homography2D],
    min_poses: usize,
) -> Result<Intrinsics, CalibError> {
    if hs.len() < min_poses {
        return Err(CalibError::InsufficientPoses {
            needed: min_poses,
            got: hs.len(),
        });
    }
    let mut v = na::DMatrix::<f64>::zeros(2 * hs.len(), 5);
    for (p, h) in hs.iter().enumerate() {
        // Constraints are scale-sensitive per row but homogeneous as a system;
        // normalizing each homography keeps row magnitudes comparable.
        let hn = h.normalized();
        v.row_mut(2 * p).copy_from(&conic_row(&hn, 0, 1));
        v.row_mut(2 * p + 1)
            .copy_from(&(conic_row(&hn, 0, 0) - conic_row(&hn, 1, 1)));
    }
    let svd = v.svd(false, true);
    let sigma = &svd.singular_values;
    if sigma[3] <= sigma[0] * CONIC_RANK_TOL {
        // More than one null direction: the poses do not constrain the conic
        // (all fronto-parallel, for example).
        return Err(CalibError::NotPositiveDefinite);
    }
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let b = v_t.row(4);
    let (b11, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4]);
    let sign = if b11 < 0.0 { -1.0 } else { 1.0 };
    let (b11, b22, b13, b23, b33) = (sign * b11, sign * b22, sign * b13, sign * b23, sign * b33);
    if b11 <= 0.0 || b22 <= 0.0 {
        return Err(CalibError::NotPositiveDefinite);
    }
    let cx = -b13 / b11;
    let cy = -b23 / b22;
    let lambda = b33 - (b13 * b13 / b11 + b23 * b23 / b22);
    if lambda <= 0.0 {
        return Err(CalibError::NotPositiveDefinite);
    }
    Ok(Intrinsics::new(
        (lambda / b11).sqrt(),
        (lambda / b22).sqrt(),
        cx,
        cy,
    ))
}
