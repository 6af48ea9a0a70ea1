//! Direct linear transform for 2D homographies with Hartley normalization.

use nalgebra as na;

use super::CalibError;
use crate::geom::{Homography2D, Mat3};

type Vec2 = na::Vector2<f64>;

/// Smallest acceptable ratio between the eighth and first singular values of
/// the design matrix; below it the null space is not one-dimensional.
const RANK_RATIO_TOL: f64 = 1e-10;
/// Point sets whose scatter collapses below this spread are collinear.
const SPREAD_TOL: f64 = 1e-9;

/// Similarity that moves a point set to centroid 0 and mean distance sqrt(2).
fn normalizing_transform(points: impl Iterator<Item = Vec2> + Clone) -> Result<Mat3, CalibError> {
    let mut centroid = Vec2::zeros();
    let mut count = 0usize;
    for p in points.clone() {
        centroid += p;
        count += 1;
    }
    centroid /= count as f64;
    let mean_dist = points.clone().map(|p| (p - centroid).norm()).sum::<f64>() / count as f64;
    if mean_dist < SPREAD_TOL {
        return Err(CalibError::DegenerateConfiguration {
            reason: "point set collapses to a single location",
        });
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Mat3::new(
        s,
        0.0,
        -s * centroid.x,
        0.0,
        s,
        -s * centroid.y,
        0.0,
        0.0,
        1.0,
    ))
}

fn apply_affine(t: &Mat3, p: Vec2) -> Vec2 {
    Vec2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// True when some three of the points span no area. Used to reject minimal
/// homography sets; larger sets tolerate partial collinearity.
pub fn any_three_collinear(points: &[Vec2]) -> bool {
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            for k in j + 1..points.len() {
                let a = points[j] - points[i];
                let b = points[k] - points[i];
                let scale = a.norm().max(b.norm()).max(1.0);
                if (a.x * b.y - a.y * b.x).abs() < SPREAD_TOL * scale * scale {
                    return true;
                }
            }
        }
    }
    false
}

fn all_collinear(points: impl Iterator<Item = Vec2> + Clone) -> bool {
    let pts: Vec<Vec2> = points.collect();
    let first = pts[0];
    let dir = match pts.iter().map(|p| p - first).find(|d| d.norm() > SPREAD_TOL) {
        Some(d) => d.normalize(),
        None => return true,
    };
    pts.iter().all(|p| {
        let d = p - first;
        (d.x * dir.y - d.y * dir.x).abs() < SPREAD_TOL * d.norm().max(1.0)
    })
}

/// Least-squares homography mapping each source point onto its target.
///
/// Both point sets are Hartley-normalized before the singular value
/// decomposition and the result is denormalized and max-entry normalized, so
/// the output scale is independent of the input units.
pub fn estimate_homography_dlt(pairs: &[(Vec2, Vec2)]) -> Result<Homography2D, CalibError> {
    if pairs.len() < 4 {
        return Err(CalibError::InsufficientPoints {
            needed: 4,
            got: pairs.len(),
        });
    }
    if all_collinear(pairs.iter().map(|p| p.0)) || all_collinear(pairs.iter().map(|p| p.1)) {
        return Err(CalibError::DegenerateConfiguration {
            reason: "all source or all target points are collinear",
        });
    }
    let t_src = normalizing_transform(pairs.iter().map(|p| p.0))?;
    let t_dst = normalizing_transform(pairs.iter().map(|p| p.1))?;

    // The thin SVD of a matrix with fewer rows than columns drops the
    // null-space right singular vector; zero rows pad minimal sets to 9 rows
    // without changing the solution.
    let mut a = na::DMatrix::<f64>::zeros((2 * pairs.len()).max(9), 9);
    for (i, &(src, dst)) in pairs.iter().enumerate() {
        let s = apply_affine(&t_src, src);
        let d = apply_affine(&t_dst, dst);
        let r0 = 2 * i;
        a[(r0, 0)] = -s.x;
        a[(r0, 1)] = -s.y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = d.x * s.x;
        a[(r0, 7)] = d.x * s.y;
        a[(r0, 8)] = d.x;
        let r1 = r0 + 1;
        a[(r1, 3)] = -s.x;
        a[(r1, 4)] = -s.y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = d.y * s.x;
        a[(r1, 7)] = d.y * s.y;
        a[(r1, 8)] = d.y;
    }

    let svd = a.svd(false, true);
    let sigma = &svd.singular_values;
    if sigma[7] <= sigma[0] * RANK_RATIO_TOL {
        return Err(CalibError::DegenerateConfiguration {
            reason: "design matrix rank below 8",
        });
    }
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let h = v_t.row(8);
    let h_norm = Mat3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    let t_dst_inv = t_dst.try_inverse().expect("similarity transforms are invertible");
    let h = Homography2D::new(t_dst_inv * h_norm * t_src).normalized();
    if h.inverse().is_err() {
        return Err(CalibError::DegenerateConfiguration {
            reason: "fitted homography is singular",
        });
    }
    Ok(h)
}
