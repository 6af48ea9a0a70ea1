//! Pinhole projection, rays, plane intersection, 2D homographies and the
//! Rodrigues rotation parameterization.
//!
//! Conventions used throughout the crate:
//! * world → device mapping is `x_dev = R·X + t`; the optical center in world
//!   coordinates is `-Rᵀ·t`,
//! * 3D quantities are in meters, image planes in pixels; board coordinates
//!   arrive in millimeters at the config boundary and are converted on ingest,
//! * during per-pose computation the board frame of the current pose *is* the
//!   world frame (board plane at z = 0).

use nalgebra as na;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat3 = na::Matrix3<f64>;
pub type Vec2 = na::Vector2<f64>;
pub type Vec3 = na::Vector3<f64>;
pub type Pt3 = na::Point3<f64>;

/// Directions with |n·d| below this are treated as parallel to the plane.
pub const PARALLEL_TOL: f64 = 1e-12;
/// Device-frame depths at or below this count as "behind the camera".
pub const MIN_DEPTH: f64 = 1e-12;
/// Allowed deviation from RᵀR = I and det R = 1.
pub const ROTATION_TOL: f64 = 1e-9;
/// Homogeneous w below this maps to the line at infinity.
pub const HOMOGENEOUS_W_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("point has non-positive device-frame depth {depth:.3e}")]
    DepthNonPositive { depth: f64 },
    #[error("ray is parallel to the plane")]
    RayParallelToPlane,
    #[error("ray meets the plane behind its origin (lambda = {lambda:.3e})")]
    IntersectionBehindOrigin { lambda: f64 },
    #[error("homogeneous point maps to infinity")]
    PointAtInfinity,
    #[error("homography is not invertible (normalized det = {det:.3e})")]
    NonInvertibleHomography { det: f64 },
    #[error("matrix is not a rotation (orthonormality residual {residual:.3e})")]
    NotARotation { residual: f64 },
    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    InvalidFocalLength { fx: f64, fy: f64 },
    #[error("ray direction has near-zero norm")]
    ZeroDirection,
}

/// Pinhole intrinsics with zero skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.fx <= 0.0 || self.fy <= 0.0 || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(GeomError::InvalidFocalLength { fx: self.fx, fy: self.fy });
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Rigid world → device transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeomError> {
        let residual = (rotation.transpose() * rotation - Mat3::identity()).norm();
        let det_err = (rotation.determinant() - 1.0).abs();
        if residual > ROTATION_TOL || det_err > ROTATION_TOL {
            return Err(GeomError::NotARotation { residual: residual.max(det_err) });
        }
        Ok(Self { rotation, translation })
    }

    pub fn to_device(&self, point: &Pt3) -> Pt3 {
        Pt3::from(self.rotation * point.coords + self.translation)
    }

    pub fn optical_center(&self) -> Pt3 {
        Pt3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Chains `inner` (frame A → frame B) before `self` (frame B → device).
    pub fn after(&self, inner: &Extrinsics) -> Extrinsics {
        Extrinsics {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    /// Places a device at `position` with its optical axis through `target`.
    /// `up_hint` fixes the roll; it must not be collinear with the axis.
    pub fn looking_at(position: Pt3, target: Pt3, up_hint: Vec3) -> Result<Self, GeomError> {
        let z = (target - position).try_normalize(PARALLEL_TOL).ok_or(GeomError::ZeroDirection)?;
        let x = up_hint.cross(&z).try_normalize(PARALLEL_TOL).ok_or(GeomError::ZeroDirection)?;
        let y = z.cross(&x);
        // Rows of R are the device axes expressed in world coordinates.
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * position.coords);
        Ok(Self { rotation, translation })
    }
}

/// Half line with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Pt3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Pt3, direction: Vec3) -> Result<Self, GeomError> {
        let direction = direction.try_normalize(PARALLEL_TOL).ok_or(GeomError::ZeroDirection)?;
        Ok(Self { origin, direction })
    }

    pub fn point_at(&self, lambda: f64) -> Pt3 {
        self.origin + self.direction * lambda
    }
}

/// Plane `{ x : normal·x = offset }` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vec3, offset: f64) -> Result<Self, GeomError> {
        let norm = normal.norm();
        if norm < PARALLEL_TOL {
            return Err(GeomError::ZeroDirection);
        }
        Ok(Self { normal: normal / norm, offset: offset / norm })
    }

    /// The board plane: z = 0 with normal +z.
    pub fn board() -> Self {
        Self { normal: Vec3::z(), offset: 0.0 }
    }
}

/// Projects a world point to pixel coordinates.
pub fn project(intr: &Intrinsics, extr: &Extrinsics, point: &Pt3) -> Result<Vec2, GeomError> {
    let p = extr.to_device(point);
    if p.z <= MIN_DEPTH {
        return Err(GeomError::DepthNonPositive { depth: p.z });
    }
    Ok(Vec2::new(intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy))
}

/// Back-projects a pixel to the world-frame ray it observes. The ray starts at
/// the optical center and points into the scene (positive device-frame z).
pub fn pixel_ray(intr: &Intrinsics, extr: &Extrinsics, pixel: Vec2) -> Ray {
    let dir_dev = Vec3::new((pixel.x - intr.cx) / intr.fx, (pixel.y - intr.cy) / intr.fy, 1.0);
    let rt = extr.rotation.transpose();
    Ray {
        origin: Pt3::from(-(rt * extr.translation)),
        direction: (rt * dir_dev).normalize(),
    }
}

/// Intersects a ray with a plane; the hit must lie at or ahead of the origin.
pub fn ray_plane_intersect(ray: &Ray, plane: &Plane) -> Result<Pt3, GeomError> {
    let denom = plane.normal.dot(&ray.direction);
    if denom.abs() < PARALLEL_TOL {
        return Err(GeomError::RayParallelToPlane);
    }
    let lambda = (plane.offset - plane.normal.dot(&ray.origin.coords)) / denom;
    if lambda < 0.0 {
        return Err(GeomError::IntersectionBehindOrigin { lambda });
    }
    Ok(ray.point_at(lambda))
}

/// Plane-to-plane projective map, defined up to scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography2D {
    pub matrix: Mat3,
}

impl Homography2D {
    pub fn new(matrix: Mat3) -> Self {
        Self { matrix }
    }

    pub fn identity() -> Self {
        Self { matrix: Mat3::identity() }
    }

    /// Rescales so the entry of largest magnitude becomes +1.
    pub fn normalized(&self) -> Self {
        let mut pivot = 0.0_f64;
        for v in self.matrix.iter() {
            if v.abs() > pivot.abs() {
                pivot = *v;
            }
        }
        if pivot == 0.0 {
            return *self;
        }
        Self { matrix: self.matrix / pivot }
    }

    pub fn apply(&self, p: Vec2) -> Result<Vec2, GeomError> {
        let q = self.matrix * Vec3::new(p.x, p.y, 1.0);
        if q.z.abs() < HOMOGENEOUS_W_TOL {
            return Err(GeomError::PointAtInfinity);
        }
        Ok(Vec2::new(q.x / q.z, q.y / q.z))
    }

    pub fn inverse(&self) -> Result<Homography2D, GeomError> {
        let n = self.normalized().matrix;
        let det = n.determinant();
        if det.abs() < HOMOGENEOUS_W_TOL {
            return Err(GeomError::NonInvertibleHomography { det });
        }
        match n.try_inverse() {
            Some(inv) => Ok(Homography2D { matrix: inv }),
            None => Err(GeomError::NonInvertibleHomography { det }),
        }
    }

    /// Composition `self ∘ inner`.
    pub fn compose(&self, inner: &Homography2D) -> Homography2D {
        Homography2D { matrix: self.matrix * inner.matrix }
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.matrix;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Axis-angle (direction = axis, norm = angle in radians) to rotation matrix.
/// The zero vector maps to the identity.
pub fn rodrigues(axis_angle: &Vec3) -> Mat3 {
    let theta = axis_angle.norm();
    let k = skew(axis_angle);
    // sin θ / θ and (1 − cos θ)/θ² go through removable singularities at 0;
    // the series keeps full precision below the switch point.
    let (a, b) = sinc_terms(theta);
    Mat3::identity() + k * a + k * k * b
}

/// (sin θ/θ, (1 − cos θ)/θ²) with series evaluation near θ = 0.
pub(crate) fn sinc_terms(theta: f64) -> (f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// Rotation matrix to axis-angle; inverse of [`rodrigues`] for angles < π.
pub fn rodrigues_inv(r: &Mat3) -> Vec3 {
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let vee = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) / 2.0;
    if theta < 1e-9 {
        return vee;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near π the sine route loses the axis; recover it from R + I, whose
        // columns are parallel to the axis.
        let m = r + Mat3::identity();
        let col = (0..3).max_by(|&a, &b| m[(a, a)].partial_cmp(&m[(b, b)]).unwrap()).unwrap();
        let axis = m.column(col).normalize();
        // vee carries sin θ · axis, so its sign disambiguates the axis even
        // when sin θ is tiny.
        let sign = if vee.dot(&axis) < 0.0 { -1.0 } else { 1.0 };
        return axis * (sign * theta);
    }
    vee * (theta / theta.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};

    fn random_rotation(rng: &mut StdRng) -> Mat3 {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        rodrigues(&(v.normalize() * rng.random_range(0.01..3.0)))
    }

    #[test]
    fn project_on_axis_point_hits_principal_point() {
        let intr = Intrinsics::new(1.0, 1.0, 0.0, 0.0);
        let p = project(&intr, &Extrinsics::identity(), &Pt3::new(0.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn project_evaluates_pinhole_equation() {
        let intr = Intrinsics::new(2.0, 3.0, 10.0, 20.0);
        let p = project(&intr, &Extrinsics::identity(), &Pt3::new(1.0, 1.0, 2.0)).unwrap();
        assert_abs_diff_eq!(p.x, 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 21.5, epsilon = 1e-12);
    }

    #[test]
    fn project_rejects_zero_depth() {
        let intr = Intrinsics::new(1.0, 1.0, 0.0, 0.0);
        let err = project(&intr, &Extrinsics::identity(), &Pt3::new(1.0, 0.0, 0.0));
        assert!(matches!(err, Err(GeomError::DepthNonPositive { .. })));
    }

    #[test]
    fn principal_pixel_ray_is_optical_axis() {
        let intr = Intrinsics::new(800.0, 820.0, 320.0, 240.0);
        let ray = pixel_ray(&intr, &Extrinsics::identity(), Vec2::new(320.0, 240.0));
        assert_abs_diff_eq!(ray.direction.dot(&Vec3::z()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ray_origin_is_optical_center() {
        let extr = Extrinsics::new(Mat3::identity(), Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let ray = pixel_ray(&Intrinsics::new(1.0, 1.0, 0.0, 0.0), &extr, Vec2::zeros());
        assert_abs_diff_eq!(ray.origin.coords, Vec3::new(-1.0, -2.0, -3.0), epsilon = 1e-12);
        assert_abs_diff_eq!(extr.optical_center().coords, ray.origin.coords, epsilon = 1e-12);
    }

    #[test]
    fn project_pixel_ray_round_trip() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..100 {
            let intr = Intrinsics::new(
                rng.random_range(200.0..2000.0),
                rng.random_range(200.0..2000.0),
                rng.random_range(-50.0..700.0),
                rng.random_range(-50.0..500.0),
            );
            let extr = Extrinsics {
                rotation: random_rotation(&mut rng),
                translation: Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
            };
            let pixel = Vec2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..800.0));
            let ray = pixel_ray(&intr, &extr, pixel);
            for lambda in [0.1, 1.0, 10.0] {
                let back = project(&intr, &extr, &ray.point_at(lambda)).unwrap();
                assert_abs_diff_eq!(back, pixel, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn ray_plane_hits_board_origin() {
        let ray = Ray::new(Pt3::new(0.0, 0.0, -1.0), Vec3::z()).unwrap();
        let hit = ray_plane_intersect(&ray, &Plane::board()).unwrap();
        assert_abs_diff_eq!(hit.coords, Vec3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn oblique_ray_plane_intersection() {
        let ray = Ray::new(Pt3::new(0.0, 0.0, -2.0), Vec3::new(1.0, 0.0, 1.0)).unwrap();
        let hit = ray_plane_intersect(&ray, &Plane::board()).unwrap();
        assert_abs_diff_eq!(hit.coords, Vec3::new(2.0, 0.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn parallel_ray_is_rejected() {
        let ray = Ray::new(Pt3::new(0.0, 0.0, 1.0), Vec3::x()).unwrap();
        assert!(matches!(
            ray_plane_intersect(&ray, &Plane::board()),
            Err(GeomError::RayParallelToPlane)
        ));
    }

    #[test]
    fn intersection_behind_origin_is_rejected() {
        let ray = Ray::new(Pt3::new(0.0, 0.0, 1.0), Vec3::z()).unwrap();
        assert!(matches!(
            ray_plane_intersect(&ray, &Plane::board()),
            Err(GeomError::IntersectionBehindOrigin { .. })
        ));
    }

    #[test]
    fn intersection_invariant_to_direction_scale() {
        let origin = Pt3::new(0.3, -0.2, -1.7);
        let a = Ray::new(origin, Vec3::new(0.2, 0.1, 0.5)).unwrap();
        let b = Ray::new(origin, Vec3::new(0.2, 0.1, 0.5) * 37.0).unwrap();
        let pa = ray_plane_intersect(&a, &Plane::board()).unwrap();
        let pb = ray_plane_intersect(&b, &Plane::board()).unwrap();
        assert_abs_diff_eq!(pa.coords, pb.coords, epsilon = 1e-12);
    }

    #[test]
    fn homography_identity_and_scale() {
        let id = Homography2D::identity();
        assert_abs_diff_eq!(id.apply(Vec2::new(3.0, 4.0)).unwrap(), Vec2::new(3.0, 4.0), epsilon = 1e-15);
        let scale = Homography2D::new(Mat3::from_diagonal(&Vec3::new(2.0, 2.0, 1.0)));
        assert_abs_diff_eq!(scale.apply(Vec2::new(3.0, 4.0)).unwrap(), Vec2::new(6.0, 8.0), epsilon = 1e-15);
    }

    #[test]
    fn homography_point_at_infinity() {
        let mut m = Mat3::identity();
        m.set_row(2, &na::RowVector3::new(1.0, 0.0, 0.0));
        let h = Homography2D::new(m);
        assert!(matches!(h.apply(Vec2::new(0.0, 5.0)), Err(GeomError::PointAtInfinity)));
    }

    #[test]
    fn homography_application_is_projective() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let m = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0)) + Mat3::identity();
            let h = Homography2D::new(m);
            let hs = Homography2D::new(m * rng.random_range(0.1..10.0));
            let p = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            match (h.apply(p), hs.apply(p)) {
                (Ok(a), Ok(b)) => assert_abs_diff_eq!(a, b, epsilon = 1e-9),
                _ => {}
            }
        }
    }

    #[test]
    fn rodrigues_zero_is_identity() {
        assert_abs_diff_eq!(rodrigues(&Vec3::zeros()), Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = rodrigues(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert_abs_diff_eq!(r * Vec3::x(), Vec3::y(), epsilon = 1e-12);
    }

    #[test]
    fn rodrigues_round_trip() {
        let mut rng = StdRng::seed_from_u64(13);
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize()
                * rng.random_range(1e-6..3.0);
            let back = rodrigues_inv(&rodrigues(&v));
            worst = worst.max((back - v).norm());
        }
        assert!(worst < 1e-9, "worst round-trip error {worst:.3e}");
    }

    #[test]
    fn rodrigues_near_pi_round_trip() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..50 {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize()
                * (std::f64::consts::PI - rng.random_range(1e-9..1e-7));
            let back = rodrigues_inv(&rodrigues(&v));
            assert!((back - v).norm() < 1e-6, "near-pi error {:.3e}", (back - v).norm());
        }
    }

    #[test]
    fn rodrigues_outputs_are_rotations() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            assert!(Extrinsics::new(r, Vec3::zeros()).is_ok());
        }
    }

    #[test]
    fn looking_at_points_axis_through_target() {
        let pos = Pt3::new(0.5, -0.3, 2.0);
        let target = Pt3::new(0.1, 0.2, 0.0);
        let extr = Extrinsics::looking_at(pos, target, -Vec3::y()).unwrap();
        assert!(Extrinsics::new(extr.rotation, extr.translation).is_ok());
        assert_abs_diff_eq!(extr.optical_center().coords, pos.coords, epsilon = 1e-12);
        let dev = extr.to_device(&target);
        assert_abs_diff_eq!(dev.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dev.y, 0.0, epsilon = 1e-12);
        assert!(dev.z > 0.0);
    }
}
