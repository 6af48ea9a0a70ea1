//! Levenberg-Marquardt refinement of the reprojection error over intrinsics
//! and per-pose extrinsics, with an analytic Jacobian.

use nalgebra as na;
use serde::{Deserialize, Serialize};

use super::{CalibError, CalibrationResult, PoseObservations};
use crate::geom::{rodrigues, rodrigues_inv, sinc_terms, skew, Extrinsics, Intrinsics, Mat3};

type Vec3 = na::Vector3<f64>;
type DVec = na::DVector<f64>;
type DMat = na::DMatrix<f64>;

/// Damping beyond this cannot produce a solvable system and the normal
/// equations are declared singular.
pub const DAMPING_MAX: f64 = 1e12;
const DAMPING_MIN: f64 = 1e-12;
/// Keeps the Marquardt diagonal strictly positive for unconstrained columns.
const DIAG_FLOOR: f64 = 1e-12;
/// Depth below which a trial configuration is rejected outright.
const TRIAL_MIN_DEPTH: f64 = 1e-9;
/// Angle below which the derivative factors switch to their series. At the
/// switch both branches are accurate to about 1e-12: the closed forms lose
/// eps/theta^2 to cancellation going down, the series truncate at theta^6
/// going up.
const DERIV_SERIES_SWITCH: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmOptions {
    pub max_iters: usize,
    pub damping_init: f64,
    /// Relative cost decrease below which an accepted step ends the search.
    pub tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iters: 60,
            damping_init: 1e-3,
            tol: 1e-12,
        }
    }
}

/// d(sin t / t)/dt / t and d((1-cos t)/t^2)/dt / t, series below the switch.
/// The closed form writes 1 - cos t as 2 sin^2(t/2); the direct subtraction
/// leaves an absolute error near eps that the t^4 divisor blows up.
fn sinc_deriv_terms(theta: f64) -> (f64, f64) {
    if theta < DERIV_SERIES_SWITCH {
        let t2 = theta * theta;
        (
            -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let half = (0.5 * theta).sin();
        let t3 = theta * theta * theta;
        (
            (theta * c - s) / t3,
            (theta * s - 4.0 * half * half) / (t3 * theta),
        )
    }
}

/// Packed parameters: fx, fy, cx, cy, then (rodrigues, translation) per pose.
fn pack(result: &CalibrationResult) -> DVec {
    let mut p = DVec::zeros(4 + 6 * result.poses.len());
    p[0] = result.intrinsics.fx;
    p[1] = result.intrinsics.fy;
    p[2] = result.intrinsics.cx;
    p[3] = result.intrinsics.cy;
    for (i, extr) in result.poses.iter().enumerate() {
        let w = rodrigues_inv(&extr.rotation);
        let base = 4 + 6 * i;
        for k in 0..3 {
            p[base + k] = w[k];
            p[base + 3 + k] = extr.translation[k];
        }
    }
    p
}

fn unpack(params: &DVec, num_poses: usize) -> (Intrinsics, Vec<Extrinsics>) {
    let intrinsics = Intrinsics {
        fx: params[0],
        fy: params[1],
        cx: params[2],
        cy: params[3],
    };
    let poses = (0..num_poses)
        .map(|i| {
            let base = 4 + 6 * i;
            let w = Vec3::new(params[base], params[base + 1], params[base + 2]);
            let t = Vec3::new(params[base + 3], params[base + 4], params[base + 5]);
            Extrinsics {
                rotation: rodrigues(&w),
                translation: t,
            }
        })
        .collect();
    (intrinsics, poses)
}

fn residual_count(observations: &[PoseObservations]) -> usize {
    2 * observations.iter().map(|o| o.points.len()).sum::<usize>()
}

/// Stacked (u - u_obs, v - v_obs) residuals, or None when any point leaves the
/// valid depth range under this parameter vector.
fn residuals(params: &DVec, observations: &[PoseObservations]) -> Option<DVec> {
    let (intr, poses) = unpack(params, observations.len());
    let mut r = DVec::zeros(residual_count(observations));
    let mut row = 0;
    for (extr, obs) in poses.iter().zip(observations) {
        for &(board, pixel) in &obs.points {
            let xc = extr.rotation * Vec3::new(board.x, board.y, 0.0) + extr.translation;
            if xc.z < TRIAL_MIN_DEPTH {
                return None;
            }
            r[row] = intr.fx * xc.x / xc.z + intr.cx - pixel.x;
            r[row + 1] = intr.fy * xc.y / xc.z + intr.cy - pixel.y;
            row += 2;
        }
    }
    r.iter().all(|v| v.is_finite()).then_some(r)
}

/// Analytic Jacobian of `residuals` at `params`. Column order matches the
/// packing: 4 intrinsics, then 6 per pose.
fn jacobian(params: &DVec, observations: &[PoseObservations]) -> DMat {
    let (intr, poses) = unpack(params, observations.len());
    let mut j = DMat::zeros(residual_count(observations), params.len());
    let mut row = 0;
    for (i, (extr, obs)) in poses.iter().zip(observations).enumerate() {
        let base = 4 + 6 * i;
        let w = Vec3::new(params[base], params[base + 1], params[base + 2]);
        let theta = w.norm();
        let (a, b) = sinc_terms(theta);
        let (da, db) = sinc_deriv_terms(theta);
        let k = skew(&w);
        let k2 = k * k;
        // dR/dw_j with R = I + a [w]x + b [w]x^2; the chain rule on theta
        // brings in the per-component factor w_j.
        let dr: [Mat3; 3] = std::array::from_fn(|axis| {
            let mut e = Vec3::zeros();
            e[axis] = 1.0;
            let es = skew(&e);
            da * w[axis] * k + a * es + db * w[axis] * k2 + b * (es * k + k * es)
        });

        for &(board, _) in &obs.points {
            let x = Vec3::new(board.x, board.y, 0.0);
            let xc = extr.rotation * x + extr.translation;
            let z_inv = 1.0 / xc.z;
            // du/dXc and dv/dXc for u = fx x/z + cx, v = fy y/z + cy.
            let du = Vec3::new(intr.fx * z_inv, 0.0, -intr.fx * xc.x * z_inv * z_inv);
            let dv = Vec3::new(0.0, intr.fy * z_inv, -intr.fy * xc.y * z_inv * z_inv);

            j[(row, 0)] = xc.x * z_inv;
            j[(row, 2)] = 1.0;
            j[(row + 1, 1)] = xc.y * z_inv;
            j[(row + 1, 3)] = 1.0;
            for axis in 0..3 {
                let dxc = dr[axis] * x;
                j[(row, base + axis)] = du.dot(&dxc);
                j[(row + 1, base + axis)] = dv.dot(&dxc);
                j[(row, base + 3 + axis)] = du[axis];
                j[(row + 1, base + 3 + axis)] = dv[axis];
            }
            row += 2;
        }
    }
    j
}

/// Maximum relative disagreement between the analytic Jacobian and central
/// finite differences with the given step, over all entries.
pub fn jacobian_discrepancy(
    result: &CalibrationResult,
    observations: &[PoseObservations],
    step: f64,
) -> f64 {
    let params = pack(result);
    let analytic = jacobian(&params, observations);
    let mut worst = 0.0_f64;
    for col in 0..params.len() {
        let mut plus = params.clone();
        plus[col] += step;
        let mut minus = params.clone();
        minus[col] -= step;
        let rp = residuals(&plus, observations).expect("step stays in the valid domain");
        let rm = residuals(&minus, observations).expect("step stays in the valid domain");
        for row in 0..rp.len() {
            let numeric = (rp[row] - rm[row]) / (2.0 * step);
            let a = analytic[(row, col)];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Refines the model and reports the accepted-step cost trace, starting with
/// the initial cost. Costs are sums of squared pixel residuals.
pub fn refine_lm_with_trace(
    init: &CalibrationResult,
    observations: &[PoseObservations],
    options: &LmOptions,
) -> Result<(CalibrationResult, Vec<f64>), CalibError> {
    assert_eq!(
        init.poses.len(),
        observations.len(),
        "one observation set per initial pose"
    );
    let mut params = pack(init);
    let mut r = residuals(&params, observations).ok_or(CalibError::DegenerateConfiguration {
        reason: "initial model puts a board point at non-positive depth",
    })?;
    let mut cost = r.norm_squared();
    let mut trace = vec![cost];
    if options.max_iters == 0 {
        return Ok((init.clone(), trace));
    }

    let n = params.len();
    let mut lambda = options.damping_init;
    'outer: for _ in 0..options.max_iters {
        let j = jacobian(&params, observations);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = jt * &r;
        loop {
            let mut m = jtj.clone();
            for d in 0..n {
                m[(d, d)] += lambda * jtj[(d, d)].max(DIAG_FLOOR);
            }
            let delta = match na::Cholesky::new(m) {
                Some(chol) => chol.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    if lambda > DAMPING_MAX {
                        return Err(CalibError::SingularNormalEquations { damping: lambda });
                    }
                    continue;
                }
            };
            let trial = &params + &delta;
            let accepted = residuals(&trial, observations)
                .map(|r_new| (r_new.norm_squared(), r_new))
                .filter(|(c, _)| *c <= cost);
            match accepted {
                Some((new_cost, r_new)) => {
                    let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                    params = trial;
                    r = r_new;
                    cost = new_cost;
                    trace.push(cost);
                    lambda = (lambda * 0.1).max(DAMPING_MIN);
                    if rel < options.tol {
                        break 'outer;
                    }
                    break;
                }
                None => {
                    lambda *= 10.0;
                    if lambda > DAMPING_MAX {
                        // No descent direction left; the current point is the
                        // minimum this search can certify.
                        break 'outer;
                    }
                }
            }
        }
    }

    let (intrinsics, poses) = unpack(&params, observations.len());
    let refined = CalibrationResult::from_model(
        intrinsics,
        poses,
        init.pose_indices.clone(),
        observations,
    );
    Ok((refined, trace))
}

/// `refine_lm_with_trace` without the trace.
pub fn refine_lm(
    init: &CalibrationResult,
    observations: &[PoseObservations],
    options: &LmOptions,
) -> Result<CalibrationResult, CalibError> {
    refine_lm_with_trace(init, observations, options).map(|(r, _)| r)
}
