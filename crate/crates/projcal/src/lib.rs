//! Geometric calibration of multi-projector rigs from cameras embedded in the
//! projection surface.
//!
//! The library covers the full pipeline:
//!
//! 1. [`codec`] builds time-multiplexed structured-light pattern sets (projector
//!    ID bits, Gray-coded pixel coordinates, line shifts) and decodes per-pixel
//!    time series back to (projector, pixel) assignments.
//! 2. [`sim`] renders what each embedded camera records under a configurable
//!    rig: ray optics between optical centers, angular falloff, point-spread
//!    blur, ambient light and sensor noise. It also exposes ground-truth
//!    oracles for every quantity the pipeline estimates.
//! 3. [`decode`] turns capture stacks into per-projector correspondences.
//! 4. [`compensate`] measures each camera's mounting misalignment as a
//!    homography from camera pixels to board millimeters and applies it.
//! 5. [`calib`] runs planar calibration per projector: homography estimation,
//!    closed-form intrinsics, per-pose extrinsics and bundle refinement.
//! 6. [`eval`] quantifies the result: pattern budgets, reprojection and
//!    alignment errors, contrast transfer, ambient robustness.
//! 7. [`scenario`], [`pipeline`] and [`report`] wire the stages into the
//!    `projcal` command-line tool.

pub mod calib;
pub mod codec;
pub mod compensate;
pub mod decode;
pub mod eval;
pub mod geom;
pub mod pipeline;
pub mod raster;
pub mod report;
pub mod scenario;
pub mod sim;

#[cfg(test)]
pub(crate) mod testutil;
