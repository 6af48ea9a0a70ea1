//! Capture stacks to correspondences: illumination classification, projector-ID
//! blob grouping, intensity averaging, and temporal decoding of p_m(n).
//!
//! Light from each projector lands on a camera as one blob that may span
//! several pixels. Grouping decodes the projector-ID bits per lit pixel, forms
//! 8-connected components of equal ID, and averages the member time series
//! before the final decode, which suppresses per-pixel noise.

use nalgebra as na;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    decode_timeseries, CodecError, DecodeParams, DuplicatePolicy, PatternFrame, PatternSet,
};
use crate::sim::CaptureStack;

type Vec2 = na::Vector2<f64>;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("capture stack has no frames")]
    EmptyStack,
    #[error("stack has {got} frames but the pattern set has {expected}")]
    FrameCountMismatch { expected: usize, got: usize },
    #[error(
        "projector {projector} decoded from two disjoint blobs at ({x0:.1}, {y0:.1}) and ({x1:.1}, {y1:.1})"
    )]
    DuplicateProjectorBlob { projector: u32, x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// One decoded projector-camera link. `board_point` stays empty until a
/// misalignment map lifts the camera pixel onto the board.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub pose: usize,
    pub camera: usize,
    pub projector: usize,
    /// Projector pixel illuminating the camera's optical center (sub-pixel).
    pub projector_pixel: Vec2,
    /// Centroid of the camera pixels lit by that projector (sub-pixel).
    pub camera_pixel: Vec2,
    /// Board-plane location of the ray, in millimeters.
    pub board_point: Option<Vec2>,
}

/// Connected set of lit pixels that all decode to the same projector ID.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobGroup {
    pub projector: u32,
    pub pixels: Vec<(u32, u32)>,
    pub centroid: Vec2,
    pub mean_series: Vec<f64>,
}

impl BlobGroup {
    /// Temporal amplitude of the averaged series; the duplicate policy ranks
    /// competing blobs by this.
    pub fn amplitude(&self) -> f64 {
        let lo = self.mean_series.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.mean_series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

fn stack_dims(stack: &CaptureStack) -> Result<(usize, usize), DecodeError> {
    let first = stack.frames.first().ok_or(DecodeError::EmptyStack)?;
    Ok((first.width() as usize, first.height() as usize))
}

/// Marks pixels whose temporal amplitude exceeds the illumination threshold.
/// The mask is row-major over the sensor.
pub fn classify_lit_pixels(
    stack: &CaptureStack,
    params: &DecodeParams,
) -> Result<Vec<bool>, DecodeError> {
    let (w, h) = stack_dims(stack)?;
    let mut lo = vec![f64::INFINITY; w * h];
    let mut hi = vec![f64::NEG_INFINITY; w * h];
    for frame in &stack.frames {
        for (i, &v) in frame.data().iter().enumerate() {
            if v < lo[i] {
                lo[i] = v;
            }
            if v > hi[i] {
                hi[i] = v;
            }
        }
    }
    let gate = params.intensity_threshold * crate::codec::DYNAMIC_RANGE;
    Ok((0..w * h).map(|i| hi[i] - lo[i] > gate).collect())
}

/// Groups lit pixels into per-projector blobs.
///
/// Each lit pixel's ID bits are binarized against that pixel's own mid-range;
/// pixels with equal ID merge into 8-connected components. A component's
/// centroid is the unweighted mean of its pixel coordinates and its time
/// series the per-frame mean over members. Pixels whose ID code falls outside
/// the pattern set are dropped. Two disjoint components with the same ID are
/// resolved by `params.duplicate_policy`.
pub fn group_by_projector(
    stack: &CaptureStack,
    patterns: &PatternSet,
    mask: &[bool],
    params: &DecodeParams,
) -> Result<Vec<BlobGroup>, DecodeError> {
    let (w, h) = stack_dims(stack)?;
    if stack.frames.len() != patterns.len() {
        return Err(DecodeError::FrameCountMismatch {
            expected: patterns.len(),
            got: stack.frames.len(),
        });
    }
    let num_projectors = patterns.spec().num_projectors;

    // Per-pixel projector ID; -1 for unlit or undecodable pixels.
    let mut ids = vec![-1i64; w * h];
    for i in 0..w * h {
        if !mask[i] {
            continue;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for frame in &stack.frames {
            let v = frame.data()[i];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let threshold = (hi + lo) / 2.0;
        let mut code = 0u32;
        for (frame, raster) in patterns.frames().iter().zip(&stack.frames) {
            if let PatternFrame::IdBit(k) = frame {
                if raster.data()[i] > threshold {
                    code |= 1 << k;
                }
            }
        }
        if code < num_projectors {
            ids[i] = i64::from(code);
        } else {
            log::debug!(
                "camera {} pose {}: pixel {} decodes to out-of-range projector {code}",
                stack.camera,
                stack.pose,
                i
            );
        }
    }

    // 8-connected components over equal-ID pixels, in scan order.
    let mut component = vec![usize::MAX; w * h];
    let mut groups: Vec<BlobGroup> = Vec::new();
    let mut stack_px: Vec<usize> = Vec::new();
    for start in 0..w * h {
        if ids[start] < 0 || component[start] != usize::MAX {
            continue;
        }
        let label = groups.len();
        let id = ids[start];
        let mut members: Vec<usize> = Vec::new();
        component[start] = label;
        stack_px.push(start);
        while let Some(i) = stack_px.pop() {
            members.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if ids[j] == id && component[j] == usize::MAX {
                        component[j] = label;
                        stack_px.push(j);
                    }
                }
            }
        }
        members.sort_unstable();
        let mut centroid = Vec2::zeros();
        let mut mean_series = vec![0.0; stack.frames.len()];
        for &i in &members {
            centroid += Vec2::new((i % w) as f64, (i / w) as f64);
            for (f, acc) in stack.frames.iter().zip(&mut mean_series) {
                *acc += f.data()[i];
            }
        }
        let count = members.len() as f64;
        centroid /= count;
        for v in &mut mean_series {
            *v /= count;
        }
        groups.push(BlobGroup {
            projector: id as u32,
            pixels: members.iter().map(|&i| ((i % w) as u32, (i / w) as u32)).collect(),
            centroid,
            mean_series,
        });
    }

    // Resolve duplicate IDs.
    let mut kept: Vec<BlobGroup> = Vec::new();
    for g in groups {
        match kept.iter_mut().find(|k| k.projector == g.projector) {
            None => kept.push(g),
            Some(existing) => match params.duplicate_policy {
                DuplicatePolicy::Error => {
                    return Err(DecodeError::DuplicateProjectorBlob {
                        projector: g.projector,
                        x0: existing.centroid.x,
                        y0: existing.centroid.y,
                        x1: g.centroid.x,
                        y1: g.centroid.y,
                    });
                }
                DuplicatePolicy::KeepBrightest => {
                    log::warn!(
                        "camera {} pose {}: duplicate blobs for projector {}, keeping the brighter",
                        stack.camera,
                        stack.pose,
                        g.projector
                    );
                    if g.amplitude() > existing.amplitude() {
                        *existing = g;
                    }
                }
            },
        }
    }
    kept.sort_by_key(|g| g.projector);
    Ok(kept)
}

/// Full per-stack decode: classify, group, then decode each group's averaged
/// series. Groups that fail to decode are skipped and logged; a group whose
/// final ID disagrees with its grouping ID is likewise skipped.
pub fn extract_correspondences(
    stack: &CaptureStack,
    patterns: &PatternSet,
    params: &DecodeParams,
) -> Result<Vec<Correspondence>, DecodeError> {
    let mask = classify_lit_pixels(stack, params)?;
    let groups = group_by_projector(stack, patterns, &mask, params)?;
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        match decode_timeseries(patterns, &g.mean_series, params) {
            Ok(d) if d.projector == g.projector => out.push(Correspondence {
                pose: stack.pose,
                camera: stack.camera,
                projector: d.projector as usize,
                projector_pixel: Vec2::new(d.subpixel.0, d.subpixel.1),
                camera_pixel: g.centroid,
                board_point: None,
            }),
            Ok(d) => log::warn!(
                "camera {} pose {}: blob grouped as projector {} decoded as {}, skipping",
                stack.camera,
                stack.pose,
                g.projector,
                d.projector
            ),
            Err(e) => log::warn!(
                "camera {} pose {}: blob for projector {} failed to decode: {e}",
                stack.camera,
                stack.pose,
                g.projector
            ),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{build_pattern_set, PatternSetSpec, SubpixelFit};
    use crate::raster::Raster;
    use crate::sim::{capture_stack, ground_truth_correspondence};
    use crate::testutil::{test_patterns, test_rig};

    fn manual_stack(frames: Vec<Raster>) -> CaptureStack {
        CaptureStack { camera: 0, pose: 0, frames }
    }

    /// Stack where listed pixels replay projector `m`'s code for panel pixel
    /// (px, py), everything else stays dark.
    fn painted_stack(
        patterns: &PatternSet,
        blobs: &[(u32, (u32, u32), &[(u32, u32)])],
        w: u32,
        h: u32,
    ) -> CaptureStack {
        let mut frames = Vec::new();
        for frame in patterns.frames() {
            let mut raster = Raster::new(w, h);
            for &(m, panel_px, members) in blobs {
                let center = (f64::from(panel_px.0), f64::from(panel_px.1));
                let v = patterns.frame_intensity(frame, m, panel_px, Some(center)).unwrap();
                for &(x, y) in members {
                    raster.set(x, y, v);
                }
            }
            frames.push(raster);
        }
        manual_stack(frames)
    }

    #[test]
    fn constant_stack_yields_empty_mask() {
        let frames = vec![Raster::filled(8, 8, 0.4); 6];
        let mask = classify_lit_pixels(&manual_stack(frames), &DecodeParams::default()).unwrap();
        assert!(mask.iter().all(|&b| !b));
    }

    #[test]
    fn classification_threshold_is_strict() {
        let mut on = Raster::new(4, 4);
        on.set(1, 1, 1.0);
        on.set(2, 2, 0.3);
        let off = Raster::new(4, 4);
        let stack = manual_stack(vec![on, off]);
        let params = DecodeParams { intensity_threshold: 0.5, ..DecodeParams::default() };
        let mask = classify_lit_pixels(&stack, &params).unwrap();
        assert!(mask[1 * 4 + 1], "amplitude 1.0 > 0.5 is lit");
        assert!(!mask[2 * 4 + 2], "amplitude 0.3 <= 0.5 stays dark");
    }

    #[test]
    fn raising_threshold_never_adds_pixels() {
        let rig = test_rig(3);
        let patterns = test_patterns(&rig, 0);
        let stack = capture_stack(&rig, &patterns, 0, 0).unwrap();
        let mut previous: Option<Vec<bool>> = None;
        for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let params = DecodeParams { intensity_threshold: t, ..DecodeParams::default() };
            let mask = classify_lit_pixels(&stack, &params).unwrap();
            if let Some(prev) = &previous {
                for (a, b) in mask.iter().zip(prev) {
                    assert!(!a | b, "pixel lit at t={t} but not at the lower threshold");
                }
            }
            previous = Some(mask);
        }
    }

    #[test]
    fn five_pixel_blob_groups_to_its_mean() {
        let spec = PatternSetSpec::new(4, 8, 8, 0, true).unwrap();
        let patterns = build_pattern_set(&spec).unwrap();
        let members = [(4, 4), (5, 4), (4, 5), (5, 5), (6, 5)];
        let stack = painted_stack(&patterns, &[(3, (2, 6), &members)], 12, 12);
        let mask = classify_lit_pixels(&stack, &DecodeParams::default()).unwrap();
        let groups =
            group_by_projector(&stack, &patterns, &mask, &DecodeParams::default()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].projector, 3);
        assert_eq!(groups[0].pixels.len(), 5);
        assert!((groups[0].centroid - Vec2::new(4.8, 4.6)).norm() < 1e-12);
    }

    #[test]
    fn empty_mask_produces_no_groups() {
        let spec = PatternSetSpec::new(2, 8, 8, 0, true).unwrap();
        let patterns = build_pattern_set(&spec).unwrap();
        let frames = vec![Raster::new(6, 6); patterns.len()];
        let stack = manual_stack(frames);
        let mask = vec![false; 36];
        let groups =
            group_by_projector(&stack, &patterns, &mask, &DecodeParams::default()).unwrap();
        assert!(groups.is_empty());
    }

    #[test]
    fn duplicate_blobs_follow_the_policy() {
        let spec = PatternSetSpec::new(2, 8, 8, 0, true).unwrap();
        let patterns = build_pattern_set(&spec).unwrap();
        // Two disjoint blobs claiming projector 1; the second is dimmer.
        let mut stack = painted_stack(&patterns, &[(1, (3, 3), &[(1, 1), (2, 1)])], 12, 12);
        for (fi, frame) in patterns.frames().iter().enumerate() {
            let v = patterns.frame_intensity(frame, 1, (5, 5), Some((5.0, 5.0))).unwrap();
            stack.frames[fi].set(8, 8, 0.6 * v);
        }
        let mask = classify_lit_pixels(&stack, &DecodeParams::default()).unwrap();

        let keep = DecodeParams::default();
        let groups = group_by_projector(&stack, &patterns, &mask, &keep).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].pixels.len(), 2, "brighter two-pixel blob wins");

        let strict = DecodeParams {
            duplicate_policy: DuplicatePolicy::Error,
            ..DecodeParams::default()
        };
        assert!(matches!(
            group_by_projector(&stack, &patterns, &mask, &strict),
            Err(DecodeError::DuplicateProjectorBlob { projector: 1, .. })
        ));
    }

    #[test]
    fn noiseless_rig_decodes_every_pair_at_coarse_precision() {
        let rig = test_rig(4);
        let patterns = test_patterns(&rig, 0);
        for n in 0..4 {
            let stack = capture_stack(&rig, &patterns, 0, n).unwrap();
            let corrs =
                extract_correspondences(&stack, &patterns, &DecodeParams::default()).unwrap();
            assert_eq!(corrs.len(), 4, "camera {n} should see all projectors");
            for c in &corrs {
                let gt = ground_truth_correspondence(&rig, 0, c.projector, n).unwrap();
                assert_eq!(c.projector_pixel.x, gt.projector_pixel.x.round());
                assert_eq!(c.projector_pixel.y, gt.projector_pixel.y.round());
                assert!((c.camera_pixel.x - gt.camera_pixel.x).abs() <= 0.5 + 1e-9);
                assert!((c.camera_pixel.y - gt.camera_pixel.y).abs() <= 0.5 + 1e-9);
            }
        }
    }

    #[test]
    fn blur_and_noise_stay_within_half_pixel() {
        let mut rig = test_rig(4);
        rig.noise_sigma = 0.01;
        rig.ambient_level = 0.05;
        for cam in &mut rig.cameras {
            cam.psf_sigma = 2.0;
            cam.gain = 0.8;
        }
        let patterns = test_patterns(&rig, 0);
        let mut checked = 0;
        for n in 0..4 {
            let stack = capture_stack(&rig, &patterns, 0, n).unwrap();
            let corrs =
                extract_correspondences(&stack, &patterns, &DecodeParams::default()).unwrap();
            assert_eq!(corrs.len(), 4);
            for c in &corrs {
                let gt = ground_truth_correspondence(&rig, 0, c.projector, n).unwrap();
                assert!((c.projector_pixel.x - gt.projector_pixel.x).abs() <= 0.5);
                assert!((c.projector_pixel.y - gt.projector_pixel.y).abs() <= 0.5);
                checked += 1;
            }
        }
        assert_eq!(checked, 16);
    }

    #[test]
    fn relabeling_projectors_permutes_output_labels() {
        let rig = test_rig(2);
        let mut swapped = rig.clone();
        swapped.projectors.reverse();
        let patterns = test_patterns(&rig, 0);
        for n in 0..4 {
            let a = extract_correspondences(
                &capture_stack(&rig, &patterns, 0, n).unwrap(),
                &patterns,
                &DecodeParams::default(),
            )
            .unwrap();
            let b = extract_correspondences(
                &capture_stack(&swapped, &patterns, 0, n).unwrap(),
                &patterns,
                &DecodeParams::default(),
            )
            .unwrap();
            assert_eq!(a.len(), b.len());
            for ca in &a {
                let cb = b.iter().find(|c| c.projector == 1 - ca.projector).unwrap();
                assert_eq!(ca.projector_pixel, cb.projector_pixel);
                assert_eq!(ca.camera_pixel, cb.camera_pixel);
            }
        }
    }

    #[test]
    fn averaging_matches_centroid_pixel_for_symmetric_blobs() {
        let spec = PatternSetSpec::new(2, 16, 16, 6, true).unwrap();
        let patterns = build_pattern_set(&spec).unwrap();
        // Symmetric 3×3 blob: averaging its series must equal decoding the
        // center pixel's series.
        let members: Vec<(u32, u32)> =
            (3..6).flat_map(|y| (4..7).map(move |x| (x, y))).collect();
        let stack = painted_stack(&patterns, &[(1, (9, 11), &members)], 12, 12);
        let params = DecodeParams { subpixel_fit: SubpixelFit::Centroid, ..Default::default() };
        let corrs = extract_correspondences(&stack, &patterns, &params).unwrap();
        assert_eq!(corrs.len(), 1);
        let center_series: Vec<f64> =
            stack.frames.iter().map(|f| f.get(5, 4)).collect();
        let d = decode_timeseries(&patterns, &center_series, &params).unwrap();
        assert_eq!(corrs[0].projector_pixel, Vec2::new(d.subpixel.0, d.subpixel.1));
        assert_eq!(corrs[0].camera_pixel, Vec2::new(5.0, 4.0));
    }
}
