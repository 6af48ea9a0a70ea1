//! Time-multiplexed structured-light codec.
//!
//! A pattern set interleaves four frame families, projected by all projectors
//! simultaneously:
//!
//! * optional uniform White/Black reference frames,
//! * projector-ID bits: spatially uniform frames whose on/off state over time
//!   spells each projector's index in plain binary (MSB first),
//! * Gray-code frames for the x and y pixel coordinate (MSB first),
//! * line-shift frames: a one-pixel-wide line stepped around the coarse
//!   estimate, for sub-pixel peak localization.
//!
//! Decoding is purely temporal: each pixel's intensity sequence is binarized
//! against its own mid-range, so the codec is invariant to global affine
//! intensity changes (gain/offset) that do not saturate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Capture intensities are normalized to [0, 1]; thresholds are fractions of
/// this range.
pub const DYNAMIC_RANGE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("value {value} does not fit in {bits} bits")]
    ValueOutOfRange { value: u32, bits: u32 },
    #[error("invalid pattern spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("line-shift frame evaluated without a coarse center")]
    MissingCoarseCenter,
    #[error("pixel ({x}, {y}) outside the {width}x{height} panel")]
    PixelOutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("projector index {m} out of range (M = {count})")]
    ProjectorOutOfBounds { m: u32, count: u32 },
    #[error("sample count {got} does not match frame count {expected}")]
    SampleCountMismatch { expected: usize, got: usize },
    #[error("time series is not illuminated (amplitude below threshold)")]
    NotIlluminated,
    #[error("sample in frame {frame} falls inside the binarization guard band")]
    AmbiguousBit { frame: usize },
    #[error("decoded {what} {value} exceeds bound {bound}")]
    InvalidCode { what: &'static str, value: u32, bound: u32 },
}

/// Bits needed to enumerate `n` values; 0 for n ≤ 1.
pub fn bits_for(n: u32) -> u32 {
    if n <= 1 {
        0
    } else {
        32 - (n - 1).leading_zeros()
    }
}

/// Reflected binary code of `value`.
pub fn gray_encode(value: u32, bits: u32) -> Result<u32, CodecError> {
    if bits < 32 && u64::from(value) >= 1u64 << bits {
        return Err(CodecError::ValueOutOfRange { value, bits });
    }
    Ok(value ^ (value >> 1))
}

pub fn gray_decode(code: u32) -> u32 {
    let mut value = code;
    let mut shift = 1;
    while (code >> shift) != 0 {
        value ^= code >> shift;
        shift += 1;
    }
    value
}

/// Dimensions of a pattern set.
///
/// `line_shift_count` is the total number of line-shift frames L, split evenly
/// between x and y sweeps of offsets −hw ..= +hw, so L must be 0 or satisfy
/// L = 2·(2·hw + 1) for the stored half-window hw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSetSpec {
    pub num_projectors: u32,
    pub projector_width: u32,
    pub projector_height: u32,
    pub line_shift_count: u32,
    pub line_shift_half_window: u32,
    pub include_reference_frames: bool,
}

impl PatternSetSpec {
    /// Builds a spec from the line-shift frame count, deriving the half-window.
    pub fn new(
        num_projectors: u32,
        projector_width: u32,
        projector_height: u32,
        line_shift_count: u32,
        include_reference_frames: bool,
    ) -> Result<Self, CodecError> {
        let line_shift_half_window =
            if line_shift_count == 0 { 0 } else { (line_shift_count / 2).saturating_sub(1) / 2 };
        let spec = Self {
            num_projectors,
            projector_width,
            projector_height,
            line_shift_count,
            line_shift_half_window,
            include_reference_frames,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let fail = |reason: &str| Err(CodecError::InvalidSpec { reason: reason.to_string() });
        if self.num_projectors < 1 {
            return fail("need at least one projector");
        }
        if self.projector_width < 2 || self.projector_height < 2 {
            return fail("panel must be at least 2x2");
        }
        let l = self.line_shift_count;
        if l > 0 {
            if l % 2 != 0 {
                return fail("line_shift_count must be even (equal x and y budgets)");
            }
            if l != 2 * (2 * self.line_shift_half_window + 1) {
                return fail("line_shift_count must equal 2*(2*half_window + 1)");
            }
        } else if self.line_shift_half_window != 0 {
            return fail("half_window must be 0 when line shifts are disabled");
        }
        Ok(())
    }

    pub fn id_bits(&self) -> u32 {
        bits_for(self.num_projectors)
    }

    pub fn x_bits(&self) -> u32 {
        bits_for(self.projector_width)
    }

    pub fn y_bits(&self) -> u32 {
        bits_for(self.projector_height)
    }

    /// Frame count entering the pattern-budget arithmetic (reference frames
    /// excluded).
    pub fn coded_frame_count(&self) -> u32 {
        self.id_bits() + self.x_bits() + self.y_bits() + self.line_shift_count
    }

    pub fn total_frame_count(&self) -> u32 {
        self.coded_frame_count() + if self.include_reference_frames { 2 } else { 0 }
    }
}

/// One projected frame, evaluable at any projector pixel for a projector `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternFrame {
    White,
    Black,
    /// Bit `k` (LSB = 0) of the projector index, as a uniform field.
    IdBit(u32),
    /// Bit `k` of the Gray-coded x coordinate.
    GrayX(u32),
    /// Bit `k` of the Gray-coded y coordinate.
    GrayY(u32),
    /// Vertical line at column round(center.x) + offset.
    LineShiftX(i32),
    /// Horizontal line at row round(center.y) + offset.
    LineShiftY(i32),
}

impl PatternFrame {
    /// Intensity of this frame at `pixel` when projected by projector `m`.
    /// Bounds are the caller's responsibility; see
    /// [`PatternSet::frame_intensity`] for the checked variant.
    pub fn value_at(
        &self,
        m: u32,
        pixel: (u32, u32),
        coarse_center: Option<(f64, f64)>,
    ) -> Result<f64, CodecError> {
        let bit = |v: u32, k: u32| f64::from((v >> k) & 1);
        match *self {
            PatternFrame::White => Ok(1.0),
            PatternFrame::Black => Ok(0.0),
            PatternFrame::IdBit(k) => Ok(bit(m, k)),
            PatternFrame::GrayX(k) => Ok(bit(pixel.0 ^ (pixel.0 >> 1), k)),
            PatternFrame::GrayY(k) => Ok(bit(pixel.1 ^ (pixel.1 >> 1), k)),
            PatternFrame::LineShiftX(d) => {
                let c = coarse_center.ok_or(CodecError::MissingCoarseCenter)?;
                Ok(f64::from(i64::from(pixel.0) == c.0.round() as i64 + i64::from(d)))
            }
            PatternFrame::LineShiftY(d) => {
                let c = coarse_center.ok_or(CodecError::MissingCoarseCenter)?;
                Ok(f64::from(i64::from(pixel.1) == c.1.round() as i64 + i64::from(d)))
            }
        }
    }

    pub fn is_binarized(&self) -> bool {
        matches!(self, PatternFrame::IdBit(_) | PatternFrame::GrayX(_) | PatternFrame::GrayY(_))
    }
}

/// Ordered frame list plus the spec that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternSet {
    spec: PatternSetSpec,
    frames: Vec<PatternFrame>,
}

/// Emits the frame sequence: [White, Black,] ID bits MSB-first, Gray x bits
/// MSB-first, Gray y bits MSB-first, x line shifts ascending, y line shifts
/// ascending.
pub fn build_pattern_set(spec: &PatternSetSpec) -> Result<PatternSet, CodecError> {
    spec.validate()?;
    let mut frames = Vec::with_capacity(spec.total_frame_count() as usize);
    if spec.include_reference_frames {
        frames.push(PatternFrame::White);
        frames.push(PatternFrame::Black);
    }
    for k in (0..spec.id_bits()).rev() {
        frames.push(PatternFrame::IdBit(k));
    }
    for k in (0..spec.x_bits()).rev() {
        frames.push(PatternFrame::GrayX(k));
    }
    for k in (0..spec.y_bits()).rev() {
        frames.push(PatternFrame::GrayY(k));
    }
    if spec.line_shift_count > 0 {
        let hw = spec.line_shift_half_window as i32;
        for d in -hw..=hw {
            frames.push(PatternFrame::LineShiftX(d));
        }
        for d in -hw..=hw {
            frames.push(PatternFrame::LineShiftY(d));
        }
    }
    Ok(PatternSet { spec: *spec, frames })
}

impl PatternSet {
    pub fn spec(&self) -> &PatternSetSpec {
        &self.spec
    }

    pub fn frames(&self) -> &[PatternFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Bounds-checked frame evaluation.
    pub fn frame_intensity(
        &self,
        frame: &PatternFrame,
        m: u32,
        pixel: (u32, u32),
        coarse_center: Option<(f64, f64)>,
    ) -> Result<f64, CodecError> {
        if m >= self.spec.num_projectors {
            return Err(CodecError::ProjectorOutOfBounds { m, count: self.spec.num_projectors });
        }
        if pixel.0 >= self.spec.projector_width || pixel.1 >= self.spec.projector_height {
            return Err(CodecError::PixelOutOfBounds {
                x: pixel.0,
                y: pixel.1,
                width: self.spec.projector_width,
                height: self.spec.projector_height,
            });
        }
        frame.value_at(m, pixel, coarse_center)
    }

    /// Intensity received from a fractional panel position, modeling the
    /// finite projector-pixel footprint as a one-pixel tent kernel (bilinear
    /// mix of the four neighbors, border taps clamped). This is what lets a
    /// line-shift sweep carry sub-pixel information: the received series
    /// becomes a triangle whose centroid sits at the true fractional
    /// coordinate instead of a single full-intensity spike at the rounded one.
    ///
    /// The position must round into the panel, matching the visibility
    /// contract of [`Self::frame_intensity`].
    pub fn frame_intensity_footprint(
        &self,
        frame: &PatternFrame,
        m: u32,
        position: (f64, f64),
        coarse_center: Option<(f64, f64)>,
    ) -> Result<f64, CodecError> {
        let (w, h) = (self.spec.projector_width, self.spec.projector_height);
        let (rx, ry) = (position.0.round(), position.1.round());
        if rx < 0.0 || ry < 0.0 || rx >= f64::from(w) || ry >= f64::from(h) {
            return Err(CodecError::PixelOutOfBounds {
                x: rx.max(0.0) as u32,
                y: ry.max(0.0) as u32,
                width: w,
                height: h,
            });
        }
        let (x0, y0) = (position.0.floor(), position.1.floor());
        let (fx, fy) = (position.0 - x0, position.1 - y0);
        let mut acc = 0.0;
        for (ix, wx) in [(x0, 1.0 - fx), (x0 + 1.0, fx)] {
            if wx == 0.0 {
                continue;
            }
            for (iy, wy) in [(y0, 1.0 - fy), (y0 + 1.0, fy)] {
                if wy == 0.0 {
                    continue;
                }
                let tap = (
                    ix.clamp(0.0, f64::from(w - 1)) as u32,
                    iy.clamp(0.0, f64::from(h - 1)) as u32,
                );
                acc += wx * wy * self.frame_intensity(frame, m, tap, coarse_center)?;
            }
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubpixelFit {
    /// Three-point parabola through the peak and its neighbors; exact for
    /// quadratic profiles.
    Parabola,
    /// Intensity-weighted mean over the whole shift window; exact for
    /// symmetric profiles fully inside the window.
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicatePolicy {
    /// Keep the blob with the larger temporal amplitude; direct light outshines
    /// stray reflections.
    KeepBrightest,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeParams {
    /// Fraction of the dynamic range a pixel's amplitude must exceed to count
    /// as illuminated.
    pub intensity_threshold: f64,
    pub subpixel_fit: SubpixelFit,
    /// Half-width of the dead zone around the binarization threshold, as a
    /// fraction of the dynamic range.
    pub guard_band: f64,
    pub duplicate_policy: DuplicatePolicy,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            intensity_threshold: 0.25,
            subpixel_fit: SubpixelFit::Parabola,
            guard_band: 0.05,
            duplicate_policy: DuplicatePolicy::KeepBrightest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedPixel {
    pub projector: u32,
    pub coarse: (u32, u32),
    pub subpixel: (f64, f64),
}

/// Decodes one pixel's intensity sequence against the pattern set.
///
/// The projector index comes from the thresholded ID bits, the coarse pixel
/// from Gray decoding, and the sub-pixel estimate from peak localization over
/// the line-shift samples (falling back to the coarse value when the set has
/// no line shifts). Binarization is against the per-pixel mid-range, which is
/// what makes the decode exposure-invariant; `params.intensity_threshold`
/// only gates whether the pixel is illuminated at all.
pub fn decode_timeseries(
    set: &PatternSet,
    samples: &[f64],
    params: &DecodeParams,
) -> Result<DecodedPixel, CodecError> {
    if samples.len() != set.frames.len() {
        return Err(CodecError::SampleCountMismatch {
            expected: set.frames.len(),
            got: samples.len(),
        });
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in samples {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if hi - lo <= params.intensity_threshold * DYNAMIC_RANGE {
        return Err(CodecError::NotIlluminated);
    }
    let threshold = (hi + lo) / 2.0;
    let guard = params.guard_band * DYNAMIC_RANGE;

    let mut id_code = 0u32;
    let mut gray_x = 0u32;
    let mut gray_y = 0u32;
    let mut shifts_x: Vec<(i32, f64)> = Vec::new();
    let mut shifts_y: Vec<(i32, f64)> = Vec::new();
    for (i, (frame, &s)) in set.frames.iter().zip(samples).enumerate() {
        if frame.is_binarized() && (s - threshold).abs() <= guard {
            return Err(CodecError::AmbiguousBit { frame: i });
        }
        let on = s > threshold;
        match *frame {
            PatternFrame::IdBit(k) if on => id_code |= 1 << k,
            PatternFrame::GrayX(k) if on => gray_x |= 1 << k,
            PatternFrame::GrayY(k) if on => gray_y |= 1 << k,
            PatternFrame::LineShiftX(d) => shifts_x.push((d, s)),
            PatternFrame::LineShiftY(d) => shifts_y.push((d, s)),
            _ => {}
        }
    }

    let spec = &set.spec;
    if id_code >= spec.num_projectors {
        return Err(CodecError::InvalidCode {
            what: "projector id",
            value: id_code,
            bound: spec.num_projectors,
        });
    }
    let x = gray_decode(gray_x);
    let y = gray_decode(gray_y);
    if x >= spec.projector_width {
        return Err(CodecError::InvalidCode { what: "x", value: x, bound: spec.projector_width });
    }
    if y >= spec.projector_height {
        return Err(CodecError::InvalidCode { what: "y", value: y, bound: spec.projector_height });
    }

    let subpixel = (
        f64::from(x) + subpixel_offset(&shifts_x, params.subpixel_fit),
        f64::from(y) + subpixel_offset(&shifts_y, params.subpixel_fit),
    );
    Ok(DecodedPixel { projector: id_code, coarse: (x, y), subpixel })
}

/// Peak offset in shift units; 0 when the window is empty or unlit.
fn subpixel_offset(shifts: &[(i32, f64)], fit: SubpixelFit) -> f64 {
    if shifts.is_empty() {
        return 0.0;
    }
    match fit {
        SubpixelFit::Parabola => {
            let peak = shifts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let base = f64::from(shifts[peak].0);
            if peak == 0 || peak == shifts.len() - 1 {
                return base;
            }
            let (sm, s0, sp) = (shifts[peak - 1].1, shifts[peak].1, shifts[peak + 1].1);
            let denom = sm - 2.0 * s0 + sp;
            if denom.abs() < 1e-12 {
                return base;
            }
            base + (0.5 * (sm - sp) / denom).clamp(-1.0, 1.0)
        }
        SubpixelFit::Centroid => {
            let total: f64 = shifts.iter().map(|&(_, s)| s).sum();
            if total <= 1e-12 {
                return 0.0;
            }
            shifts.iter().map(|&(d, s)| f64::from(d) * s).sum::<f64>() / total
        }
    }
}
