//! Frame-subtraction motion detection.
//!
//! Consecutive luma frames are (optionally) box blurred, differenced per pixel
//! and thresholded; motion is declared when the changed fraction of the frame
//! reaches `area_fraction_threshold`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::BBox;
use crate::frame::LumaFrame;

#[derive(Debug, Error, PartialEq)]
pub enum MotionError {
    #[error("frame size mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("area_fraction_threshold {0} is outside [0, 1]")]
    AreaThreshold(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub pixel_threshold: u8,
    pub area_fraction_threshold: f64,
    /// Box blur radius applied to both frames before differencing; 0 disables.
    pub blur_radius: u32,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            pixel_threshold: 25,
            area_fraction_threshold: 0.005,
            blur_radius: 1,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<(), MotionError> {
        if !(0.0..=1.0).contains(&self.area_fraction_threshold) {
            return Err(MotionError::AreaThreshold(self.area_fraction_threshold));
        }
        Ok(())
    }
}

/// Binary change mask produced by [`frame_diff`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiffMask {
    pub width: u32,
    pub height: u32,
    pub mask: Vec<bool>,
    pub changed: usize,
}

impl DiffMask {
    pub fn changed_fraction(&self) -> f64 {
        self.changed as f64 / self.mask.len() as f64
    }

    /// Minimal axis-aligned box around every changed pixel.
    pub fn bounding_box(&self) -> Option<BBox> {
        if self.changed == 0 {
            return None;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (i, _) in self.mask.iter().enumerate().filter(|(_, &m)| m) {
            let (x, y) = (i as u32 % self.width, i as u32 / self.width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Some(BBox::new(
            x0 as f64,
            y0 as f64,
            (x1 - x0 + 1) as f64,
            (y1 - y0 + 1) as f64,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MotionResult {
    pub motion: bool,
    pub changed_fraction: f64,
    pub changed_bbox: Option<BBox>,
}

impl MotionResult {
    pub fn none() -> Self {
        MotionResult {
            motion: false,
            changed_fraction: 0.0,
            changed_bbox: None,
        }
    }
}

/// Window sums over a `(2r+1)^2` box with edge pixels replicated. Comparing
/// sums against `threshold * window` is the same as comparing exact box means.
fn box_sums(frame: &LumaFrame, radius: u32) -> Vec<u32> {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let r = radius as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0u32; w * h];
    for y in 0..h {
        let row = &frame.pixels[y * w..(y + 1) * w];
        for x in 0..w {
            horiz[y * w + x] = (-r..=r).map(|d| row[clamp(x as isize + d, w)] as u32).sum();
        }
    }
    let mut out = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .map(|d| horiz[clamp(y as isize + d, h) * w + x])
                .sum();
        }
    }
    out
}

pub fn frame_diff(
    prev: &LumaFrame,
    curr: &LumaFrame,
    pixel_threshold: u8,
    blur_radius: u32,
) -> Result<DiffMask, MotionError> {
    if prev.width != curr.width || prev.height != curr.height {
        return Err(MotionError::DimensionMismatch(
            prev.width,
            prev.height,
            curr.width,
            curr.height,
        ));
    }
    let mask: Vec<bool> = if blur_radius == 0 {
        prev.pixels
            .iter()
            .zip(&curr.pixels)
            .map(|(&a, &b)| a.abs_diff(b) > pixel_threshold)
            .collect()
    } else {
        let side = 2 * blur_radius + 1;
        let limit = pixel_threshold as u32 * side * side;
        box_sums(prev, blur_radius)
            .into_iter()
            .zip(box_sums(curr, blur_radius))
            .map(|(a, b)| a.abs_diff(b) > limit)
            .collect()
    };
    let changed = mask.iter().filter(|&&m| m).count();
    Ok(DiffMask {
        width: curr.width,
        height: curr.height,
        mask,
        changed,
    })
}

pub fn detect_motion(
    prev: &LumaFrame,
    curr: &LumaFrame,
    config: &MotionConfig,
) -> Result<MotionResult, MotionError> {
    let diff = frame_diff(prev, curr, config.pixel_threshold, config.blur_radius)?;
    let changed_fraction = diff.changed_fraction();
    Ok(MotionResult {
        motion: changed_fraction >= config.area_fraction_threshold,
        changed_fraction,
        changed_bbox: diff.bounding_box(),
    })
}

/// Stateful wrapper that differences each frame against its predecessor.
/// The first frame has nothing to compare with and never reports motion.
#[derive(Debug)]
pub struct MotionDetector {
    config: MotionConfig,
    prev: Option<LumaFrame>,
}

impl MotionDetector {
    pub fn new(config: MotionConfig) -> Result<Self, MotionError> {
        config.validate()?;
        Ok(MotionDetector { config, prev: None })
    }

    pub fn process(&mut self, frame: LumaFrame) -> Result<MotionResult, MotionError> {
        let result = match &self.prev {
            None => MotionResult::none(),
            Some(prev) => detect_motion(prev, &frame, &self.config)?,
        };
        self.prev = Some(frame);
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_frames_have_no_change() {
        let a = LumaFrame::filled(8, 8, 77);
        let d = frame_diff(&a, &a, 25, 1).unwrap();
        assert_eq!(d.changed_fraction(), 0.0);
        let r = detect_motion(&a, &a, &MotionConfig::default()).unwrap();
        assert_eq!(r, MotionResult::none());
    }

    #[test]
    fn saturated_difference_changes_everything() {
        let a = LumaFrame::filled(6, 5, 0);
        let b = LumaFrame::filled(6, 5, 255);
        assert_eq!(frame_diff(&a, &b, 25, 0).unwrap().changed_fraction(), 1.0);
        assert_eq!(frame_diff(&a, &b, 25, 1).unwrap().changed_fraction(), 1.0);
    }

    #[test]
    fn fifty_of_ten_thousand_pixels() {
        let a = LumaFrame::filled(100, 100, 20);
        let mut b = a.clone();
        for i in 0..50 {
            b.set((i * 37) % 100, (i * 13) % 100, 220);
        }
        let d = frame_diff(&a, &b, 25, 0).unwrap();
        assert_eq!(d.changed, 50);
        assert_eq!(d.changed_fraction(), 0.005);
    }

    #[test]
    fn single_pixel_change_box() {
        let a = LumaFrame::filled(10, 10, 0);
        let mut b = a.clone();
        b.set(3, 7, 200);
        let cfg = MotionConfig {
            blur_radius: 0,
            ..MotionConfig::default()
        };
        let r = detect_motion(&a, &b, &cfg).unwrap();
        assert!(r.motion);
        assert_eq!(r.changed_fraction, 0.01);
        assert_eq!(r.changed_bbox, Some(BBox::new(3.0, 7.0, 1.0, 1.0)));
    }

    #[test]
    fn sub_threshold_shift_is_not_motion() {
        let a = LumaFrame::filled(16, 16, 100);
        let b = LumaFrame::filled(16, 16, 110);
        let r = detect_motion(&a, &b, &MotionConfig::default()).unwrap();
        assert!(!r.motion);
        assert_eq!(r.changed_fraction, 0.0);
    }

    #[test]
    fn blur_uses_exact_box_mean() {
        // One pixel +255 spreads 255/9 = 28.3 over a 3x3 window.
        let a = LumaFrame::filled(5, 5, 0);
        let mut b = a.clone();
        b.set(2, 2, 255);
        let d = frame_diff(&a, &b, 25, 1).unwrap();
        assert_eq!(d.changed, 9);
        assert_eq!(d.bounding_box(), Some(BBox::new(1.0, 1.0, 3.0, 3.0)));
        let d = frame_diff(&a, &b, 29, 1).unwrap();
        assert_eq!(d.changed, 0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = LumaFrame::filled(4, 4, 0);
        let b = LumaFrame::filled(4, 5, 0);
        assert!(matches!(
            frame_diff(&a, &b, 25, 1),
            Err(MotionError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn first_frame_never_moves_and_static_stream_stays_still() {
        let mut det = MotionDetector::new(MotionConfig::default()).unwrap();
        assert!(!det.process(LumaFrame::filled(4, 4, 200)).unwrap().motion);
        for _ in 0..5 {
            assert!(!det.process(LumaFrame::filled(4, 4, 200)).unwrap().motion);
        }
    }

    #[test]
    fn config_validation() {
        let bad = MotionConfig {
            area_fraction_threshold: 1.5,
            ..MotionConfig::default()
        };
        assert!(MotionDetector::new(bad).is_err());
    }

    fn frame_pair() -> impl Strategy<Value = (LumaFrame, LumaFrame)> {
        (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (
                proptest::collection::vec(any::<u8>(), n),
                proptest::collection::vec(any::<u8>(), n),
            )
                .prop_map(move |(a, b)| {
                    (
                        LumaFrame::new(w, h, a).unwrap(),
                        LumaFrame::new(w, h, b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn diff_is_symmetric((a, b) in frame_pair(), t: u8, r in 0u32..3) {
            prop_assert_eq!(frame_diff(&a, &b, t, r).unwrap(), frame_diff(&b, &a, t, r).unwrap());
        }

        #[test]
        fn threshold_is_monotone((a, b) in frame_pair(), t1: u8, t2: u8, r in 0u32..3) {
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let f_lo = frame_diff(&a, &b, lo, r).unwrap().changed_fraction();
            let f_hi = frame_diff(&a, &b, hi, r).unwrap().changed_fraction();
            prop_assert!(f_hi <= f_lo);
            prop_assert!((0.0..=1.0).contains(&f_lo));
        }

        #[test]
        fn result_invariants((a, b) in frame_pair(), t: u8, area in 0.0f64..=1.0) {
            let cfg = MotionConfig { pixel_threshold: t, area_fraction_threshold: area, blur_radius: 1 };
            let r = detect_motion(&a, &b, &cfg).unwrap();
            prop_assert_eq!(r.motion, r.changed_fraction >= area);
            prop_assert_eq!(r.changed_bbox.is_some(), r.changed_fraction > 0.0);
        }
    }
}
