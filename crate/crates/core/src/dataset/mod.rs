//! RGBD sequence ingestion, depth hole filling, synthetic scenes and trajectory files.

mod generic;
mod inpaint;
mod png;
pub mod synthetic;
mod trajectory;
mod tum;

pub use generic::{load_generic_sequence, read_intrinsics, write_intrinsics, INTRINSICS_FILE};
pub use inpaint::{inpaint_depth, inpaint_depth_with, InpaintParams};
pub use png::{read_color_png, read_depth_png, write_color_png, write_depth_png};
pub use synthetic::{render_synthetic_frame, SensorNoise, SyntheticScene};
pub use trajectory::{format_significant, load_trajectory, save_trajectory};
pub use tum::{load_tum_sequence, TumOptions};

use crate::geometry::Intrinsics;
use crate::grid::{ColorImage, DepthMap, Mask};
use crate::Pose;

/// One registered color + metric depth observation.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    /// Linear RGB in `[0, 1]`.
    pub color: ColorImage,
    /// Meters; 0 marks a missing measurement.
    pub depth: DepthMap,
    pub valid_mask: Mask,
    pub intrinsics: Intrinsics,
    pub timestamp: f64,
    pub index: usize,
}

impl RgbdFrame {
    /// Builds a frame whose validity mask is derived from the depth map.
    pub fn new(color: ColorImage, depth: DepthMap, intrinsics: Intrinsics, timestamp: f64, index: usize) -> Self {
        let valid_mask = depth.map(|&d| d > 0.0 && d.is_finite());
        Self {
            color,
            depth,
            valid_mask,
            intrinsics,
            timestamp,
            index,
        }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.count_true()
    }
}

/// An ordered list of frames with optional per-frame ground-truth poses.
#[derive(Debug, Clone, Default)]
pub struct Sequence {
    pub frames: Vec<RgbdFrame>,
    /// Aligned with `frames`; `None` where no ground truth covers the timestamp.
    pub ground_truth: Vec<Option<Pose>>,
    /// Color frames dropped because no depth image was close enough in time.
    pub skipped: usize,
}

impl Sequence {
    pub fn has_ground_truth(&self) -> bool {
        self.ground_truth.iter().any(Option::is_some)
    }
}

/// Block-average downsampling; depth averages only valid samples.
pub(crate) fn downsample_frame(frame: &RgbdFrame, factor: usize) -> RgbdFrame {
    if factor <= 1 {
        return frame.clone();
    }
    let k = frame.intrinsics.downscaled(factor);
    let color = ColorImage::from_fn(k.width, k.height, |u, v| {
        let mut acc = [0.0; 3];
        for dv in 0..factor {
            for du in 0..factor {
                let c = frame.color[(u * factor + du, v * factor + dv)];
                for ch in 0..3 {
                    acc[ch] += c[ch];
                }
            }
        }
        let n = (factor * factor) as f64;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    });
    let depth = DepthMap::from_fn(k.width, k.height, |u, v| {
        let (mut sum, mut n) = (0.0, 0usize);
        for dv in 0..factor {
            for du in 0..factor {
                let d = frame.depth[(u * factor + du, v * factor + dv)];
                if d > 0.0 {
                    sum += d;
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    });
    RgbdFrame::new(color, depth, k, frame.timestamp, frame.index)
}
