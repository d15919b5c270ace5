//! Per-frame pixel-aligned spherical Gaussians, rendered by differentiable splatting and fitted
//! to the frame and its neighbors.

mod adam;
mod io;
mod optimize;
mod splat;
mod ssim;

pub use adam::{Adam, AdamParams};
pub use io::{quantize_map, read_map, write_map, MAP_MAGIC, MAP_VERSION};
pub use optimize::{
    fill_base_depth, map_frame, mapping_step, target_schedule, MapFrameOutcome, MapTarget, MappingState, StepReport,
};
pub use splat::{splat, splat_backward, MapGradients, RenderOutput, NEAR_PLANE, TRANSMITTANCE_STOP};
pub use ssim::{ssim, ssim_with_grad, SSIM_C1, SSIM_C2};

use crate::dataset::RgbdFrame;
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::grid::{ColorImage, DepthMap, Mask};
use crate::Pose;

/// Loss weights, learning rates and schedule of the per-frame fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperConfig {
    /// Color L1 weight (ρ).
    pub color_weight: f64,
    /// SSIM weight (τ).
    pub ssim_weight: f64,
    /// Depth L1 weight (σ).
    pub depth_weight: f64,
    /// Neighbor frames rendered alongside the current one.
    pub neighbors: usize,
    pub iters: usize,
    pub lr_color: f64,
    /// Applied to log-radius.
    pub lr_radius: f64,
    /// Applied to the opacity logit.
    pub lr_opacity: f64,
    pub lr_offset: f64,
    pub min_current_fraction: f64,
    /// Freeze δ at zero (Gaussians fixed at the input depth).
    pub offset_frozen: bool,
    /// Divide rendered depth by accumulated alpha.
    pub normalize_depth: bool,
    /// Neighbor-render alpha above which a depth hole takes the rendered depth.
    pub hole_alpha: f64,
    pub seed: u64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            color_weight: 0.8,
            ssim_weight: 0.2,
            depth_weight: 1.0,
            neighbors: 1,
            iters: 100,
            lr_color: 0.0025,
            lr_radius: 0.005,
            lr_opacity: 0.05,
            lr_offset: 0.01,
            min_current_fraction: 0.4,
            offset_frozen: false,
            normalize_depth: false,
            hole_alpha: 0.5,
            seed: 0,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.color_weight, self.ssim_weight, self.depth_weight];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("mapper loss weights must be non-negative".into()));
        }
        if self.iters < 1 {
            return Err(Error::Config("mapping_iters must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_current_fraction) {
            return Err(Error::Config("min_current_fraction must lie in [0, 1]".into()));
        }
        if self.neighbors > 4 {
            return Err(Error::Config(format!("at most 4 mapping neighbors (got {})", self.neighbors)));
        }
        Ok(())
    }
}

/// One Gaussian per pixel of a frame, positioned on the pixel's ray at `|base_depth + δ|`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGaussianMap {
    pub frame_index: usize,
    /// Camera-to-world, fixed after tracking.
    pub pose: Pose,
    pub base_depth: DepthMap,
    pub offset: DepthMap,
    pub color: ColorImage,
    pub log_radius: DepthMap,
    pub opacity_logit: DepthMap,
    pub active: Mask,
}

impl PixelGaussianMap {
    pub fn width(&self) -> usize {
        self.base_depth.width()
    }

    pub fn height(&self) -> usize {
        self.base_depth.height()
    }

    pub fn len(&self) -> usize {
        self.base_depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_depth.is_empty()
    }

    /// `|base + δ|` at a flat pixel index.
    #[inline]
    pub fn adjusted_depth(&self, i: usize) -> f64 {
        (self.base_depth.as_slice()[i] + self.offset.as_slice()[i]).abs()
    }

    pub fn adjusted_depth_map(&self) -> DepthMap {
        DepthMap::from_fn(self.width(), self.height(), |u, v| {
            (self.base_depth[(u, v)] + self.offset[(u, v)]).abs()
        })
    }

    #[inline]
    pub fn radius(&self, i: usize) -> f64 {
        self.log_radius.as_slice()[i].exp()
    }

    #[inline]
    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logit.as_slice()[i])
    }

    pub fn check_shape(&self, k: &Intrinsics) -> Result<()> {
        let w = self.width();
        let h = self.height();
        let planes_ok = self.offset.width() == w
            && self.offset.height() == h
            && self.color.width() == w
            && self.color.height() == h
            && self.log_radius.width() == w
            && self.log_radius.height() == h
            && self.opacity_logit.width() == w
            && self.opacity_logit.height() == h
            && self.active.width() == w
            && self.active.height() == h;
        if !planes_ok || w != k.width || h != k.height {
            return Err(Error::InvalidInput(format!(
                "map of frame {} is {w}x{h}, intrinsics are {}x{}",
                self.frame_index, k.width, k.height
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Fresh map: frame colors, radius `D / f_x`, opacity 0.5, zero offsets, every pixel active.
pub fn init_gaussians(frame: &RgbdFrame, pose: &Pose, inpainted_depth: &DepthMap) -> Result<PixelGaussianMap> {
    let k = &frame.intrinsics;
    if inpainted_depth.width() != k.width || inpainted_depth.height() != k.height {
        return Err(Error::InvalidInput(format!(
            "depth map is {}x{}, frame is {}x{}",
            inpainted_depth.width(),
            inpainted_depth.height(),
            k.width,
            k.height
        )));
    }
    if let Some(bad) = inpainted_depth.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "base depth of frame {} must be positive everywhere, found {bad}",
            frame.index
        )));
    }
    let (w, h) = (k.width, k.height);
    Ok(PixelGaussianMap {
        frame_index: frame.index,
        pose: *pose,
        base_depth: inpainted_depth.clone(),
        offset: DepthMap::filled(w, h, 0.0),
        color: frame.color.clone(),
        log_radius: inpainted_depth.map(|d| (d / k.fx).ln()),
        opacity_logit: DepthMap::filled(w, h, logit(0.5)),
        active: Mask::filled(w, h, true),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, fx: f64, depth: f64) -> RgbdFrame {
        let k = Intrinsics::new(fx, fx, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0, w, h);
        RgbdFrame::new(ColorImage::filled(w, h, [0.2, 0.4, 0.6]), DepthMap::filled(w, h, depth), k, 0.0, 3)
    }

    #[test]
    fn radius_from_depth_and_focal() {
        let f = frame(4, 3, 500.0, 1.0);
        let map = init_gaussians(&f, &Pose::identity(), &f.depth).unwrap();
        for i in 0..map.len() {
            assert!((map.radius(i) - 0.002).abs() < 1e-15);
        }
    }

    #[test]
    fn raw_units_then_radius() {
        let d = 600.0 / 5000.0;
        let f = frame(2, 2, 525.0, d);
        let map = init_gaussians(&f, &Pose::identity(), &f.depth).unwrap();
        assert!((map.radius(0) - 0.12 / 525.0).abs() < 1e-17);
    }

    #[test]
    fn init_state() {
        let f = frame(5, 4, 300.0, 2.0);
        let map = init_gaussians(&f, &Pose::identity(), &f.depth).unwrap();
        assert!(map.offset.iter().all(|&x| x == 0.0));
        assert!(map.active.iter().all(|&a| a));
        assert!((map.opacity(7) - 0.5).abs() < 1e-15);
        assert_eq!(map.color, f.color);
        assert_eq!(map.frame_index, 3);
        assert_eq!(map.adjusted_depth_map(), f.depth);
    }

    #[test]
    fn rejects_non_positive_depth() {
        let f = frame(3, 3, 300.0, 1.0);
        let mut d = f.depth.clone();
        d[(1, 1)] = 0.0;
        assert!(init_gaussians(&f, &Pose::identity(), &d).is_err());
    }

    #[test]
    fn adjusted_depth_takes_absolute_value() {
        let f = frame(2, 1, 300.0, 0.5);
        let mut map = init_gaussians(&f, &Pose::identity(), &f.depth).unwrap();
        map.offset[(0, 0)] = -0.8;
        assert!((map.adjusted_depth(0) - 0.3).abs() < 1e-15);
    }
}
