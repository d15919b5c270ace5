//! Trajectory and rendering error metrics.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::grid::{ColorImage, DepthMap, Mask};
use crate::Pose;

pub use crate::mapper::ssim;

/// Reported in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryError {
    pub ate_rmse: f64,
    pub per_frame_errors: Vec<f64>,
    /// Maps estimated positions onto ground truth.
    pub alignment: Pose,
    /// Always 1; alignment is rigid.
    pub scale: f64,
}

/// Rigid transform `g` minimizing `Σ‖b_i − g·a_i‖²` (Umeyama without scale).
pub fn align_rigid(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<Pose> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("cannot align {} points to {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("cannot align empty point sets".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<Vector3<f64>>() / n;
    let mb = b.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        cov += (q - mb) * (p - ma).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    Ok(Pose::new(r, mb - r * ma))
}

/// Absolute trajectory error of translations after rigid alignment.
pub fn ate_rmse(estimated: &[Pose], ground_truth: &[Pose]) -> Result<TrajectoryError> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ: {} estimated vs {} ground truth",
            estimated.len(),
            ground_truth.len()
        )));
    }
    let a: Vec<_> = estimated.iter().map(|p| p.translation).collect();
    let b: Vec<_> = ground_truth.iter().map(|p| p.translation).collect();
    let g = align_rigid(&a, &b)?;
    let per_frame_errors: Vec<f64> = a.iter().zip(&b).map(|(p, q)| (g.transform_point(p) - q).norm()).collect();
    let ms = per_frame_errors.iter().map(|e| e * e).sum::<f64>() / per_frame_errors.len() as f64;
    Ok(TrajectoryError {
        ate_rmse: ms.sqrt(),
        per_frame_errors,
        alignment: g,
        scale: 1.0,
    })
}

pub fn psnr(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    if !a.same_shape(b) || a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "psnr needs equal non-empty shapes, got {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>()).sum();
    let mse = sum / (3 * a.len()) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean absolute depth difference over `mask`.
pub fn depth_l1(a: &DepthMap, b: &DepthMap, mask: &Mask) -> Result<f64> {
    if !a.same_shape(b) || !a.same_shape(mask) {
        return Err(Error::InvalidInput("depth_l1 needs equal shapes".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((x, y), &m) in a.iter().zip(b.iter()).zip(mask.iter()) {
        if m {
            sum += (x - y).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("depth_l1 over an empty mask".into()));
    }
    Ok(sum / n as f64)
}
