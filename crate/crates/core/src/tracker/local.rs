use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::{GeomGaussian, ScaleMode, TrackerConfig, EIGEN_FLOOR, PLANE_EPSILON};
use crate::dataset::RgbdFrame;
use crate::eigen::sym3_eigen;
use crate::error::{Error, Result};
use crate::kdtree::KdTree;

/// Geometry Gaussians of one frame, in that frame's camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGeomSet {
    pub gaussians: Vec<GeomGaussian>,
    pub source_frame: usize,
}

impl LocalGeomSet {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Samples valid pixels on an `R × R` grid and fits a Gaussian to each sample's `K_c`
/// nearest neighbors among all back-projected valid pixels.
pub fn build_local_set(frame: &RgbdFrame, cfg: &TrackerConfig) -> Result<LocalGeomSet> {
    cfg.validate()?;
    let k = &frame.intrinsics;
    let mut points = Vec::with_capacity(frame.valid_count());
    let mut samples = Vec::new();
    for v in 0..k.height {
        for u in 0..k.width {
            let d = frame.depth[(u, v)];
            if !(frame.valid_mask[(u, v)] && d > 0.0 && d.is_finite()) {
                continue;
            }
            if u % cfg.downsample == 0 && v % cfg.downsample == 0 {
                samples.push(points.len());
            }
            points.push(k.unproject(u as f64, v as f64, d));
        }
    }
    if points.len() < cfg.knn + 1 {
        return Err(Error::InvalidInput(format!(
            "frame {} has {} valid depth pixels, need at least {}",
            frame.index,
            points.len(),
            cfg.knn + 1
        )));
    }
    let tree = KdTree::build(&points);
    let gaussians = samples
        .par_iter()
        .map(|&i| fit_gaussian(&points, &tree, i, cfg.knn, cfg.scale_mode))
        .collect();
    Ok(LocalGeomSet {
        gaussians,
        source_frame: frame.index,
    })
}

fn fit_gaussian(points: &[Vector3<f64>], tree: &KdTree, i: usize, knn: usize, mode: ScaleMode) -> GeomGaussian {
    let center = points[i];
    let nbrs = tree.knn(&center, knn);
    let n = nbrs.len() as f64;
    let mean = nbrs.iter().fold(Vector3::zeros(), |acc, nb| acc + points[nb.index]) / n;
    let cov = nbrs.iter().fold(Matrix3::zeros(), |acc, nb| {
        let d = points[nb.index] - mean;
        acc + d * d.transpose()
    }) / n;
    let (values, mut rotation) = sym3_eigen(&cov);
    let floor = (values[0] * EIGEN_FLOOR).max(1e-18);
    let raw = values.map(|l| l.max(floor).sqrt());
    let scales = match mode {
        ScaleMode::Ellipse => raw / raw.norm(),
        ScaleMode::Plane => Vector3::new(1.0, 1.0, PLANE_EPSILON),
        ScaleMode::None => raw,
    };
    // the camera sits at the origin of the local frame
    if rotation.column(2).dot(&(-center)) < 0.0 {
        rotation.set_column(2, &(-rotation.column(2)));
        rotation.set_column(1, &(-rotation.column(1)));
    }
    GeomGaussian {
        center,
        rotation,
        scales,
        normal: rotation.column(2).into_owned(),
    }
}
