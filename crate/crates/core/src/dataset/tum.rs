//! TUM-RGBD directory layout: `rgb.txt`, `depth.txt`, `groundtruth.txt` and 16-bit depth PNGs.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};

use super::png::{read_color_png, read_depth_png};
use super::{downsample_frame, RgbdFrame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::Pose;

/// Maximum color/depth timestamp gap for association, seconds.
pub const MAX_ASSOCIATION_GAP: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct TumOptions {
    pub max_frames: Option<usize>,
    /// Full-resolution intrinsics; `depth_scale` is 5000 for TUM.
    pub intrinsics: Intrinsics,
    /// Integer block-downsampling factor, 1 keeps full resolution.
    pub downscale: usize,
    /// Keep every `stride`-th associated frame.
    pub stride: usize,
}

impl Default for TumOptions {
    fn default() -> Self {
        Self {
            max_frames: None,
            intrinsics: Self::freiburg3(),
            downscale: 1,
            stride: 1,
        }
    }
}

impl TumOptions {
    pub fn freiburg1() -> Intrinsics {
        Intrinsics::new(517.3, 516.5, 318.6, 255.3, 640, 480)
    }

    pub fn freiburg2() -> Intrinsics {
        Intrinsics::new(520.9, 521.0, 325.1, 249.7, 640, 480)
    }

    pub fn freiburg3() -> Intrinsics {
        Intrinsics::new(535.4, 539.2, 320.1, 247.6, 640, 480)
    }
}

fn read_list(path: &Path) -> Result<Vec<(f64, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(ts), Some(file)) = (it.next(), it.next()) else {
            return Err(Error::format(path, format!("line {}: expected `timestamp filename`", n + 1)));
        };
        let ts: f64 = ts
            .parse()
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push((ts, file.to_string()));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Pairs each color timestamp with the nearest depth timestamp within the gap.
/// Returns `(color_index, depth_index)` pairs and the number of unmatched color frames.
pub(crate) fn associate(color: &[f64], depth: &[f64], max_gap: f64) -> (Vec<(usize, usize)>, usize) {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (ci, &t) in color.iter().enumerate() {
        let pos = depth.partition_point(|&d| d < t);
        let best = [pos.checked_sub(1), (pos < depth.len()).then_some(pos)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (depth[a] - t).abs().total_cmp(&(depth[b] - t).abs()));
        match best {
            Some(di) if (depth[di] - t).abs() <= max_gap => pairs.push((ci, di)),
            _ => skipped += 1,
        }
    }
    (pairs, skipped)
}

/// Ground truth at `t`: SLERP rotation and linear translation between bracketing samples.
pub(crate) fn interpolate_pose(samples: &[(f64, Pose)], t: f64) -> Option<Pose> {
    let pos = samples.partition_point(|s| s.0 < t);
    if pos < samples.len() && samples[pos].0 == t {
        return Some(samples[pos].1);
    }
    if pos == 0 || pos == samples.len() {
        return None;
    }
    let (t0, p0) = samples[pos - 1];
    let (t1, p1) = samples[pos];
    let a = (t - t0) / (t1 - t0);
    let q = |p: &Pose| {
        let [x, y, z, w] = p.quaternion();
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    };
    let q = q(&p0).slerp(&q(&p1), a);
    let translation = p0.translation * (1.0 - a) + p1.translation * a;
    Some(Pose::new(*q.to_rotation_matrix().matrix(), translation))
}

pub fn load_tum_sequence(root: &Path, opts: &TumOptions) -> Result<Sequence> {
    let rgb_list = root.join("rgb.txt");
    let depth_list = root.join("depth.txt");
    let gt_file = root.join("groundtruth.txt");
    let missing: Vec<PathBuf> = [&rgb_list, &depth_list, &gt_file]
        .into_iter()
        .filter(|p| !p.is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    opts.intrinsics.validate()?;
    let rgb = read_list(&rgb_list)?;
    let depth = read_list(&depth_list)?;
    let mut gt = super::trajectory::load_trajectory(&gt_file)?;
    gt.sort_by(|a, b| a.0.total_cmp(&b.0));

    let color_ts: Vec<f64> = rgb.iter().map(|r| r.0).collect();
    let depth_ts: Vec<f64> = depth.iter().map(|d| d.0).collect();
    let (pairs, skipped) = associate(&color_ts, &depth_ts, MAX_ASSOCIATION_GAP);

    let stride = opts.stride.max(1);
    let limit = opts.max_frames.unwrap_or(usize::MAX);
    let mut seq = Sequence {
        skipped,
        ..Default::default()
    };
    for &(ci, di) in pairs.iter().step_by(stride).take(limit) {
        let (ts, ref color_file) = rgb[ci];
        let color = read_color_png(&root.join(color_file))?;
        let depth_map = read_depth_png(&root.join(&depth[di].1), opts.intrinsics.depth_scale)?;
        crate::geometry::check_shape(color.width(), color.height(), &opts.intrinsics)?;
        crate::geometry::check_shape(depth_map.width(), depth_map.height(), &opts.intrinsics)?;
        let frame = RgbdFrame::new(color, depth_map, opts.intrinsics, ts, seq.frames.len());
        seq.frames.push(downsample_frame(&frame, opts.downscale));
        seq.ground_truth.push(interpolate_pose(&gt, ts));
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn association_with_gap() {
        let color = [1.0, 1.1, 1.2, 5.0];
        let depth = [1.005, 1.11, 1.19];
        let (pairs, skipped) = associate(&color, &depth, 0.02);
        assert_eq!(pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn interpolation_midpoint() {
        let a = Pose::identity();
        let b = Pose::from_axis_angle(Vector3::z(), 0.2, Vector3::new(1.0, 0.0, 0.0));
        let gt = vec![(0.0, a), (1.0, b)];
        let mid = interpolate_pose(&gt, 0.5).unwrap();
        let expected = Pose::from_axis_angle(Vector3::z(), 0.1, Vector3::new(0.5, 0.0, 0.0));
        assert!(mid.max_abs_diff(&expected) < 1e-12);
        assert!(interpolate_pose(&gt, -0.1).is_none());
        assert!(interpolate_pose(&gt, 1.5).is_none());
        assert_eq!(interpolate_pose(&gt, 1.0).unwrap(), b);
    }
}
