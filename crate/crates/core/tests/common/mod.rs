//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use geosplat::dataset::RgbdFrame;
use geosplat::geometry::{se3_exp, Intrinsics, Twist};
use geosplat::mapper::{splat, splat_backward, PixelGaussianMap};
use geosplat::tracker::{build_local_set, gicp_align, init_pose_constant_speed, GlobalGeomSet, TrackerConfig};
use geosplat::{ColorImage, DepthMap, Mask, Pose};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Central-difference step; offsets scale it by the Gaussian's depth.
pub const FD_STEP: f64 = 1e-4;
pub const W: usize = 16;
pub const H: usize = 16;

pub fn intrinsics() -> Intrinsics {
    Intrinsics::new(16.0, 16.0, 7.5, 7.5, W, H)
}

pub struct Draw {
    pub map: PixelGaussianMap,
    pub target: Pose,
    pub weights: (ColorImage, DepthMap, DepthMap),
    pub normalize: bool,
}

pub fn empty_map(frame: usize) -> PixelGaussianMap {
    PixelGaussianMap {
        frame_index: frame,
        pose: Pose::identity(),
        base_depth: DepthMap::filled(W, H, 1.0),
        offset: DepthMap::filled(W, H, 0.0),
        color: ColorImage::filled(W, H, [0.0; 3]),
        log_radius: DepthMap::filled(W, H, -3.0),
        opacity_logit: DepthMap::filled(W, H, 0.0),
        active: Mask::filled(W, H, false),
    }
}

pub fn draw(rng: &mut ChaCha8Rng) -> Draw {
    let k = intrinsics();
    let mut map = empty_map(0);
    let mut pixels = Vec::new();
    while pixels.len() < 3 {
        let p = rng.random_range(3..13) * W + rng.random_range(3..13);
        if !pixels.contains(&p) {
            pixels.push(p);
        }
    }
    for &p in &pixels {
        let depth: f64 = rng.random_range(0.8..1.6);
        let delta: f64 = rng.random_range(-0.1..0.1);
        // a quarter of the draws put base + δ below zero to exercise the absolute value
        let (base, delta) = if rng.random::<f64>() < 0.25 { (-depth - delta, delta) } else { (depth - delta, delta) };
        map.base_depth.as_mut_slice()[p] = base;
        map.offset.as_mut_slice()[p] = delta;
        let sigma_px: f64 = rng.random_range(1.0..3.0);
        map.log_radius.as_mut_slice()[p] = (sigma_px * depth / k.fx).ln();
        let o: f64 = rng.random_range(0.1..0.9);
        map.opacity_logit.as_mut_slice()[p] = (o / (1.0 - o)).ln();
        map.color.as_mut_slice()[p] = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
        map.active.as_mut_slice()[p] = true;
    }
    let tw = Twist::new(
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.03..0.03),
        rng.random_range(-0.03..0.03),
        rng.random_range(-0.05..0.05),
    );
    let mut uniform = || rng.random_range(-1.0..1.0);
    let weights = (
        ColorImage::from_fn(W, H, |_, _| [uniform(), uniform(), uniform()]),
        DepthMap::from_fn(W, H, |_, _| uniform()),
        DepthMap::from_fn(W, H, |_, _| uniform()),
    );
    Draw {
        map,
        target: se3_exp(&tw),
        weights,
        normalize: rng.random::<bool>(),
    }
}

/// Rejects draws where a perturbation could move a pixel across a footprint's truncation
/// boundary, where the rendered image is not differentiable.
pub fn away_from_truncation(d: &Draw) -> bool {
    let k = intrinsics();
    let inv = d.target.inverse();
    for p in 0..W * H {
        if !d.map.active.as_slice()[p] {
            continue;
        }
        let depth = d.map.adjusted_depth(p);
        let cam = inv.transform_point(&(k.ray((p % W) as f64, (p / W) as f64) * depth));
        let u = k.fx * cam.x / cam.z + k.cx;
        let v = k.fy * cam.y / cam.z + k.cy;
        let sigma = d.map.radius(p) * k.fx / cam.z;
        let limit = 9.0 * sigma * sigma;
        for y in 0..H {
            for x in 0..W {
                let d2 = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
                if ((d2 - limit) / limit).abs() < 5e-4 {
                    return false;
                }
            }
        }
    }
    true
}

pub fn objective(d: &Draw, map: &PixelGaussianMap) -> f64 {
    let out = splat(&[map], &d.target, &intrinsics(), d.normalize).unwrap();
    let (wc, wd, wa) = &d.weights;
    let mut s = 0.0;
    for i in 0..W * H {
        for c in 0..3 {
            s += wc.as_slice()[i][c] * out.color.as_slice()[i][c];
        }
        s += wd.as_slice()[i] * out.depth.as_slice()[i] + wa.as_slice()[i] * out.alpha.as_slice()[i];
    }
    s
}

#[derive(Clone, Copy, Debug)]
pub enum Param {
    Color(usize),
    LogRadius,
    Opacity,
    Offset,
}

pub fn perturb(map: &PixelGaussianMap, p: usize, param: Param, h: f64) -> PixelGaussianMap {
    let mut m = map.clone();
    match param {
        Param::Color(c) => m.color.as_mut_slice()[p][c] += h,
        Param::LogRadius => m.log_radius.as_mut_slice()[p] += h,
        Param::Opacity => m.opacity_logit.as_mut_slice()[p] += h,
        Param::Offset => m.offset.as_mut_slice()[p] += h,
    }
    m
}

/// Worst relative error over every parameter of one draw.
pub fn worst_error(d: &Draw) -> f64 {
    let k = intrinsics();
    let (wc, wd, wa) = &d.weights;
    let grads = splat_backward(&[&d.map], 0, &d.target, &k, d.normalize, wc, wd, wa).unwrap();
    let mut worst: f64 = 0.0;
    for p in 0..W * H {
        if !d.map.active.as_slice()[p] {
            continue;
        }
        for param in [Param::Color(0), Param::Color(1), Param::Color(2), Param::LogRadius, Param::Opacity, Param::Offset] {
            let (analytic, h) = match param {
                Param::Color(c) => (grads.color.as_slice()[p][c], FD_STEP),
                Param::LogRadius => (grads.log_radius.as_slice()[p], FD_STEP),
                Param::Opacity => (grads.opacity_logit.as_slice()[p], FD_STEP),
                Param::Offset => (grads.offset.as_slice()[p], FD_STEP * d.map.adjusted_depth(p)),
            };
            let fd = (objective(d, &perturb(&d.map, p, param, h)) - objective(d, &perturb(&d.map, p, param, -h))) / (2.0 * h);
            let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

/// Worst relative error over `draws` accepted random configurations.
pub fn gradient_check(rng: &mut ChaCha8Rng, draws: usize) -> f64 {
    let mut accepted = 0;
    let mut worst: f64 = 0.0;
    while accepted < draws {
        let d = draw(rng);
        if !away_from_truncation(&d) {
            continue;
        }
        accepted += 1;
        worst = worst.max(worst_error(&d));
    }
    worst
}

/// Frame-to-scene tracking with constant-speed initialization; frame 0 is anchored at `first`.
/// Returns the poses and the number of failed alignments.
pub fn track(frames: &[RgbdFrame], first: Pose, cfg: &TrackerConfig) -> (Vec<Pose>, usize) {
    let mut global = GlobalGeomSet::new(cfg.voxel_size);
    let mut poses: Vec<Pose> = Vec::new();
    let mut failures = 0;
    for (i, frame) in frames.iter().enumerate() {
        let local = build_local_set(frame, cfg).unwrap();
        let pose = match i {
            0 => first,
            _ => {
                let init = if i == 1 { poses[0] } else { init_pose_constant_speed(&poses[i - 1], &poses[i - 2]) };
                let r = gicp_align(&local, &global, &init, cfg);
                failures += r.failed as usize;
                if r.failed { init } else { r.pose }
            }
        };
        global.update(&local, &pose);
        poses.push(pose);
    }
    (poses, failures)
}
