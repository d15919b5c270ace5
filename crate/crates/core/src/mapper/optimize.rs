use super::{init_gaussians, splat, splat_backward, ssim_with_grad, Adam, MapperConfig, PixelGaussianMap};
use crate::dataset::{inpaint_depth, RgbdFrame};
use crate::error::{Error, Result};
use crate::grid::{DepthMap, Mask};
use crate::Pose;

/// An observation the current map is fitted against, seen from `pose`.
#[derive(Debug, Clone, Copy)]
pub struct MapTarget<'a> {
    pub frame: &'a RgbdFrame,
    pub pose: Pose,
}

/// The map being fitted together with one optimizer per attribute group.
#[derive(Debug, Clone)]
pub struct MappingState {
    pub map: PixelGaussianMap,
    color: Adam,
    radius: Adam,
    opacity: Adam,
    offset: Adam,
}

impl MappingState {
    pub fn new(map: PixelGaussianMap, cfg: &MapperConfig) -> Self {
        let n = map.len();
        Self {
            map,
            color: Adam::new(3 * n, cfg.lr_color),
            radius: Adam::new(n, cfg.lr_radius),
            opacity: Adam::new(n, cfg.lr_opacity),
            offset: Adam::new(n, cfg.lr_offset),
        }
    }

    pub fn into_map(self) -> PixelGaussianMap {
        self.map
    }
}

/// Loss terms of one mapping iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub color_l1: f64,
    pub ssim: f64,
    pub depth_l1: f64,
}

/// Result of fitting one frame.
#[derive(Debug, Clone)]
pub struct MapFrameOutcome {
    pub map: PixelGaussianMap,
    /// Per iteration; skipped iterations are absent.
    pub losses: Vec<f64>,
    /// Hole pixels whose base depth came from neighbor renders.
    pub holes_from_neighbors: usize,
    /// Hole pixels filled by inpainting.
    pub holes_inpainted: usize,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One optimizer step of `ρ‖V−V′‖₁ + τ(1 − SSIM) + σ‖U(D−D′)‖₁` against `target`, rendering the
/// current map together with the fixed `neighbor_maps`. Returns `None` when the target has no
/// valid depth.
pub fn mapping_step(
    state: &mut MappingState,
    target: &MapTarget<'_>,
    neighbor_maps: &[&PixelGaussianMap],
    cfg: &MapperConfig,
) -> Result<Option<StepReport>> {
    let frame = target.frame;
    let k = &frame.intrinsics;
    let valid = frame.valid_count();
    if valid == 0 {
        return Ok(None);
    }
    let mut sources: Vec<&PixelGaussianMap> = Vec::with_capacity(neighbor_maps.len() + 1);
    sources.push(&state.map);
    sources.extend_from_slice(neighbor_maps);
    let render = splat(&sources, &target.pose, k, cfg.normalize_depth)?;

    let n = frame.color.len() as f64;
    let (ssim_value, ssim_grad) = ssim_with_grad(&render.color, &frame.color)?;
    let mut color_l1 = 0.0;
    let mut grad_color = ssim_grad.map(|g| g.map(|x| -cfg.ssim_weight * x));
    for ((gc, r), t) in grad_color.as_mut_slice().iter_mut().zip(render.color.iter()).zip(frame.color.iter()) {
        for c in 0..3 {
            let d = r[c] - t[c];
            color_l1 += d.abs();
            gc[c] += cfg.color_weight * sign(d) / (3.0 * n);
        }
    }
    color_l1 /= 3.0 * n;

    let mut depth_l1 = 0.0;
    let mut grad_depth = DepthMap::filled(k.width, k.height, 0.0);
    for i in 0..frame.depth.len() {
        if frame.valid_mask.as_slice()[i] {
            let d = render.depth.as_slice()[i] - frame.depth.as_slice()[i];
            depth_l1 += d.abs();
            grad_depth.as_mut_slice()[i] = cfg.depth_weight * sign(d) / valid as f64;
        }
    }
    depth_l1 /= valid as f64;
    let grad_alpha = DepthMap::filled(k.width, k.height, 0.0);

    let grads = splat_backward(&sources, 0, &target.pose, k, cfg.normalize_depth, &grad_color, &grad_depth, &grad_alpha)?;
    drop(sources);

    let map = &mut state.map;
    let color_grad: Vec<f64> = grads.color.iter().flatten().copied().collect();
    let mut color: Vec<f64> = map.color.iter().flatten().copied().collect();
    state.color.update(&mut color, &color_grad);
    for (px, c) in map.color.as_mut_slice().iter_mut().zip(color.chunks_exact(3)) {
        *px = [c[0], c[1], c[2]];
    }
    state.radius.update(map.log_radius.as_mut_slice(), grads.log_radius.as_slice());
    state.opacity.update(map.opacity_logit.as_mut_slice(), grads.opacity_logit.as_slice());
    if !cfg.offset_frozen {
        state.offset.update(map.offset.as_mut_slice(), grads.offset.as_slice());
    }

    let loss = cfg.color_weight * color_l1 + cfg.ssim_weight * (1.0 - ssim_value) + cfg.depth_weight * depth_l1;
    Ok(Some(StepReport {
        loss,
        color_l1,
        ssim: ssim_value,
        depth_l1,
    }))
}

/// Target index per iteration: 0 is the current frame, `j ≥ 1` the `j`-th neighbor. The
/// current frame takes at least `min_current_fraction` of the iterations (rounded up) and the
/// neighbors share the rest round-robin, starting at an offset derived from `seed`.
pub fn target_schedule(iters: usize, neighbors: usize, min_current_fraction: f64, seed: u64) -> Vec<usize> {
    if neighbors == 0 {
        return vec![0; iters];
    }
    let f = min_current_fraction.max(1.0 / (neighbors + 1) as f64).min(1.0);
    let quota = |t: usize| (t as f64 * f - 1e-9).ceil();
    let mut next = (seed % neighbors as u64) as usize;
    (0..iters)
        .map(|t| {
            if quota(t + 1) > quota(t) {
                0
            } else {
                let j = next + 1;
                next = (next + 1) % neighbors;
                j
            }
        })
        .collect()
}

/// Sensor depth with holes taken from the neighbors' normalized render where their alpha
/// exceeds `hole_alpha`, and inpainted elsewhere. Returns the depth and the counts of pixels
/// filled each way.
pub fn fill_base_depth(
    frame: &RgbdFrame,
    pose: &Pose,
    neighbor_maps: &[&PixelGaussianMap],
    hole_alpha: f64,
) -> Result<(DepthMap, usize, usize)> {
    let mut depth = frame.depth.clone();
    let mut mask: Mask = frame.valid_mask.clone();
    let holes = mask.len() - mask.count_true();
    if holes == 0 {
        return Ok((depth, 0, 0));
    }
    let mut from_neighbors = 0;
    if !neighbor_maps.is_empty() {
        let render = splat(neighbor_maps, pose, &frame.intrinsics, true)?;
        for i in 0..depth.len() {
            let d = render.depth.as_slice()[i];
            if !mask.as_slice()[i] && render.alpha.as_slice()[i] > hole_alpha && d > 0.0 {
                depth.as_mut_slice()[i] = d;
                mask.as_mut_slice()[i] = true;
                from_neighbors += 1;
            }
        }
    }
    let remaining = holes - from_neighbors;
    if remaining > 0 {
        depth = inpaint_depth(&depth, &mask)?;
    }
    Ok((depth, from_neighbors, remaining))
}

/// Initializes the frame's map and fits it for `cfg.iters` iterations against the frame and
/// its neighbors, whose maps stay fixed.
pub fn map_frame(
    frame: &RgbdFrame,
    pose: &Pose,
    neighbors: &[(&RgbdFrame, &PixelGaussianMap)],
    cfg: &MapperConfig,
) -> Result<MapFrameOutcome> {
    cfg.validate()?;
    let neighbor_maps: Vec<&PixelGaussianMap> = neighbors.iter().map(|(_, m)| *m).collect();
    for (f, m) in neighbors {
        if f.intrinsics != frame.intrinsics {
            return Err(Error::InvalidInput(format!(
                "neighbor frame {} has different intrinsics than frame {}",
                f.index, frame.index
            )));
        }
        m.check_shape(&frame.intrinsics)?;
    }
    let (base, holes_from_neighbors, holes_inpainted) = fill_base_depth(frame, pose, &neighbor_maps, cfg.hole_alpha)?;
    let map = init_gaussians(frame, pose, &base)?;
    let mut state = MappingState::new(map, cfg);

    let mut targets = vec![MapTarget { frame, pose: *pose }];
    targets.extend(neighbors.iter().map(|(f, m)| MapTarget { frame: f, pose: m.pose }));
    let schedule = target_schedule(cfg.iters, neighbors.len(), cfg.min_current_fraction, cfg.seed ^ frame.index as u64);
    let mut losses = Vec::with_capacity(cfg.iters);
    for &t in &schedule {
        if let Some(report) = mapping_step(&mut state, &targets[t], &neighbor_maps, cfg)? {
            losses.push(report.loss);
        }
    }
    Ok(MapFrameOutcome {
        map: state.into_map(),
        losses,
        holes_from_neighbors,
        holes_inpainted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{render_synthetic_frame, SyntheticScene};
    use crate::geometry::Intrinsics;
    use crate::grid::ColorImage;

    #[test]
    fn schedule_respects_current_fraction() {
        for neighbors in 0..=4 {
            for iters in [1, 7, 10, 100] {
                let s = target_schedule(iters, neighbors, 0.4, 3);
                let current = s.iter().filter(|&&t| t == 0).count();
                assert!(current as f64 >= 0.4 * iters as f64 - 1e-9, "{neighbors} {iters} {current}");
                assert!(s.iter().all(|&t| t <= neighbors));
                assert_eq!(s[0], 0);
            }
        }
        let s = target_schedule(100, 1, 0.4, 0);
        assert_eq!(s.iter().filter(|&&t| t == 0).count(), 50);
        let s = target_schedule(100, 3, 0.4, 0);
        assert_eq!(s.iter().filter(|&&t| t == 0).count(), 40);
        assert_eq!(target_schedule(20, 2, 0.4, 9), target_schedule(20, 2, 0.4, 9));
    }

    #[test]
    fn schedule_visits_every_neighbor() {
        let s = target_schedule(100, 4, 0.4, 2);
        for j in 1..=4 {
            assert!(s.contains(&j));
        }
    }

    fn fitted_map(frame: &RgbdFrame) -> PixelGaussianMap {
        init_gaussians(frame, &Pose::identity(), &frame.depth).unwrap()
    }

    #[test]
    fn l1_only_loss_equals_mean_color_error() {
        let k = Intrinsics::from_fov(24, 18, 1.0);
        let frame = RgbdFrame::new(ColorImage::filled(24, 18, [0.3; 3]), DepthMap::filled(24, 18, 1.0), k, 0.0, 0);
        let mut map = fitted_map(&frame);
        map.opacity_logit = DepthMap::filled(24, 18, 40.0);
        let render = splat(&[&map], &Pose::identity(), &k, false).unwrap();
        let e = 0.1;
        let mut target = frame.clone();
        target.color = render.color.map(|c| c.map(|x| x + e));
        let cfg = MapperConfig { color_weight: 1.0, ssim_weight: 0.0, depth_weight: 0.0, ..Default::default() };
        let mut state = MappingState::new(map, &cfg);
        let r = mapping_step(&mut state, &MapTarget { frame: &target, pose: Pose::identity() }, &[], &cfg).unwrap().unwrap();
        assert!((r.loss - e).abs() < 1e-12, "{}", r.loss);
    }

    #[test]
    fn fitted_scene_is_a_fixed_point() {
        let k = Intrinsics::from_fov(20, 16, 1.0);
        let frame = RgbdFrame::new(ColorImage::filled(20, 16, [0.4; 3]), DepthMap::filled(20, 16, 1.5), k, 0.0, 0);
        let map = fitted_map(&frame);
        let render = splat(&[&map], &Pose::identity(), &k, false).unwrap();
        let mut target = frame.clone();
        target.color = render.color.clone();
        target.depth = render.depth.clone();
        target.valid_mask = Mask::filled(20, 16, true);
        let cfg = MapperConfig::default();
        let mut state = MappingState::new(map.clone(), &cfg);
        let r = mapping_step(&mut state, &MapTarget { frame: &target, pose: Pose::identity() }, &[], &cfg).unwrap().unwrap();
        assert!(r.loss.abs() < 1e-12);
        let moved = state
            .map
            .log_radius
            .iter()
            .zip(map.log_radius.iter())
            .chain(state.map.offset.iter().zip(map.offset.iter()))
            .chain(state.map.opacity_logit.iter().zip(map.opacity_logit.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(moved < 1e-6, "{moved}");
    }

    #[test]
    fn invalid_target_is_skipped() {
        let k = Intrinsics::from_fov(8, 6, 1.0);
        let frame = RgbdFrame::new(ColorImage::filled(8, 6, [0.4; 3]), DepthMap::filled(8, 6, 1.0), k, 0.0, 0);
        let empty = RgbdFrame::new(ColorImage::filled(8, 6, [0.4; 3]), DepthMap::filled(8, 6, 0.0), k, 0.0, 1);
        let cfg = MapperConfig::default();
        let mut state = MappingState::new(fitted_map(&frame), &cfg);
        assert!(mapping_step(&mut state, &MapTarget { frame: &empty, pose: Pose::identity() }, &[], &cfg).unwrap().is_none());
    }

    #[test]
    fn no_holes_keeps_sensor_depth() {
        let scene = SyntheticScene::desk(1, 40, 30);
        let frame = render_synthetic_frame(&scene, 0).unwrap();
        assert_eq!(frame.valid_count(), 1200);
        let (base, n, i) = fill_base_depth(&frame, &scene.trajectory[0], &[], 0.5).unwrap();
        assert_eq!(base, frame.depth);
        assert_eq!((n, i), (0, 0));
    }

    #[test]
    fn holes_covered_by_a_neighbor_take_its_rendered_depth() {
        let scene = SyntheticScene::desk(2, 40, 30);
        let prev = render_synthetic_frame(&scene, 0).unwrap();
        let prev_map = init_gaussians(&prev, &scene.trajectory[0], &prev.depth).unwrap();
        let mut cur = render_synthetic_frame(&scene, 1).unwrap();
        let hole = (20, 15);
        cur.depth[hole] = 0.0;
        cur.valid_mask[hole] = false;
        let (base, n, _) = fill_base_depth(&cur, &scene.trajectory[1], &[&prev_map], 0.5).unwrap();
        assert_eq!(n, 1);
        let render = splat(&[&prev_map], &scene.trajectory[1], &cur.intrinsics, true).unwrap();
        assert_eq!(base[hole], render.depth[hole]);
    }
}
