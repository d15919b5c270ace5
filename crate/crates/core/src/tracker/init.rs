//! Pose initialization for the next frame.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::dataset::RgbdFrame;
use crate::error::Result;
use crate::geometry::Twist;
use crate::mapper::{splat, MapperConfig, PixelGaussianMap};
use crate::Pose;

/// Minimum fraction of the frame the previous map must cover for render-based refinement.
pub const RENDER_INIT_MIN_COVERAGE: f64 = 0.3;
const COVERED_ALPHA: f64 = 0.5;
const FD_STEP: f64 = 1e-3;
const IRLS_FLOOR: f64 = 1e-3;
const MAX_HALVINGS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderInitResult {
    pub pose: Pose,
    pub iterations: usize,
    /// Mean absolute residual over the covered pixels at `pose`.
    pub cost: f64,
    /// Fraction of the frame covered by the previous map at the start pose.
    pub coverage: f64,
    /// Coverage too low; `pose` is the start pose.
    pub failed: bool,
}

/// Replays the last inter-frame motion: `prev ∘ (prev_prev⁻¹ ∘ prev)`.
pub fn init_pose_constant_speed(prev: &Pose, prev_prev: &Pose) -> Pose {
    prev.compose(&prev_prev.inverse().compose(prev))
}

/// Residuals `V′ − V` (3 per pixel) and `σ·(D′ − D)` on valid depth, over `pixels`, with the
/// previous map rendered at `pose` under the mapper's depth convention.
fn residuals(frame: &RgbdFrame, map: &PixelGaussianMap, pose: &Pose, pixels: &[usize], cfg: &MapperConfig) -> Result<DVector<f64>> {
    let out = splat(&[map], pose, &frame.intrinsics, cfg.normalize_depth)?;
    let mut r = DVector::zeros(4 * pixels.len());
    for (j, &i) in pixels.iter().enumerate() {
        let c = out.color.as_slice()[i];
        let t = frame.color.as_slice()[i];
        for ch in 0..3 {
            r[4 * j + ch] = c[ch] - t[ch];
        }
        if frame.valid_mask.as_slice()[i] {
            r[4 * j + 3] = cfg.depth_weight * (out.depth.as_slice()[i] - frame.depth.as_slice()[i]);
        }
    }
    Ok(r)
}

fn mean_abs(r: &DVector<f64>, pixels: usize) -> f64 {
    r.iter().map(|x| x.abs()).sum::<f64>() / pixels.max(1) as f64
}

/// Refines `start` by iteratively reweighted Gauss-Newton on the L1 color and depth error
/// between `frame` and renders of the previous frame's map, weighting depth by
/// `cfg.depth_weight`. Pose Jacobians are central finite differences on the left-multiplied
/// twist.
pub fn init_pose_render(
    frame: &RgbdFrame,
    prev_map: &PixelGaussianMap,
    start: &Pose,
    iters: usize,
    cfg: &MapperConfig,
) -> Result<RenderInitResult> {
    let k = &frame.intrinsics;
    let first = splat(&[prev_map], start, k, true)?;
    let pixels: Vec<usize> = (0..first.alpha.len()).filter(|&i| first.alpha.as_slice()[i] > COVERED_ALPHA).collect();
    let coverage = pixels.len() as f64 / k.pixel_count() as f64;
    let mut result = RenderInitResult {
        pose: *start,
        iterations: 0,
        cost: f64::INFINITY,
        coverage,
        failed: coverage < RENDER_INIT_MIN_COVERAGE,
    };
    if result.failed {
        return Ok(result);
    }
    let mut pose = *start;
    let mut r = residuals(frame, prev_map, &pose, &pixels, cfg)?;
    let mut cost = mean_abs(&r, pixels.len());
    for _ in 0..iters {
        result.iterations += 1;
        let mut jac = DMatrix::zeros(r.len(), 6);
        for a in 0..6 {
            let mut e = Twist::zeros();
            e[a] = FD_STEP;
            let plus = residuals(frame, prev_map, &pose.left_update(&e), &pixels, cfg)?;
            let minus = residuals(frame, prev_map, &pose.left_update(&(-e)), &pixels, cfg)?;
            jac.set_column(a, &((plus - minus) / (2.0 * FD_STEP)));
        }
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for i in 0..r.len() {
            let w = 1.0 / r[i].abs().max(IRLS_FLOOR);
            let row = jac.row(i);
            for a in 0..6 {
                g[a] -= w * row[a] * r[i];
                for b in 0..6 {
                    h[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        let Some(mut delta) = h.cholesky().map(|c| c.solve(&g)).or_else(|| h.lu().solve(&g)) else {
            break;
        };
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = pose.left_update(&delta);
            let rc = residuals(frame, prev_map, &candidate, &pixels, cfg)?;
            let c = mean_abs(&rc, pixels.len());
            if c < cost {
                accepted = Some((candidate, rc, c));
                break;
            }
            delta *= 0.5;
        }
        let Some((candidate, rc, c)) = accepted else {
            break;
        };
        pose = candidate;
        r = rc;
        cost = c;
    }
    result.pose = pose;
    result.cost = cost;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{render_synthetic_frame, SyntheticScene};
    use crate::grid::ColorImage;
    use crate::mapper::{init_gaussians, map_frame};
    use nalgebra::Vector3;

    #[test]
    fn zero_velocity() {
        let p = Pose::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.4, Vector3::new(0.1, 0.2, 0.3));
        assert!(init_pose_constant_speed(&p, &p).max_abs_diff(&p) < 1e-15);
    }

    #[test]
    fn linear_extrapolation() {
        let a = Pose::from_translation(Vector3::new(0.0, 0.0, 0.01));
        let b = Pose::from_translation(Vector3::new(0.0, 0.0, 0.02));
        let c = init_pose_constant_speed(&b, &a);
        assert!((c.translation - Vector3::new(0.0, 0.0, 0.03)).norm() < 1e-15);
    }

    #[test]
    fn angular_extrapolation() {
        let step = 2f64.to_radians();
        let a = Pose::from_axis_angle(Vector3::z(), step, Vector3::zeros());
        let b = Pose::from_axis_angle(Vector3::z(), 2.0 * step, Vector3::zeros());
        let c = init_pose_constant_speed(&b, &a);
        let expected = Pose::from_axis_angle(Vector3::z(), 3.0 * step, Vector3::zeros());
        assert!(c.max_abs_diff(&expected) < 1e-14);
    }

    fn shifted_pair(scene: &SyntheticScene) -> (RgbdFrame, PixelGaussianMap, Pose, Pose) {
        let prev = render_synthetic_frame(scene, 0).unwrap();
        let cur = render_synthetic_frame(scene, 1).unwrap();
        let map = map_frame(&prev, &scene.trajectory[0], &[], &MapperConfig::default()).unwrap().map;
        (cur, map, scene.trajectory[0], scene.trajectory[1])
    }

    fn lateral_scene(mut scene: SyntheticScene) -> SyntheticScene {
        let p0 = scene.trajectory[0];
        let shift = p0.rotation * Vector3::new(0.01, 0.0, 0.0);
        scene.trajectory = vec![p0, Pose::new(p0.rotation, p0.translation + shift)];
        scene
    }

    #[test]
    fn identical_view_is_a_fixed_point() {
        let scene = SyntheticScene::desk(1, 48, 36);
        let prev = render_synthetic_frame(&scene, 0).unwrap();
        let map = init_gaussians(&prev, &scene.trajectory[0], &prev.depth).unwrap();
        let render = splat(&[&map], &scene.trajectory[0], &prev.intrinsics, false).unwrap();
        let mut frame = prev.clone();
        frame.color = render.color;
        frame.depth = render.depth;
        let r = init_pose_render(&frame, &map, &scene.trajectory[0], 10, &MapperConfig::default()).unwrap();
        assert!(!r.failed);
        assert!(r.pose.max_abs_diff(&scene.trajectory[0]) < 1e-6);
    }

    #[test]
    fn recovers_a_lateral_shift() {
        let scene = lateral_scene(SyntheticScene::desk(2, 64, 48));
        let (cur, map, prev_pose, truth) = shifted_pair(&scene);
        let r = init_pose_render(&cur, &map, &prev_pose, 10, &MapperConfig::default()).unwrap();
        assert!(!r.failed);
        let err = r.pose.translation_distance_to(&truth);
        assert!(err < 2e-3, "{err}");
    }

    #[test]
    fn textureless_scene_converges_through_depth() {
        let scene = lateral_scene(SyntheticScene::plane_box(2, 64, 48));
        let mut prev = render_synthetic_frame(&scene, 0).unwrap();
        prev.color = ColorImage::filled(64, 48, [0.5; 3]);
        let map = init_gaussians(&prev, &scene.trajectory[0], &prev.depth).unwrap();
        let truth = scene.trajectory[1];
        let render = splat(&[&map], &truth, &prev.intrinsics, false).unwrap();
        let mut cur = prev.clone();
        cur.color = render.color;
        cur.depth = render.depth;
        cur.valid_mask = render.alpha.map(|&a| a > 0.5);
        let r = init_pose_render(&cur, &map, &scene.trajectory[0], 10, &MapperConfig::default()).unwrap();
        assert!(!r.failed);
        let err = r.pose.translation_distance_to(&truth);
        assert!(err < 2e-3, "{err} after {}", r.iterations);
    }

    #[test]
    fn low_coverage_fails() {
        let scene = SyntheticScene::desk(1, 32, 24);
        let prev = render_synthetic_frame(&scene, 0).unwrap();
        let map = init_gaussians(&prev, &scene.trajectory[0], &prev.depth).unwrap();
        let away = Pose::from_axis_angle(Vector3::y(), std::f64::consts::PI, Vector3::zeros()).compose(&scene.trajectory[0]);
        let r = init_pose_render(&prev, &map, &away, 5, &MapperConfig::default()).unwrap();
        assert!(r.failed);
        assert_eq!(r.pose, away);
    }
}
