//! Tile-based splatting of pixel-aligned Gaussians and its analytic backward pass.
//!
//! Every active Gaussian is placed at `pose_src · ray(u, v) · |base + δ|`, projected into the
//! target camera and drawn as an isotropic 2D Gaussian with `σ_px = r·f_x / z`, truncated at
//! `3σ_px`. Pixels composite front-to-back in `(z, frame_index, pixel)` order.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::PixelGaussianMap;
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::grid::{ColorImage, DepthMap, Grid};
use crate::Pose;

/// Gaussians closer than this (meters, target camera z) are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// A pixel stops compositing once its transmittance falls below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
pub const MAX_ALPHA: f64 = 0.999;
const TRUNCATION: f64 = 3.0;
const TILE: usize = 8;
const MIN_NORMALIZING_ALPHA: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Clamped to `[0, 1]`.
    pub color: ColorImage,
    /// Meters, alpha-weighted (or alpha-normalized when requested).
    pub depth: DepthMap,
    pub alpha: DepthMap,
    pub contributors: Grid<u32>,
}

/// Gradients with respect to the learnable attributes of one map, laid out like the map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGradients {
    pub color: ColorImage,
    pub log_radius: DepthMap,
    pub opacity_logit: DepthMap,
    pub offset: DepthMap,
}

impl MapGradients {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: ColorImage::filled(width, height, [0.0; 3]),
            log_radius: DepthMap::filled(width, height, 0.0),
            opacity_logit: DepthMap::filled(width, height, 0.0),
            offset: DepthMap::filled(width, height, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Projected {
    source: usize,
    frame: usize,
    pixel: usize,
    /// Target-camera coordinates.
    cam: Vector3<f64>,
    /// d cam / d |base + δ|.
    ray_dir: Vector3<f64>,
    u: f64,
    v: f64,
    sigma: f64,
    radius: f64,
    opacity: f64,
    color: [f64; 3],
}

struct Scene {
    gaussians: Vec<Projected>,
    /// Per tile, indices into `gaussians` in compositing order.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
}

fn check_sources(sources: &[&PixelGaussianMap], k: &Intrinsics) -> Result<()> {
    k.validate()?;
    for m in sources {
        m.check_shape(k)?;
        if !m.pose.is_finite() {
            return Err(Error::InvalidInput(format!("map of frame {} has a non-finite pose", m.frame_index)));
        }
    }
    Ok(())
}

fn project_sources(sources: &[&PixelGaussianMap], target: &Pose, k: &Intrinsics) -> Scene {
    let world_to_target = target.inverse();
    let w = k.width;
    let mut gaussians: Vec<Projected> = Vec::new();
    for (s, map) in sources.iter().enumerate() {
        let rel = world_to_target.compose(&map.pose);
        let projected: Vec<Option<Projected>> = (0..map.len())
            .into_par_iter()
            .map(|i| {
                if !map.active.as_slice()[i] {
                    return None;
                }
                let ray = k.ray((i % w) as f64, (i / w) as f64);
                let ray_dir = rel.rotation * ray;
                let cam = ray_dir * map.adjusted_depth(i) + rel.translation;
                if !(cam.z > NEAR_PLANE) {
                    return None;
                }
                let radius = map.radius(i);
                let sigma = radius * k.fx / cam.z;
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return None;
                }
                let u = k.fx * cam.x / cam.z + k.cx;
                let v = k.fy * cam.y / cam.z + k.cy;
                let reach = TRUNCATION * sigma;
                if u + reach < 0.0 || v + reach < 0.0 || u - reach > (k.width - 1) as f64 || v - reach > (k.height - 1) as f64 {
                    return None;
                }
                Some(Projected {
                    source: s,
                    frame: map.frame_index,
                    pixel: i,
                    cam,
                    ray_dir,
                    u,
                    v,
                    sigma,
                    radius,
                    opacity: map.opacity(i),
                    color: map.color.as_slice()[i],
                })
            })
            .collect();
        gaussians.extend(projected.into_iter().flatten());
    }
    gaussians.par_sort_unstable_by(|a, b| {
        a.cam
            .z
            .total_cmp(&b.cam.z)
            .then(a.frame.cmp(&b.frame))
            .then(a.pixel.cmp(&b.pixel))
            .then(a.source.cmp(&b.source))
    });

    let tiles_x = k.width.div_ceil(TILE);
    let tiles_y = k.height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (gi, g) in gaussians.iter().enumerate() {
        let reach = TRUNCATION * g.sigma;
        let u0 = (g.u - reach).ceil().max(0.0) as usize;
        let v0 = (g.v - reach).ceil().max(0.0) as usize;
        let u1 = (g.u + reach).floor().min((k.width - 1) as f64);
        let v1 = (g.v + reach).floor().min((k.height - 1) as f64);
        if u1 < u0 as f64 || v1 < v0 as f64 {
            continue;
        }
        let (u1, v1) = (u1 as usize, v1 as usize);
        for ty in v0 / TILE..=v1 / TILE {
            for tx in u0 / TILE..=u1 / TILE {
                tiles[ty * tiles_x + tx].push(gi as u32);
            }
        }
    }
    Scene { gaussians, tiles, tiles_x }
}

#[derive(Debug, Clone, Copy)]
struct Contribution {
    /// Position in the tile list.
    slot: usize,
    gaussian: u32,
    alpha: f64,
    weight: f64,
    transmittance: f64,
    clamped: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct PixelSum {
    color: [f64; 3],
    depth: f64,
    alpha: f64,
    count: u32,
}

/// Front-to-back compositing of one pixel; `visit` sees each contribution in order.
#[inline]
fn composite(list: &[u32], gaussians: &[Projected], px: f64, py: f64, mut visit: impl FnMut(Contribution)) -> PixelSum {
    let mut sum = PixelSum::default();
    let mut t = 1.0;
    for (slot, &gi) in list.iter().enumerate() {
        let g = &gaussians[gi as usize];
        let du = px - g.u;
        let dv = py - g.v;
        let d2 = du * du + dv * dv;
        let s2 = g.sigma * g.sigma;
        if d2 > TRUNCATION * TRUNCATION * s2 {
            continue;
        }
        let weight = (-d2 / (2.0 * s2)).exp();
        let raw = g.opacity * weight;
        let clamped = raw > MAX_ALPHA;
        let alpha = if clamped { MAX_ALPHA } else { raw };
        let wt = alpha * t;
        for c in 0..3 {
            sum.color[c] += g.color[c] * wt;
        }
        sum.depth += g.cam.z * wt;
        sum.alpha += wt;
        sum.count += 1;
        visit(Contribution {
            slot,
            gaussian: gi,
            alpha,
            weight,
            transmittance: t,
            clamped,
        });
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_STOP {
            break;
        }
    }
    sum
}

fn tile_pixels(tile: usize, tiles_x: usize, k: &Intrinsics) -> impl Iterator<Item = (usize, usize)> {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let u_end = ((tx + 1) * TILE).min(k.width);
    let v_end = ((ty + 1) * TILE).min(k.height);
    (ty * TILE..v_end).flat_map(move |v| (tx * TILE..u_end).map(move |u| (u, v)))
}

/// Renders color, depth and alpha of the given maps seen from `target` (camera-to-world).
pub fn splat(sources: &[&PixelGaussianMap], target: &Pose, k: &Intrinsics, normalize_depth: bool) -> Result<RenderOutput> {
    check_sources(sources, k)?;
    let scene = project_sources(sources, target, k);
    let per_tile: Vec<Vec<(usize, PixelSum)>> = (0..scene.tiles.len())
        .into_par_iter()
        .map(|tile| {
            tile_pixels(tile, scene.tiles_x, k)
                .map(|(u, v)| {
                    let sum = composite(&scene.tiles[tile], &scene.gaussians, u as f64, v as f64, |_| {});
                    (v * k.width + u, sum)
                })
                .collect()
        })
        .collect();

    let (w, h) = (k.width, k.height);
    let mut out = RenderOutput {
        color: ColorImage::filled(w, h, [0.0; 3]),
        depth: DepthMap::filled(w, h, 0.0),
        alpha: DepthMap::filled(w, h, 0.0),
        contributors: Grid::filled(w, h, 0),
    };
    for (i, s) in per_tile.into_iter().flatten() {
        out.color.as_mut_slice()[i] = s.color.map(|c| c.clamp(0.0, 1.0));
        out.depth.as_mut_slice()[i] = if normalize_depth {
            if s.alpha > MIN_NORMALIZING_ALPHA {
                s.depth / s.alpha
            } else {
                0.0
            }
        } else {
            s.depth
        };
        out.alpha.as_mut_slice()[i] = s.alpha;
        out.contributors.as_mut_slice()[i] = s.count;
    }
    Ok(out)
}

/// Per-Gaussian accumulators: dL/d color (3), opacity, u, v, σ_px, z.
type Accum = [f64; 8];

/// Exact gradients of `Σ gC·C + gD·D + gA·A` with respect to the attributes of
/// `sources[learnable]`; the other maps are treated as constants.
#[allow(clippy::too_many_arguments)]
pub fn splat_backward(
    sources: &[&PixelGaussianMap],
    learnable: usize,
    target: &Pose,
    k: &Intrinsics,
    normalize_depth: bool,
    grad_color: &ColorImage,
    grad_depth: &DepthMap,
    grad_alpha: &DepthMap,
) -> Result<MapGradients> {
    check_sources(sources, k)?;
    if learnable >= sources.len() {
        return Err(Error::InvalidInput(format!("learnable map {learnable} out of {}", sources.len())));
    }
    for (name, w, h) in [
        ("color", grad_color.width(), grad_color.height()),
        ("depth", grad_depth.width(), grad_depth.height()),
        ("alpha", grad_alpha.width(), grad_alpha.height()),
    ] {
        if w != k.width || h != k.height {
            return Err(Error::InvalidInput(format!("{name} gradient is {w}x{h}, expected {}x{}", k.width, k.height)));
        }
    }
    let scene = project_sources(sources, target, k);
    let gaussians = &scene.gaussians;

    let per_tile: Vec<Vec<Accum>> = (0..scene.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &scene.tiles[tile];
            let mut acc = vec![[0.0; 8]; list.len()];
            let mut contribs = Vec::new();
            for (u, v) in tile_pixels(tile, scene.tiles_x, k) {
                let i = v * k.width + u;
                let (px, py) = (u as f64, v as f64);
                contribs.clear();
                let sum = composite(list, gaussians, px, py, |c| contribs.push(c));
                if contribs.is_empty() {
                    continue;
                }
                let upstream = grad_color.as_slice()[i];
                let mut g_color = [0.0; 3];
                for c in 0..3 {
                    if (0.0..=1.0).contains(&sum.color[c]) {
                        g_color[c] = upstream[c];
                    }
                }
                let mut g_depth = grad_depth.as_slice()[i];
                let mut g_alpha = grad_alpha.as_slice()[i];
                if normalize_depth {
                    if sum.alpha > MIN_NORMALIZING_ALPHA {
                        g_alpha -= g_depth * sum.depth / (sum.alpha * sum.alpha);
                        g_depth /= sum.alpha;
                    } else {
                        g_depth = 0.0;
                    }
                }
                if g_color == [0.0; 3] && g_depth == 0.0 && g_alpha == 0.0 {
                    continue;
                }
                // suffix sums Σ_{l>j} x_l α_l T_l for color, depth and alpha
                let mut suffix = [0.0; 5];
                for c in contribs.iter().rev() {
                    let g = &gaussians[c.gaussian as usize];
                    let at = c.alpha * c.transmittance;
                    let keep = 1.0 / (1.0 - c.alpha);
                    if g.source == learnable {
                        let mut d_alpha = 0.0;
                        for ch in 0..3 {
                            d_alpha += g_color[ch] * (g.color[ch] * c.transmittance - suffix[ch] * keep);
                        }
                        d_alpha += g_depth * (g.cam.z * c.transmittance - suffix[3] * keep);
                        d_alpha += g_alpha * (c.transmittance - suffix[4] * keep);
                        let a = &mut acc[c.slot];
                        for ch in 0..3 {
                            a[ch] += g_color[ch] * at;
                        }
                        a[7] += g_depth * at;
                        if !c.clamped {
                            a[3] += d_alpha * c.weight;
                            let d_weight = d_alpha * g.opacity * c.weight;
                            let s2 = g.sigma * g.sigma;
                            let du = px - g.u;
                            let dv = py - g.v;
                            a[4] += d_weight * du / s2;
                            a[5] += d_weight * dv / s2;
                            a[6] += d_weight * (du * du + dv * dv) / (s2 * g.sigma);
                        }
                    }
                    for ch in 0..3 {
                        suffix[ch] += g.color[ch] * at;
                    }
                    suffix[3] += g.cam.z * at;
                    suffix[4] += at;
                }
            }
            acc
        })
        .collect();

    let mut totals: Vec<Accum> = vec![[0.0; 8]; gaussians.len()];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (pos, a) in acc.iter().enumerate() {
            let t = &mut totals[scene.tiles[tile][pos] as usize];
            for j in 0..8 {
                t[j] += a[j];
            }
        }
    }

    let map = sources[learnable];
    let mut grads = MapGradients::zeros(map.width(), map.height());
    for (g, a) in gaussians.iter().zip(&totals) {
        if g.source != learnable {
            continue;
        }
        let i = g.pixel;
        let z = g.cam.z;
        grads.color.as_mut_slice()[i] = [a[0], a[1], a[2]];
        grads.opacity_logit.as_mut_slice()[i] = a[3] * g.opacity * (1.0 - g.opacity);
        grads.log_radius.as_mut_slice()[i] = a[6] * k.fx / z * g.radius;
        let d_cam = Vector3::new(
            a[4] * k.fx / z,
            a[5] * k.fy / z,
            a[7] - (a[4] * k.fx * g.cam.x + a[5] * k.fy * g.cam.y + a[6] * g.radius * k.fx) / (z * z),
        );
        let signed = map.base_depth.as_slice()[i] + map.offset.as_slice()[i];
        let sign = if signed < 0.0 { -1.0 } else { 1.0 };
        grads.offset.as_mut_slice()[i] = d_cam.dot(&g.ray_dir) * sign;
    }
    Ok(grads)
}
