use crate::error::{Error, Result};
use crate::grid::{DepthMap, Mask};

/// Stopping rule for the Laplace fill.
#[derive(Debug, Clone, Copy)]
pub struct InpaintParams {
    pub max_iters: usize,
    /// Meters.
    pub tolerance: f64,
}

impl Default for InpaintParams {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tolerance: 1e-5,
        }
    }
}

/// Fills invalid pixels by harmonic interpolation with the valid pixels as a fixed boundary.
///
/// Holes are first seeded layer by layer from already-known neighbors, then relaxed with
/// Jacobi sweeps of the 4-neighbor Laplace stencil.
pub fn inpaint_depth(depth: &DepthMap, valid_mask: &Mask) -> Result<DepthMap> {
    inpaint_depth_with(depth, valid_mask, InpaintParams::default())
}

pub fn inpaint_depth_with(depth: &DepthMap, valid_mask: &Mask, params: InpaintParams) -> Result<DepthMap> {
    if !depth.same_shape(valid_mask) {
        return Err(Error::InvalidInput("depth and mask shapes differ".into()));
    }
    let (w, h) = (depth.width(), depth.height());
    let known: Vec<bool> = depth
        .iter()
        .zip(valid_mask.iter())
        .map(|(&d, &m)| m && d > 0.0 && d.is_finite())
        .collect();
    if !known.iter().any(|&k| k) {
        return Err(Error::InvalidInput("depth map has no valid pixel to inpaint from".into()));
    }
    let mut out: Vec<f64> = depth
        .iter()
        .zip(&known)
        .map(|(&d, &k)| if k { d } else { 0.0 })
        .collect();
    let holes: Vec<usize> = (0..w * h).filter(|&i| !known[i]).collect();
    if holes.is_empty() {
        return Ok(DepthMap::from_vec(w, h, out));
    }

    let neighbors = |i: usize| {
        let (u, v) = (i % w, i / w);
        let mut n = [usize::MAX; 4];
        if u > 0 {
            n[0] = i - 1;
        }
        if u + 1 < w {
            n[1] = i + 1;
        }
        if v > 0 {
            n[2] = i - w;
        }
        if v + 1 < h {
            n[3] = i + w;
        }
        n
    };

    // Onion-peel seeding: each layer averages neighbors filled in earlier layers.
    let mut filled = known.clone();
    let mut remaining = holes.clone();
    while !remaining.is_empty() {
        let mut layer = Vec::new();
        let mut rest = Vec::new();
        for &i in &remaining {
            let (mut sum, mut n) = (0.0, 0);
            for j in neighbors(i) {
                if j != usize::MAX && filled[j] {
                    sum += out[j];
                    n += 1;
                }
            }
            if n > 0 {
                layer.push((i, sum / n as f64));
            } else {
                rest.push(i);
            }
        }
        for &(i, val) in &layer {
            out[i] = val;
            filled[i] = true;
        }
        remaining = rest;
    }

    let mut next = out.clone();
    for _ in 0..params.max_iters {
        let mut max_update: f64 = 0.0;
        for &i in &holes {
            let (mut sum, mut n) = (0.0, 0);
            for j in neighbors(i) {
                if j != usize::MAX {
                    sum += out[j];
                    n += 1;
                }
            }
            let val = sum / n as f64;
            max_update = max_update.max((val - out[i]).abs());
            next[i] = val;
        }
        std::mem::swap(&mut out, &mut next);
        if max_update < params.tolerance {
            break;
        }
    }
    Ok(DepthMap::from_vec(w, h, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact Laplace solution for one interior hole: the mean of its four neighbors.
    fn single_hole_oracle(depth: &DepthMap, u: usize, v: usize) -> f64 {
        (depth[(u - 1, v)] + depth[(u + 1, v)] + depth[(u, v - 1)] + depth[(u, v + 1)]) / 4.0
    }

    #[test]
    fn fully_valid_map_is_unchanged() {
        let d = DepthMap::from_fn(7, 5, |u, v| 1.0 + 0.1 * u as f64 + 0.01 * v as f64);
        let m = Mask::filled(7, 5, true);
        assert_eq!(inpaint_depth(&d, &m).unwrap(), d);
    }

    #[test]
    fn single_hole_takes_neighbor_value() {
        let mut d = DepthMap::filled(9, 9, 2.0);
        d[(4, 4)] = 0.0;
        let m = d.map(|&x| x > 0.0);
        let out = inpaint_depth(&d, &m).unwrap();
        assert!((out[(4, 4)] - single_hole_oracle(&d, 4, 4)).abs() < 1e-4);
        assert!((out[(4, 4)] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn single_hole_with_distinct_neighbors() {
        let mut d = DepthMap::filled(5, 5, 1.0);
        d[(1, 2)] = 1.0;
        d[(3, 2)] = 2.0;
        d[(2, 1)] = 3.0;
        d[(2, 3)] = 4.0;
        d[(2, 2)] = 0.0;
        let m = d.map(|&x| x > 0.0);
        let out = inpaint_depth(&d, &m).unwrap();
        assert!((out[(2, 2)] - single_hole_oracle(&d, 2, 2)).abs() < 1e-12);
    }

    #[test]
    fn constant_boundary_fills_constant() {
        let (w, h) = (64, 48);
        let d = DepthMap::from_fn(w, h, |u, _| if u < w / 2 { 0.0 } else { 1.0 });
        let m = d.map(|&x| x > 0.0);
        let out = inpaint_depth(&d, &m).unwrap();
        for v in 0..h {
            for u in 0..w {
                assert!((out[(u, v)] - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn all_invalid_is_an_error() {
        let d = DepthMap::filled(4, 4, 0.0);
        let m = Mask::filled(4, 4, false);
        assert!(inpaint_depth(&d, &m).is_err());
    }

    #[test]
    fn output_positive_and_valid_pixels_preserved() {
        let d = DepthMap::from_fn(20, 20, |u, v| {
            if (u * 7 + v * 13) % 5 == 0 || (5..12).contains(&u) && (3..15).contains(&v) {
                0.0
            } else {
                0.5 + 0.05 * u as f64
            }
        });
        let m = d.map(|&x| x > 0.0);
        let out = inpaint_depth(&d, &m).unwrap();
        for i in 0..d.len() {
            assert!(out.as_slice()[i] > 0.0);
            if m.as_slice()[i] {
                assert_eq!(out.as_slice()[i], d.as_slice()[i]);
            }
        }
        // idempotent on its own (now fully valid) output
        let again = inpaint_depth(&out, &out.map(|&x| x > 0.0)).unwrap();
        assert_eq!(again, out);
    }
}
