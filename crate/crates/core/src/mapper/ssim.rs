//! Structural similarity with an 11×11 Gaussian window (σ = 1.5) and its gradient.
//!
//! Windows are truncated at the image border and renormalized by their in-bounds weight, so a
//! constant image has exactly constant local statistics.

use crate::error::{Error, Result};
use crate::grid::ColorImage;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, w) in k.iter_mut().enumerate() {
        let x = i as f64 - RADIUS as f64;
        *w = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|w| w / s)
}

/// Normalized 1D blur along rows (`horizontal`) or columns, and its adjoint.
struct Blur {
    width: usize,
    height: usize,
    kernel: [f64; 2 * RADIUS + 1],
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
}

impl Blur {
    fn new(width: usize, height: usize) -> Self {
        let kernel = kernel();
        let norm = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|p| {
                    (0..=2 * RADIUS)
                        .filter(|&t| {
                            let q = p as isize + t as isize - RADIUS as isize;
                            q >= 0 && (q as usize) < n
                        })
                        .map(|t| kernel[t])
                        .sum()
                })
                .collect()
        };
        Self {
            width,
            height,
            kernel,
            norm_x: norm(width),
            norm_y: norm(height),
        }
    }

    fn pass(&self, src: &[f64], horizontal: bool, adjoint: bool) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let (n, norm) = if horizontal { (w, &self.norm_x) } else { (h, &self.norm_y) };
        let mut out = vec![0.0; w * h];
        for v in 0..h {
            for u in 0..w {
                let p = if horizontal { u } else { v };
                let lo = p.saturating_sub(RADIUS);
                let hi = (p + RADIUS).min(n - 1);
                let mut acc = 0.0;
                for q in lo..=hi {
                    let idx = if horizontal { v * w + q } else { q * w + u };
                    let kw = self.kernel[q + RADIUS - p];
                    // forward divides by the window sum at the output position, the adjoint
                    // by the sum at the input position it gathers from
                    acc += if adjoint { kw * src[idx] / norm[q] } else { kw * src[idx] };
                }
                out[v * w + u] = if adjoint { acc } else { acc / norm[p] };
            }
        }
        out
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.pass(&self.pass(x, true, false), false, false)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.pass(&self.pass(y, false, true), true, true)
    }
}

fn check(a: &ColorImage, b: &ColorImage) -> Result<()> {
    if !a.same_shape(b) || a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "ssim needs equal non-empty shapes, got {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn channel(img: &ColorImage, c: usize) -> Vec<f64> {
    img.iter().map(|p| p[c]).collect()
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &ColorImage, b: &ColorImage) -> Result<(f64, ColorImage)> {
    let (s, g) = ssim_impl(a, b, true)?;
    Ok((s, g.expect("gradient requested")))
}

fn ssim_impl(a: &ColorImage, b: &ColorImage, want_grad: bool) -> Result<(f64, Option<ColorImage>)> {
    check(a, b)?;
    let (w, h) = (a.width(), a.height());
    let n = (w * h) as f64;
    let blur = Blur::new(w, h);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| ColorImage::filled(w, h, [0.0; 3]));
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = blur.apply(&x);
        let my = blur.apply(&y);
        let exx = blur.apply(&xx);
        let eyy = blur.apply(&yy);
        let exy = blur.apply(&xy);
        let mut d_mx = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for i in 0..w * h {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cxy = exy[i] - mx[i] * my[i];
            let l_num = 2.0 * mx[i] * my[i] + SSIM_C1;
            let l_den = mx[i] * mx[i] + my[i] * my[i] + SSIM_C1;
            let s_num = 2.0 * cxy + SSIM_C2;
            let s_den = vx + vy + SSIM_C2;
            let s = (l_num * s_num) / (l_den * s_den);
            total += s;
            if want_grad {
                let scale = 1.0 / (3.0 * n);
                let ds_dmx = (2.0 * my[i] / l_num - 2.0 * mx[i] / l_den) * s;
                let ds_dvx = -s / s_den;
                let ds_dcxy = 2.0 * s / s_num;
                d_exx[i] = ds_dvx * scale;
                d_exy[i] = ds_dcxy * scale;
                d_mx[i] = (ds_dmx - 2.0 * mx[i] * ds_dvx - my[i] * ds_dcxy) * scale;
            }
        }
        if let Some(g) = grad.as_mut() {
            let gm = blur.apply_adjoint(&d_mx);
            let gxx = blur.apply_adjoint(&d_exx);
            let gxy = blur.apply_adjoint(&d_exy);
            for (i, px) in g.as_mut_slice().iter_mut().enumerate() {
                px[c] = gm[i] + 2.0 * x[i] * gxx[i] + y[i] * gxy[i];
            }
        }
    }
    Ok((total / (3.0 * n), grad))
}
