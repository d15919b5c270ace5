//! Analytic splatting gradients against central finite differences.

mod common;

use common::*;
use geosplat::mapper::{splat, splat_backward, PixelGaussianMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let worst = gradient_check(&mut rng, 200);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn fixed_neighbor_occluder_keeps_gradients_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let k = intrinsics();
    let mut checked = 0;
    while checked < 20 {
        let d = draw(&mut rng);
        if !away_from_truncation(&d) {
            continue;
        }
        let mut occ = empty_map(5);
        let p = 8 * W + 8;
        occ.base_depth.as_mut_slice()[p] = 0.5;
        occ.log_radius.as_mut_slice()[p] = (4.0 * 0.5 / k.fx).ln();
        occ.opacity_logit.as_mut_slice()[p] = 0.3;
        occ.color.as_mut_slice()[p] = [0.9, 0.1, 0.5];
        occ.active.as_mut_slice()[p] = true;
        let (wc, wd, wa) = &d.weights;
        let grads = splat_backward(&[&d.map, &occ], 0, &d.target, &k, d.normalize, wc, wd, wa).unwrap();
        let eval = |m: &PixelGaussianMap| {
            let out = splat(&[m, &occ], &d.target, &k, d.normalize).unwrap();
            let mut s = 0.0;
            for i in 0..W * H {
                for c in 0..3 {
                    s += wc.as_slice()[i][c] * out.color.as_slice()[i][c];
                }
                s += wd.as_slice()[i] * out.depth.as_slice()[i] + wa.as_slice()[i] * out.alpha.as_slice()[i];
            }
            s
        };
        for q in 0..W * H {
            if !d.map.active.as_slice()[q] {
                continue;
            }
            let h = FD_STEP;
            let fd = (eval(&perturb(&d.map, q, Param::Opacity, h)) - eval(&perturb(&d.map, q, Param::Opacity, -h))) / (2.0 * h);
            let a = grads.opacity_logit.as_slice()[q];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) < 1e-3, "{a} vs {fd}");
        }
        checked += 1;
    }
}
