//! Eigendecomposition of symmetric 3×3 matrices.
//!
//! Closed-form trigonometric eigenvalues with cross-product eigenvectors; near-repeated
//! spectra fall back to cyclic Jacobi rotations, where the closed form loses accuracy.

use nalgebra::{Matrix3, Vector3};

/// Relative eigenvalue gap below which the Jacobi fallback is used.
const ANALYTIC_GAP: f64 = 1e-4;

/// `M = rotation · diag(scales²) · rotationᵀ`, scales descending, `det(rotation) = +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3Decomp {
    pub rotation: Matrix3<f64>,
    pub scales: Vector3<f64>,
}

impl Mat3Decomp {
    pub fn reconstruct(&self) -> Matrix3<f64> {
        let s2 = self.scales.component_mul(&self.scales);
        self.rotation * Matrix3::from_diagonal(&s2) * self.rotation.transpose()
    }
}

/// Eigenvalues (descending) and matching unit eigenvectors as columns.
pub fn sym3_eigen(m: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let m = (m + m.transpose()) * 0.5;
    let scale = m.abs().max();
    if scale == 0.0 {
        return (Vector3::zeros(), Matrix3::identity());
    }
    match analytic(&m, scale) {
        Some(r) => r,
        None => jacobi(&m),
    }
}

/// Decomposes a symmetric PSD matrix; negative eigenvalues from rounding are clamped to zero.
pub fn sym3_eigendecomp(m: &Matrix3<f64>) -> Mat3Decomp {
    let (values, vectors) = sym3_eigen(m);
    Mat3Decomp {
        rotation: vectors,
        scales: values.map(|l| l.max(0.0).sqrt()),
    }
}

fn analytic(m: &Matrix3<f64>, scale: f64) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
    let q = m.trace() / 3.0;
    let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p <= ANALYTIC_GAP * scale {
        return None;
    }
    let b = (m - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l0 = q + 2.0 * p * phi.cos();
    let l2 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let l1 = 3.0 * q - l0 - l2;
    let tol = ANALYTIC_GAP * scale;
    if l0 - l1 < tol || l1 - l2 < tol {
        return None;
    }
    let e0 = null_vector(m, l0)?;
    let e2 = null_vector(m, l2)?;
    let e2 = (e2 - e0 * e0.dot(&e2)).normalize();
    let e1 = e2.cross(&e0);
    Some((Vector3::new(l0, l1, l2), Matrix3::from_columns(&[e0, e1, e2])))
}

/// Unit vector spanning the null space of `m − λI`, from the largest row cross product.
fn null_vector(m: &Matrix3<f64>, lambda: f64) -> Option<Vector3<f64>> {
    let a = m - Matrix3::identity() * lambda;
    let r0 = a.row(0).transpose();
    let r1 = a.row(1).transpose();
    let r2 = a.row(2).transpose();
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates
        .iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))?;
    let n = best.norm();
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(best / n)
}

fn jacobi(m: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let mut a = *m;
    let mut v = Matrix3::<f64>::identity();
    for _ in 0..64 {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        let diag = a[(0, 0)].powi(2) + a[(1, 1)].powi(2) + a[(2, 2)].powi(2);
        if off <= 1e-32 * diag || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            v *= rot;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = Vector3::new(a[(order[0], order[0])], a[(order[1], order[1])], a[(order[2], order[2])]);
    let mut vectors = Matrix3::from_columns(&[
        v.column(order[0]).into_owned(),
        v.column(order[1]).into_owned(),
        v.column(order[2]).into_owned(),
    ]);
    if vectors.determinant() < 0.0 {
        vectors.set_column(2, &(-vectors.column(2)));
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_orthonormal(r: &Matrix3<f64>) {
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_matrix() {
        let m = Matrix3::from_diagonal(&Vector3::new(0.25, 4.0, 1.0));
        let d = sym3_eigendecomp(&m);
        assert!((d.scales - Vector3::new(2.0, 1.0, 0.5)).abs().max() < 1e-14);
        assert_orthonormal(&d.rotation);
        // a signed permutation of the identity
        for c in d.rotation.iter() {
            assert!(c.abs() < 1e-14 || (c.abs() - 1.0).abs() < 1e-14);
        }
        assert!((d.reconstruct() - m).abs().max() < 1e-14);
    }

    #[test]
    fn isotropic_matrix() {
        let d = sym3_eigendecomp(&Matrix3::identity());
        assert_eq!(d.scales, Vector3::new(1.0, 1.0, 1.0));
        assert_orthonormal(&d.rotation);
    }

    #[test]
    fn repeated_eigenvalue() {
        let r = crate::geometry::so3_exp(&Vector3::new(0.3, -0.4, 1.1));
        let m = r * Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 0.1)) * r.transpose();
        let d = sym3_eigendecomp(&m);
        assert_orthonormal(&d.rotation);
        assert!((d.reconstruct() - m).abs().max() < 1e-12);
        let n = d.rotation.column(2);
        assert!((n.dot(&r.column(2)).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_noise_is_clamped() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 0.5, -1e-17));
        let d = sym3_eigendecomp(&m);
        assert_eq!(d.scales[2], 0.0);
    }

    #[test]
    fn rank_one_matrix() {
        let a = Vector3::new(1.0, 2.0, 3.0);
        let m = a * a.transpose();
        let d = sym3_eigendecomp(&m);
        assert_orthonormal(&d.rotation);
        assert!((d.reconstruct() - m).abs().max() < 1e-12);
        assert!((d.scales[0] - a.norm()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn random_spd_reconstructs(entries in prop::array::uniform9(-1.0f64..1.0)) {
            let a = Matrix3::from_row_slice(&entries);
            let m = a * a.transpose();
            let d = sym3_eigendecomp(&m);
            let rtr = d.rotation.transpose() * d.rotation;
            prop_assert!((rtr - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((d.rotation.determinant() - 1.0).abs() < 1e-9);
            prop_assert!(d.scales[0] >= d.scales[1] && d.scales[1] >= d.scales[2]);
            prop_assert!((d.reconstruct() - m).norm() < 1e-7);
        }

        #[test]
        fn near_degenerate_spectrum_reconstructs(
            w in prop::array::uniform3(-2.0f64..2.0),
            base in 0.1f64..3.0,
            eps in prop::array::uniform2(0.0f64..1e-6),
        ) {
            let r = crate::geometry::so3_exp(&Vector3::from(w));
            let m = r * Matrix3::from_diagonal(&Vector3::new(base + eps[0], base, base - eps[1])) * r.transpose();
            let d = sym3_eigendecomp(&m);
            prop_assert!((d.rotation.transpose() * d.rotation - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((d.reconstruct() - m).norm() < 1e-7);
        }
    }
}
