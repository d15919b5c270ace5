//! Generalized ICP with point-to-surface correspondence acceptance.
//!
//! Each iteration pairs every local Gaussian with its Euclidean nearest neighbor in the global
//! set, keeps pairs whose metric distance is below the threshold, and takes one Gauss-Newton
//! step on the left-multiplied twist minimizing `Σ dᵀ (C_b + R C_a Rᵀ)⁻¹ d`, `d = b − T·a`,
//! with the Mahalanobis weights frozen for the iteration.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use rayon::prelude::*;

use super::{GlobalGeomSet, LocalGeomSet, MetricMode, TrackerConfig};
use crate::geometry::skew;
use crate::Pose;

const MAX_HALVINGS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub local: usize,
    pub global: usize,
    /// Distance under the active metric.
    pub distance: f64,
}

/// Cost before and after one accepted update (same correspondences and weights).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GicpStep {
    pub cost_before: f64,
    pub cost_after: f64,
    pub halvings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GicpResult {
    pub pose: Pose,
    pub iterations: usize,
    pub final_cost: f64,
    pub inliers: usize,
    pub converged: bool,
    /// Too few correspondences; `pose` is the initial guess.
    pub failed: bool,
    pub steps: Vec<GicpStep>,
}

/// Nearest-neighbor candidates accepted under the configured metric, for a given pose.
pub fn find_correspondences(
    local: &LocalGeomSet,
    global: &GlobalGeomSet,
    pose: &Pose,
    cfg: &TrackerConfig,
) -> Vec<Correspondence> {
    if global.is_empty() {
        return Vec::new();
    }
    local
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let q = pose.transform_point(&a.center);
            let nb = global.index().nearest(&q)?;
            let b = &global.gaussians()[nb.index];
            let distance = match cfg.metric_mode {
                MetricMode::PointToSurface => b.normal.dot(&(q - b.center)).abs(),
                MetricMode::PointToPoint => nb.dist_sq.sqrt(),
            };
            (distance < cfg.corr_dist_max).then_some(Correspondence {
                local: i,
                global: nb.index,
                distance,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

struct Term {
    a: Vector3<f64>,
    b: Vector3<f64>,
    weight: Matrix3<f64>,
}

fn cost(terms: &[Term], pose: &Pose) -> f64 {
    terms
        .iter()
        .map(|t| {
            let d = t.b - pose.transform_point(&t.a);
            d.dot(&(t.weight * d))
        })
        .sum()
}

pub fn gicp_align(local: &LocalGeomSet, global: &GlobalGeomSet, init: &Pose, cfg: &TrackerConfig) -> GicpResult {
    let failed = |iterations, inliers| GicpResult {
        pose: *init,
        iterations,
        final_cost: f64::INFINITY,
        inliers,
        converged: false,
        failed: true,
        steps: Vec::new(),
    };
    let local_cov: Vec<Matrix3<f64>> = local.gaussians.iter().map(|g| g.covariance()).collect();
    let global_cov: Vec<Matrix3<f64>> = global.gaussians().iter().map(|g| g.covariance()).collect();

    let mut pose = *init;
    let mut steps = Vec::new();
    let mut final_cost = 0.0;
    let mut inliers = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let corr = find_correspondences(local, global, &pose, cfg);
        if corr.len() < cfg.min_correspondences {
            return failed(iterations, corr.len());
        }
        inliers = corr.len();
        let rot = pose.rotation;
        let terms: Vec<Term> = corr
            .par_iter()
            .filter_map(|c| {
                let combined = global_cov[c.global] + rot * local_cov[c.local] * rot.transpose();
                Some(Term {
                    a: local.gaussians[c.local].center,
                    b: global.gaussians()[c.global].center,
                    weight: combined.try_inverse()?,
                })
            })
            .collect();

        let contributions: Vec<(Matrix6<f64>, Vector6<f64>)> = terms
            .par_iter()
            .map(|t| {
                let q = pose.transform_point(&t.a);
                let d = t.b - q;
                let mut j = SMatrix::<f64, 3, 6>::zeros();
                j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&q)));
                j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
                let jtw = j.transpose() * t.weight;
                (jtw * j, jtw * d)
            })
            .collect();
        let (h, g) = contributions
            .iter()
            .fold((Matrix6::zeros(), Vector6::zeros()), |(h, g), (hi, gi)| (h + hi, g + gi));

        let Some(mut delta) = h.cholesky().map(|c| c.solve(&g)).or_else(|| h.lu().solve(&g)) else {
            break;
        };
        let before = cost(&terms, &pose);
        let mut candidate = pose.left_update(&delta);
        let mut after = cost(&terms, &candidate);
        let mut halvings = 0;
        while after > before && halvings < MAX_HALVINGS {
            delta *= 0.5;
            halvings += 1;
            candidate = pose.left_update(&delta);
            after = cost(&terms, &candidate);
        }
        if after > before {
            final_cost = before;
            break;
        }
        steps.push(GicpStep {
            cost_before: before,
            cost_after: after,
            halvings,
        });
        pose = candidate;
        final_cost = after;
        if delta.norm() < cfg.convergence_eps {
            converged = true;
            break;
        }
    }
    GicpResult {
        pose,
        iterations,
        final_cost,
        inliers,
        converged,
        failed: false,
        steps,
    }
}
