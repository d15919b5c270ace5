//! Frame-to-scene tracking with geometry Gaussians and point-to-surface Generalized ICP.

mod gicp;
mod global;
mod init;
mod local;

pub use gicp::{find_correspondences, gicp_align, Correspondence, GicpResult, GicpStep};
pub use global::GlobalGeomSet;
pub use init::{init_pose_constant_speed, init_pose_render, RenderInitResult, RENDER_INIT_MIN_COVERAGE};
pub use local::{build_local_set, LocalGeomSet};

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use crate::Pose;

/// Axis-length treatment of each geometry Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleMode {
    /// Scales divided by their Euclidean norm, anisotropy kept.
    #[default]
    Ellipse,
    /// Scales replaced by `(1, 1, ε)` in the eigenbasis.
    Plane,
    /// Raw scales from the neighborhood covariance.
    None,
}

/// Distance used to accept a nearest-neighbor candidate as a correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricMode {
    /// `|n_bᵀ(T·a − b)|` with the target Gaussian's normal.
    #[default]
    PointToSurface,
    /// `‖T·a − b‖`.
    PointToPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    #[default]
    ConstantSpeed,
    /// Photometric/depth refinement against the previous frame's splats, falling back to
    /// constant speed on failure.
    RenderInit,
}

/// Third scale of plane-mode Gaussians.
pub const PLANE_EPSILON: f64 = 1e-3;
/// Eigenvalues are floored at this fraction of the largest before taking scales.
pub const EIGEN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Pixel stride of the sampling grid (R).
    pub downsample: usize,
    /// Neighbors used for each covariance (K_c).
    pub knn: usize,
    pub max_iters: usize,
    /// Meters, under the active metric.
    pub corr_dist_max: f64,
    /// Twist norm below which GICP stops.
    pub convergence_eps: f64,
    pub scale_mode: ScaleMode,
    pub metric_mode: MetricMode,
    pub init_mode: InitMode,
    /// Occupancy cell edge of the global set, meters.
    pub voxel_size: f64,
    pub render_init_iters: usize,
    /// Fewer accepted correspondences than this flags the alignment as failed.
    pub min_correspondences: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            downsample: 5,
            knn: 23,
            max_iters: 30,
            corr_dist_max: 0.2,
            convergence_eps: 1e-5,
            scale_mode: ScaleMode::Ellipse,
            metric_mode: MetricMode::PointToSurface,
            init_mode: InitMode::ConstantSpeed,
            voxel_size: 0.02,
            render_init_iters: 10,
            min_correspondences: 10,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.downsample < 1 || self.knn < 4 {
            return Err(crate::Error::Config(format!(
                "tracker needs downsample >= 1 and knn >= 4 (got {} and {})",
                self.downsample, self.knn
            )));
        }
        if !(self.voxel_size > 0.0 && self.corr_dist_max > 0.0) {
            return Err(crate::Error::Config("voxel_size and corr_dist_max must be positive".into()));
        }
        Ok(())
    }
}

/// A surface-patch distribution: center, principal axes, axis lengths and outward normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomGaussian {
    pub center: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    /// Descending.
    pub scales: Vector3<f64>,
    /// Third rotation column, oriented toward the observing camera.
    pub normal: Vector3<f64>,
}

impl GeomGaussian {
    pub fn covariance(&self) -> Matrix3<f64> {
        let s2 = self.scales.component_mul(&self.scales);
        self.rotation * Matrix3::from_diagonal(&s2) * self.rotation.transpose()
    }

    pub fn transformed(&self, pose: &Pose) -> GeomGaussian {
        GeomGaussian {
            center: pose.transform_point(&self.center),
            rotation: pose.rotation * self.rotation,
            scales: self.scales,
            normal: pose.rotation * self.normal,
        }
    }
}

macro_rules! impl_mode_text {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self { $($variant => $name),+ };
                f.write_str(s)
            }
        }

        impl FromStr for $ty {
            type Err = crate::Error;

            fn from_str(s: &str) -> crate::Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(crate::Error::Config(format!(
                        "unknown {} `{other}`", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

impl_mode_text!(ScaleMode, ScaleMode::Ellipse => "ellipse", ScaleMode::Plane => "plane", ScaleMode::None => "none");
impl_mode_text!(MetricMode, MetricMode::PointToSurface => "point2surf", MetricMode::PointToPoint => "point2point");
impl_mode_text!(InitMode, InitMode::ConstantSpeed => "constant_speed", InitMode::RenderInit => "render_init");
