//! RGBD SLAM built from two halves: a tracker that aligns per-frame geometry Gaussians to a
//! growing global set with point-to-surface Generalized ICP, and a mapper that fits
//! pixel-aligned spherical Gaussians with learnable depth offsets by differentiable splatting.

pub mod dataset;
pub mod eigen;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod kdtree;
pub mod mapper;
pub mod metrics;
pub mod pipeline;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::{Intrinsics, Pose, Twist};
pub use grid::{ColorImage, DepthMap, Grid, Mask};
