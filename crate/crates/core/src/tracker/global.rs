use std::collections::HashSet;

use nalgebra::Vector3;

use super::{GeomGaussian, LocalGeomSet};
use crate::kdtree::KdTree;
use crate::Pose;

/// The scene distribution set: world-frame geometry Gaussians, at most one per voxel cell.
#[derive(Debug, Clone)]
pub struct GlobalGeomSet {
    gaussians: Vec<GeomGaussian>,
    index: KdTree,
    occupancy: HashSet<[i64; 3]>,
    voxel_size: f64,
}

impl GlobalGeomSet {
    pub fn new(voxel_size: f64) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        Self {
            gaussians: Vec::new(),
            index: KdTree::default(),
            occupancy: HashSet::new(),
            voxel_size,
        }
    }

    /// Builds a set from world-frame Gaussians, applying the same overlap filter as updates.
    pub fn from_gaussians(gaussians: impl IntoIterator<Item = GeomGaussian>, voxel_size: f64) -> Self {
        let mut set = Self::new(voxel_size);
        set.insert_all(gaussians);
        set
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn gaussians(&self) -> &[GeomGaussian] {
        &self.gaussians
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn voxel_of(&self, p: &Vector3<f64>) -> [i64; 3] {
        let s = self.voxel_size;
        [
            (p.x / s).floor() as i64,
            (p.y / s).floor() as i64,
            (p.z / s).floor() as i64,
        ]
    }

    /// Transforms a camera-frame set to world with `pose` and inserts every Gaussian whose
    /// voxel cell is still free. Returns the number added.
    pub fn update(&mut self, local: &LocalGeomSet, pose: &Pose) -> usize {
        self.insert_all(local.gaussians.iter().map(|g| g.transformed(pose)))
    }

    fn insert_all(&mut self, gaussians: impl IntoIterator<Item = GeomGaussian>) -> usize {
        let before = self.gaussians.len();
        for g in gaussians {
            let cell = self.voxel_of(&g.center);
            if self.occupancy.insert(cell) {
                self.gaussians.push(g);
            }
        }
        let added = self.gaussians.len() - before;
        if added > 0 {
            let centers: Vec<_> = self.gaussians.iter().map(|g| g.center).collect();
            self.index = KdTree::build(&centers);
        }
        added
    }

    /// Every member mapped by a rigid transform; occupancy is recomputed in the new frame.
    pub fn transformed(&self, g: &Pose) -> GlobalGeomSet {
        let mut out = Self::new(self.voxel_size);
        out.gaussians = self.gaussians.iter().map(|x| x.transformed(g)).collect();
        out.occupancy = out.gaussians.iter().map(|x| out.voxel_of(&x.center)).collect();
        let centers: Vec<_> = out.gaussians.iter().map(|x| x.center).collect();
        out.index = KdTree::build(&centers);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_at(p: Vector3<f64>) -> GeomGaussian {
        GeomGaussian {
            center: p,
            rotation: Matrix3::identity(),
            scales: Vector3::new(0.8, 0.5, 0.3),
            normal: Vector3::z(),
        }
    }

    fn local(points: &[Vector3<f64>]) -> LocalGeomSet {
        LocalGeomSet {
            gaussians: points.iter().copied().map(gaussian_at).collect(),
            source_frame: 0,
        }
    }

    #[test]
    fn first_insertion_keeps_distinct_cells() {
        let pts: Vec<_> = (0..50).map(|i| Vector3::new(i as f64 * 0.1 + 0.05, 0.01, 1.01)).collect();
        let mut set = GlobalGeomSet::new(0.02);
        assert_eq!(set.update(&local(&pts), &Pose::identity()), 50);
        assert_eq!(set.len(), 50);
        assert_eq!(set.index().len(), 50);
    }

    #[test]
    fn same_cell_points_collapse() {
        let pts = vec![Vector3::new(0.001, 0.001, 0.001), Vector3::new(0.002, 0.003, 0.004)];
        let mut set = GlobalGeomSet::new(0.02);
        assert_eq!(set.update(&local(&pts), &Pose::identity()), 1);
    }

    #[test]
    fn reinsertion_adds_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..500)
            .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let pose = Pose::from_axis_angle(Vector3::new(0.0, 1.0, 0.2), 0.3, Vector3::new(0.1, 0.2, 0.3));
        let mut set = GlobalGeomSet::new(0.05);
        let first = set.update(&local(&pts), &pose);
        assert!(first > 0 && first <= 500);
        assert_eq!(set.update(&local(&pts), &pose), 0);
    }

    #[test]
    fn no_two_members_share_a_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut set = GlobalGeomSet::new(0.1);
        for _ in 0..5 {
            let pts: Vec<_> = (0..200)
                .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() * 0.3))
                .collect();
            let pose = Pose::from_translation(Vector3::new(rng.random::<f64>() * 0.2, 0.0, 0.0));
            set.update(&local(&pts), &pose);
        }
        let g = set.gaussians();
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                assert_ne!(set.voxel_of(&g[i].center), set.voxel_of(&g[j].center));
            }
        }
        assert_eq!(set.index().len(), g.len());
        for (i, p) in set.index().points().iter().enumerate() {
            assert_eq!(*p, g[i].center);
        }
    }

    #[test]
    fn update_rotates_frames_and_normals() {
        let pose = Pose::from_axis_angle(Vector3::x(), std::f64::consts::FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0));
        let mut set = GlobalGeomSet::new(0.01);
        set.update(&local(&[Vector3::new(0.0, 0.0, 1.0)]), &pose);
        let g = set.gaussians()[0];
        assert!((g.center - Vector3::new(1.0, -1.0, 0.0)).norm() < 1e-12);
        assert!((g.normal - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        assert_eq!(g.rotation, pose.rotation);
    }
}
