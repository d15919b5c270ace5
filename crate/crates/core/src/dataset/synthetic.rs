//! Ray-cast synthetic scenes with exact depth and ground-truth trajectories.
//!
//! World axes follow the camera convention of the identity pose: x right, y down, z forward.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::RgbdFrame;
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::grid::{ColorImage, DepthMap};
use crate::Pose;

pub const MIN_DEPTH: f64 = 0.2;
pub const MAX_DEPTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Infinite plane through `point`.
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    /// Axis-aligned box.
    Cuboid { min: Vector3<f64>, max: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

/// Multiplicative albedo modulation evaluated at world positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Texture {
    Flat,
    /// Sum of phase-shifted sinusoids along the world axes.
    Sinusoid { period: f64, amplitude: f64 },
    Checker { size: f64, contrast: f64 },
}

impl Texture {
    fn factor(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Texture::Flat => 1.0,
            Texture::Sinusoid { period, amplitude } => {
                let k = std::f64::consts::TAU / period;
                let s = (k * p.x).sin() + (k * p.y + 1.0).sin() + (k * p.z + 2.0).sin();
                1.0 + amplitude * s / 3.0
            }
            Texture::Checker { size, contrast } => {
                let cell = (p.x / size).floor() + (p.y / size).floor() + (p.z / size).floor();
                if (cell as i64).rem_euclid(2) == 0 {
                    1.0
                } else {
                    1.0 - contrast
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: [f64; 3],
    pub texture: Texture,
}

impl Primitive {
    pub fn new(shape: Shape, albedo: [f64; 3], texture: Texture) -> Self {
        Self { shape, albedo, texture }
    }

    /// Ray parameter and outward normal of the closest hit with `t > 0`.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self.shape {
            Shape::Plane { point, normal } => {
                let n = normal.normalize();
                let denom = n.dot(d);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(point - o)) / denom;
                (t > 0.0).then_some((t, n))
            }
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.norm_squared();
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > 0.0)?;
                Some((t, (o + d * t - center) / radius))
            }
            Shape::Cuboid { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis0 = 0;
                let mut sign0 = 0.0;
                let mut axis1 = 0;
                let mut sign1 = 0.0;
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / d[a];
                    let (mut near, mut far) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
                    let mut s = -1.0;
                    if near > far {
                        std::mem::swap(&mut near, &mut far);
                        s = 1.0;
                    }
                    if near > t0 {
                        t0 = near;
                        axis0 = a;
                        sign0 = s;
                    }
                    if far < t1 {
                        t1 = far;
                        axis1 = a;
                        sign1 = -s;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                let (t, axis, sign) = if t0 > 0.0 {
                    (t0, axis0, sign0)
                } else if t1 > 0.0 {
                    (t1, axis1, sign1)
                } else {
                    return None;
                };
                let mut n = Vector3::zeros();
                n[axis] = sign;
                Some((t, n))
            }
        }
    }
}

/// Sensor corruption applied after exact ray casting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SensorNoise {
    /// Gaussian depth noise standard deviation, meters.
    pub depth_sigma: f64,
    /// Fraction of pixels receiving depth noise (1 = all).
    pub noise_fraction: f64,
    /// Probability that a pixel's depth is dropped.
    pub dropout: f64,
    pub seed: u64,
}

impl SensorNoise {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn gaussian(depth_sigma: f64, seed: u64) -> Self {
        Self {
            depth_sigma,
            noise_fraction: 1.0,
            dropout: 0.0,
            seed,
        }
    }

    fn is_active(&self) -> bool {
        (self.depth_sigma > 0.0 && self.noise_fraction > 0.0) || self.dropout > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub trajectory: Vec<Pose>,
    pub intrinsics: Intrinsics,
    pub noise: SensorNoise,
    /// World direction of the fixed light used for flat shading.
    pub light_dir: Vector3<f64>,
    pub frame_rate: f64,
}

/// Camera-to-world pose looking from `eye` at `target`, image y axis aligned with world `down`.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, down: Vector3<f64>) -> Pose {
    let f = (target - eye).normalize();
    let x = down.cross(&f).normalize();
    let y = f.cross(&x);
    Pose::new(nalgebra::Matrix3::from_columns(&[x, y, f]), eye)
}

impl SyntheticScene {
    pub fn new(primitives: Vec<Primitive>, trajectory: Vec<Pose>, intrinsics: Intrinsics) -> Self {
        Self {
            primitives,
            trajectory,
            intrinsics,
            noise: SensorNoise::none(),
            light_dir: Vector3::new(0.3, -1.0, -0.5).normalize(),
            frame_rate: 30.0,
        }
    }

    pub fn with_noise(mut self, noise: SensorNoise) -> Self {
        self.noise = noise;
        self
    }

    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    /// Closest primitive hit: `(t, normal, primitive index)`.
    pub fn raycast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>, usize)> {
        let mut best: Option<(f64, Vector3<f64>, usize)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, n)) = p.intersect(o, d) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, n, i));
                }
            }
        }
        best
    }

    fn shade(&self, point: &Vector3<f64>, normal: &Vector3<f64>, prim: &Primitive) -> [f64; 3] {
        let lambert = 0.55 + 0.45 * normal.dot(&self.light_dir).abs();
        let tex = prim.texture.factor(point);
        prim.albedo.map(|a| (a * tex * lambert).clamp(0.0, 1.0))
    }

    /// Exact (noise-free) depth and color at a pose.
    pub fn render_clean(&self, pose: &Pose) -> (ColorImage, DepthMap) {
        let k = &self.intrinsics;
        let mut color = ColorImage::filled(k.width, k.height, [0.0; 3]);
        let mut depth = DepthMap::filled(k.width, k.height, 0.0);
        for v in 0..k.height {
            for u in 0..k.width {
                let ray = k.ray(u as f64, v as f64);
                let dir = pose.transform_vector(&ray);
                if let Some((t, n, i)) = self.raycast(&pose.translation, &dir) {
                    // the camera ray has unit z, so the ray parameter is the z-depth
                    if (MIN_DEPTH..=MAX_DEPTH).contains(&t) {
                        let p = pose.translation + dir * t;
                        depth[(u, v)] = t;
                        color[(u, v)] = self.shade(&p, &n, &self.primitives[i]);
                    }
                }
            }
        }
        (color, depth)
    }

    /// Checks that every pose sees at least half valid depth inside the sensor range.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        for (i, pose) in self.trajectory.iter().enumerate() {
            let (_, depth) = self.render_clean(pose);
            let valid = depth.iter().filter(|&&d| d > 0.0).count();
            if 2 * valid < depth.len() {
                return Err(Error::InvalidInput(format!(
                    "synthetic pose {i} sees only {valid}/{} valid depth pixels",
                    depth.len()
                )));
            }
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> &[Pose] {
        &self.trajectory
    }

    /// Closed indoor corridor with textured walls, boxes and a sphere; forward motion with sway.
    pub fn corridor(frames: usize, width: usize, height: usize) -> Self {
        let k = Intrinsics::from_fov(width, height, 70f64.to_radians());
        let sin = |period, amplitude| Texture::Sinusoid { period, amplitude };
        let prims = vec![
            Primitive::new(plane([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), [0.8, 0.55, 0.4], sin(0.45, 0.5)),
            Primitive::new(plane([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]), [0.4, 0.6, 0.8], sin(0.6, 0.5)),
            Primitive::new(plane([0.0, 0.9, 0.0], [0.0, -1.0, 0.0]), [0.6, 0.6, 0.55], sin(0.35, 0.4)),
            Primitive::new(plane([0.0, -1.1, 0.0], [0.0, 1.0, 0.0]), [0.9, 0.9, 0.85], sin(0.8, 0.2)),
            Primitive::new(plane([0.0, 0.0, 6.0], [0.0, 0.0, -1.0]), [0.5, 0.75, 0.5], sin(0.5, 0.5)),
            Primitive::new(cuboid([-0.95, 0.45, 2.2], [-0.45, 0.9, 2.8]), [0.85, 0.3, 0.25], Texture::Flat),
            Primitive::new(cuboid([0.35, 0.2, 3.4], [0.95, 0.9, 4.1]), [0.3, 0.35, 0.8], sin(0.3, 0.3)),
            Primitive::new(sphere([0.1, 0.55, 3.0], 0.3), [0.9, 0.8, 0.2], sin(0.2, 0.3)),
        ];
        let trajectory = (0..frames)
            .map(|i| {
                let f = i as f64;
                let eye = Vector3::new(0.04 * (0.6 * f).sin(), -0.01 * f, 0.05 * f);
                let target = eye + Vector3::new(0.06 * (0.4 * f).sin() + 0.02, 0.08, 1.0);
                look_at(eye, target, Vector3::y())
            })
            .collect();
        Self::new(prims, trajectory, k)
    }

    /// Tabletop with a back wall, boxes and spheres; the camera orbits slowly.
    pub fn desk(frames: usize, width: usize, height: usize) -> Self {
        let k = Intrinsics::from_fov(width, height, 65f64.to_radians());
        let sin = |period, amplitude| Texture::Sinusoid { period, amplitude };
        let prims = vec![
            Primitive::new(plane([0.0, 0.35, 0.0], [0.0, -1.0, 0.0]), [0.7, 0.55, 0.35], sin(0.12, 0.5)),
            Primitive::new(plane([0.0, 0.0, 1.7], [0.0, 0.0, -1.0]), [0.55, 0.65, 0.75], sin(0.2, 0.5)),
            Primitive::new(plane([-1.2, 0.0, 0.0], [1.0, 0.0, 0.0]), [0.75, 0.7, 0.6], sin(0.25, 0.4)),
            Primitive::new(cuboid([-0.45, 0.1, 0.9], [-0.15, 0.35, 1.2]), [0.8, 0.25, 0.2], sin(0.08, 0.3)),
            Primitive::new(cuboid([0.15, -0.05, 1.05], [0.4, 0.35, 1.3]), [0.2, 0.5, 0.8], sin(0.1, 0.3)),
            Primitive::new(sphere([0.0, 0.22, 0.8], 0.13), [0.9, 0.85, 0.3], sin(0.06, 0.4)),
        ];
        let trajectory = (0..frames)
            .map(|i| {
                let a = 0.03 * i as f64;
                let eye = Vector3::new(-0.3 + 0.6 * a.sin(), -0.25 - 0.005 * i as f64, 0.2 * (1.0 - a.cos()) - 0.1);
                look_at(eye, Vector3::new(0.0, 0.2, 1.1), Vector3::y())
            })
            .collect();
        Self::new(prims, trajectory, k)
    }

    /// A ground plane carrying a box in front of two walls; used as a registration fixture.
    pub fn plane_box(frames: usize, width: usize, height: usize) -> Self {
        let k = Intrinsics::from_fov(width, height, 60f64.to_radians());
        let prims = vec![
            Primitive::new(plane([0.0, 0.4, 0.0], [0.0, -1.0, 0.0]), [0.6, 0.6, 0.6], Texture::Sinusoid { period: 0.2, amplitude: 0.4 }),
            Primitive::new(cuboid([-0.35, -0.1, 1.1], [0.25, 0.4, 1.6]), [0.8, 0.4, 0.3], Texture::Sinusoid { period: 0.15, amplitude: 0.3 }),
            Primitive::new(plane([0.0, 0.0, 2.4], [0.0, 0.0, -1.0]), [0.5, 0.7, 0.6], Texture::Sinusoid { period: 0.25, amplitude: 0.4 }),
            Primitive::new(plane([-1.1, 0.0, 0.0], [1.0, 0.0, 0.0]), [0.7, 0.6, 0.8], Texture::Sinusoid { period: 0.3, amplitude: 0.4 }),
        ];
        let trajectory = (0..frames)
            .map(|i| {
                let f = i as f64;
                let eye = Vector3::new(-0.05 + 0.02 * f, -0.5, 0.0 + 0.01 * f);
                look_at(eye, Vector3::new(0.0, 0.2, 1.35), Vector3::y())
            })
            .collect();
        Self::new(prims, trajectory, k)
    }
}

fn plane(point: [f64; 3], normal: [f64; 3]) -> Shape {
    Shape::Plane {
        point: Vector3::from(point),
        normal: Vector3::from(normal),
    }
}

fn cuboid(min: [f64; 3], max: [f64; 3]) -> Shape {
    Shape::Cuboid {
        min: Vector3::from(min),
        max: Vector3::from(max),
    }
}

fn sphere(center: [f64; 3], radius: f64) -> Shape {
    Shape::Sphere {
        center: Vector3::from(center),
        radius,
    }
}

/// Renders trajectory pose `pose_index`, applying the scene's sensor noise deterministically.
pub fn render_synthetic_frame(scene: &SyntheticScene, pose_index: usize) -> Result<RgbdFrame> {
    let pose = scene.trajectory.get(pose_index).ok_or_else(|| {
        Error::InvalidInput(format!("pose index {pose_index} outside trajectory of {}", scene.len()))
    })?;
    let (color, mut depth) = scene.render_clean(pose);
    let noise = scene.noise;
    if noise.is_active() {
        let seed = noise.seed ^ (pose_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.depth_sigma.max(0.0)).expect("finite sigma");
        for d in depth.as_mut_slice() {
            let drop: f64 = rng.random();
            let pick: f64 = rng.random();
            let n = normal.sample(&mut rng);
            if *d <= 0.0 {
                continue;
            }
            if drop < noise.dropout {
                *d = 0.0;
            } else if pick < noise.noise_fraction {
                *d = (*d + n).max(MIN_DEPTH * 0.5);
            }
        }
    }
    Ok(RgbdFrame::new(
        color,
        depth,
        scene.intrinsics,
        pose_index as f64 / scene.frame_rate,
        pose_index,
    ))
}
