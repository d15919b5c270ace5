//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{SensorNoise, SyntheticScene, TumOptions};
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::mapper::MapperConfig;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Tum(PathBuf),
    Generic(PathBuf),
    Synthetic(String),
}

pub const SYNTHETIC_PRESETS: [&str; 3] = ["corridor", "desk", "plane_box"];

impl FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("dataset `{s}` is not of the form kind:argument")))?;
        match kind {
            "tum" => Ok(DatasetSource::Tum(PathBuf::from(rest))),
            "generic" => Ok(DatasetSource::Generic(PathBuf::from(rest))),
            "synthetic" if SYNTHETIC_PRESETS.contains(&rest) => Ok(DatasetSource::Synthetic(rest.to_string())),
            "synthetic" => Err(Error::Config(format!(
                "unknown synthetic preset `{rest}` (expected one of {})",
                SYNTHETIC_PRESETS.join(", ")
            ))),
            other => Err(Error::Config(format!("unknown dataset kind `{other}` (expected tum, generic or synthetic)"))),
        }
    }
}

impl std::fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetSource::Tum(p) => write!(f, "tum:{}", p.display()),
            DatasetSource::Generic(p) => write!(f, "generic:{}", p.display()),
            DatasetSource::Synthetic(name) => write!(f, "synthetic:{name}"),
        }
    }
}

/// Size and sensor corruption of generated sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub depth_sigma: f64,
    pub noise_fraction: f64,
    pub dropout: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            frames: 10,
            width: 96,
            height: 72,
            depth_sigma: 0.0,
            noise_fraction: 1.0,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub synthetic: SyntheticOptions,
    /// Block-downsampling factor for loaded images.
    pub downscale: usize,
    /// TUM only: keep every `stride`-th frame.
    pub stride: usize,
    /// TUM only: `fr1`, `fr2` or `fr3` factory intrinsics.
    pub tum_camera: String,
    pub tracker: TrackerConfig,
    pub mapper: MapperConfig,
    pub seed: u64,
    pub workers: usize,
    pub output: PathBuf,
    pub max_frames: Option<usize>,
    /// Compute metrics after the run.
    pub eval: bool,
    /// Anchor frame 0 at its ground-truth pose when available.
    pub gt_prior: bool,
    /// Continue from the frames already persisted in `output`.
    pub resume: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic("corridor".into()),
            synthetic: SyntheticOptions::default(),
            downscale: 1,
            stride: 1,
            tum_camera: "fr3".into(),
            tracker: TrackerConfig::default(),
            mapper: MapperConfig::default(),
            seed: 0,
            workers: 1,
            output: PathBuf::from("run"),
            max_frames: None,
            eval: true,
            gt_prior: false,
            resume: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        let t = &mut self.tracker;
        let m = &mut self.mapper;
        match key {
            "dataset" => self.dataset = value.parse()?,
            "synthetic.frames" => self.synthetic.frames = parse(key, value)?,
            "synthetic.width" => self.synthetic.width = parse(key, value)?,
            "synthetic.height" => self.synthetic.height = parse(key, value)?,
            "synthetic.depth_sigma" => self.synthetic.depth_sigma = parse(key, value)?,
            "synthetic.noise_fraction" => self.synthetic.noise_fraction = parse(key, value)?,
            "synthetic.dropout" => self.synthetic.dropout = parse(key, value)?,
            "downscale" => self.downscale = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "tum.camera" => self.tum_camera = value.to_string(),
            "tracker.downsample" => t.downsample = parse(key, value)?,
            "tracker.knn" => t.knn = parse(key, value)?,
            "tracker.max_iters" => t.max_iters = parse(key, value)?,
            "tracker.corr_dist_max" => t.corr_dist_max = parse(key, value)?,
            "tracker.convergence_eps" => t.convergence_eps = parse(key, value)?,
            "tracker.voxel_size" => t.voxel_size = parse(key, value)?,
            "tracker.render_init_iters" => t.render_init_iters = parse(key, value)?,
            "tracker.min_correspondences" => t.min_correspondences = parse(key, value)?,
            "scale_mode" => t.scale_mode = value.parse()?,
            "metric_mode" => t.metric_mode = value.parse()?,
            "init_mode" => t.init_mode = value.parse()?,
            "offset_frozen" => m.offset_frozen = parse_bool(key, value)?,
            "mapper.color_weight" => m.color_weight = parse(key, value)?,
            "mapper.ssim_weight" => m.ssim_weight = parse(key, value)?,
            "mapper.depth_weight" => m.depth_weight = parse(key, value)?,
            "mapper.neighbors" => m.neighbors = parse(key, value)?,
            "mapper.iters" => m.iters = parse(key, value)?,
            "mapper.lr_color" => m.lr_color = parse(key, value)?,
            "mapper.lr_radius" => m.lr_radius = parse(key, value)?,
            "mapper.lr_opacity" => m.lr_opacity = parse(key, value)?,
            "mapper.lr_offset" => m.lr_offset = parse(key, value)?,
            "mapper.min_current_fraction" => m.min_current_fraction = parse(key, value)?,
            "mapper.normalize_depth" => m.normalize_depth = parse_bool(key, value)?,
            "mapper.hole_alpha" => m.hole_alpha = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "max_frames" => {
                self.max_frames = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "eval" => self.eval = parse_bool(key, value)?,
            "gt_prior" => self.gt_prior = parse_bool(key, value)?,
            "resume" => self.resume = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a `key=value` override as given on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k, v)
    }

    /// Applies every assignment of a config text; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: `{line}` is not key = value", n + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("configuration error: "))))?;
        Ok(cfg)
    }

    /// Every key, in a form `apply_text` reads back to an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.tracker;
        let m = &self.mapper;
        let s = &self.synthetic;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("dataset", self.dataset.to_string());
        kv("synthetic.frames", s.frames.to_string());
        kv("synthetic.width", s.width.to_string());
        kv("synthetic.height", s.height.to_string());
        kv("synthetic.depth_sigma", format!("{:?}", s.depth_sigma));
        kv("synthetic.noise_fraction", format!("{:?}", s.noise_fraction));
        kv("synthetic.dropout", format!("{:?}", s.dropout));
        kv("downscale", self.downscale.to_string());
        kv("stride", self.stride.to_string());
        kv("tum.camera", self.tum_camera.clone());
        kv("tracker.downsample", t.downsample.to_string());
        kv("tracker.knn", t.knn.to_string());
        kv("tracker.max_iters", t.max_iters.to_string());
        kv("tracker.corr_dist_max", format!("{:?}", t.corr_dist_max));
        kv("tracker.convergence_eps", format!("{:?}", t.convergence_eps));
        kv("tracker.voxel_size", format!("{:?}", t.voxel_size));
        kv("tracker.render_init_iters", t.render_init_iters.to_string());
        kv("tracker.min_correspondences", t.min_correspondences.to_string());
        kv("scale_mode", t.scale_mode.to_string());
        kv("metric_mode", t.metric_mode.to_string());
        kv("init_mode", t.init_mode.to_string());
        kv("offset_frozen", m.offset_frozen.to_string());
        kv("mapper.color_weight", format!("{:?}", m.color_weight));
        kv("mapper.ssim_weight", format!("{:?}", m.ssim_weight));
        kv("mapper.depth_weight", format!("{:?}", m.depth_weight));
        kv("mapper.neighbors", m.neighbors.to_string());
        kv("mapper.iters", m.iters.to_string());
        kv("mapper.lr_color", format!("{:?}", m.lr_color));
        kv("mapper.lr_radius", format!("{:?}", m.lr_radius));
        kv("mapper.lr_opacity", format!("{:?}", m.lr_opacity));
        kv("mapper.lr_offset", format!("{:?}", m.lr_offset));
        kv("mapper.min_current_fraction", format!("{:?}", m.min_current_fraction));
        kv("mapper.normalize_depth", m.normalize_depth.to_string());
        kv("mapper.hole_alpha", format!("{:?}", m.hole_alpha));
        kv("seed", self.seed.to_string());
        kv("workers", self.workers.to_string());
        kv("output", self.output.display().to_string());
        kv("max_frames", self.max_frames.map_or("none".into(), |n| n.to_string()));
        kv("eval", self.eval.to_string());
        kv("gt_prior", self.gt_prior.to_string());
        kv("resume", self.resume.to_string());
        out
    }

    /// Mapper settings with the run seed applied.
    pub fn mapper_config(&self) -> MapperConfig {
        MapperConfig {
            seed: self.seed,
            ..self.mapper.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        self.mapper.validate()?;
        if self.workers < 1 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.downscale < 1 || self.stride < 1 {
            return Err(Error::Config("downscale and stride must be at least 1".into()));
        }
        if self.max_frames == Some(0) {
            return Err(Error::Config("max_frames must be at least 1".into()));
        }
        match &self.dataset {
            DatasetSource::Tum(p) | DatasetSource::Generic(p) if !p.is_dir() => {
                Err(Error::Config(format!("dataset directory {} does not exist", p.display())))
            }
            DatasetSource::Tum(_) => self.tum_intrinsics().map(|_| ()),
            DatasetSource::Synthetic(_) => {
                let s = &self.synthetic;
                if s.frames < 1 || s.width < 8 || s.height < 8 {
                    return Err(Error::Config("synthetic sequences need >= 1 frame and >= 8x8 pixels".into()));
                }
                if !(s.depth_sigma >= 0.0) || !(0.0..=1.0).contains(&s.noise_fraction) || !(0.0..=1.0).contains(&s.dropout) {
                    return Err(Error::Config("synthetic noise settings out of range".into()));
                }
                Ok(())
            }
            DatasetSource::Generic(_) => Ok(()),
        }
    }

    pub(crate) fn tum_intrinsics(&self) -> Result<Intrinsics> {
        match self.tum_camera.as_str() {
            "fr1" => Ok(TumOptions::freiburg1()),
            "fr2" => Ok(TumOptions::freiburg2()),
            "fr3" => Ok(TumOptions::freiburg3()),
            other => Err(Error::Config(format!("unknown TUM camera `{other}` (expected fr1, fr2 or fr3)"))),
        }
    }

    /// The configured synthetic scene with its sensor noise, if the dataset is synthetic.
    pub fn synthetic_scene(&self) -> Option<SyntheticScene> {
        let DatasetSource::Synthetic(name) = &self.dataset else {
            return None;
        };
        let s = &self.synthetic;
        let scene = match name.as_str() {
            "corridor" => SyntheticScene::corridor(s.frames, s.width, s.height),
            "desk" => SyntheticScene::desk(s.frames, s.width, s.height),
            _ => SyntheticScene::plane_box(s.frames, s.width, s.height),
        };
        Some(scene.with_noise(SensorNoise {
            depth_sigma: s.depth_sigma,
            noise_fraction: s.noise_fraction,
            dropout: s.dropout,
            seed: self.seed,
        }))
    }
}
