//! The per-frame SLAM loop, run directories, evaluation and export.
//!
//! A run directory holds:
//!
//! ```text
//! config.txt       effective configuration, key = value
//! intrinsics.txt   camera of the processed frames
//! frames.txt       per-frame tracking record with the full-precision pose
//! trajectory.txt   estimated camera-to-world poses, TUM format
//! groundtruth.txt  ground truth of the processed frames, when available
//! maps/            one Gaussian map per frame, frame_%06d.pxgm
//! tracking.log     human-readable tracking summary
//! mapping.log      per-frame fit summary, appended per session
//! report.txt       metrics, key=value
//! summary.json     metrics and run flags
//! ```

mod config;
mod eval;
mod export;
mod run;

pub use config::{DatasetSource, RunConfig, SyntheticOptions, SYNTHETIC_PRESETS};
pub use eval::{evaluate, format_report, run_eval, EvalReport, FrameMetrics};
pub use export::{render_views, write_synthetic};
pub use run::{read_frame_records, run_slam, FrameRecord, InitUsed, RunOutcome};

use std::path::{Path, PathBuf};

use crate::dataset::{load_generic_sequence, load_tum_sequence, render_synthetic_frame, Sequence, TumOptions};
use crate::error::{Error, Result};
use crate::Pose;

pub const CONFIG_FILE: &str = "config.txt";
pub const FRAMES_FILE: &str = "frames.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const GROUND_TRUTH_FILE: &str = "groundtruth.txt";
pub const TRACKING_LOG: &str = "tracking.log";
pub const MAPPING_LOG: &str = "mapping.log";
pub const REPORT_FILE: &str = "report.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.txt";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.json";
pub const MAPS_DIR: &str = "maps";

pub fn map_path(run_dir: &Path, index: usize) -> PathBuf {
    run_dir.join(MAPS_DIR).join(format!("frame_{index:06}.pxgm"))
}

/// Loads the configured input frames, honoring `max_frames`.
pub fn load_sequence(cfg: &RunConfig) -> Result<Sequence> {
    let seq = match &cfg.dataset {
        DatasetSource::Synthetic(_) => {
            let scene = cfg.synthetic_scene().expect("synthetic dataset");
            let n = cfg.max_frames.map_or(scene.len(), |m| m.min(scene.len()));
            let frames = (0..n)
                .map(|i| render_synthetic_frame(&scene, i).map(|f| crate::dataset::downsample_frame(&f, cfg.downscale)))
                .collect::<Result<Vec<_>>>()?;
            Sequence {
                frames,
                ground_truth: scene.trajectory[..n].iter().copied().map(Some).collect(),
                skipped: 0,
            }
        }
        DatasetSource::Tum(root) => {
            let opts = TumOptions {
                max_frames: cfg.max_frames,
                intrinsics: cfg.tum_intrinsics()?,
                downscale: cfg.downscale,
                stride: cfg.stride,
            };
            load_tum_sequence(root, &opts)?
        }
        DatasetSource::Generic(root) => load_generic_sequence(root, cfg.max_frames, cfg.downscale)?,
    };
    if seq.frames.is_empty() {
        return Err(Error::InvalidInput(format!("dataset {} has no frames", cfg.dataset)));
    }
    Ok(seq)
}

/// Earlier frames a frame is mapped against: the previous frame when `count` is 1, otherwise
/// the `count` nearest earlier frames by camera position (ties go to the more recent frame).
/// Returned in ascending frame order.
pub fn select_neighbors(index: usize, poses: &[Pose], count: usize) -> Vec<usize> {
    if count == 0 || index == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![index - 1];
    }
    let here = poses[index].translation;
    let mut candidates: Vec<usize> = (0..index).collect();
    candidates.sort_by(|&a, &b| {
        let da = (poses[a].translation - here).norm();
        let db = (poses[b].translation - here).norm();
        da.total_cmp(&db).then(b.cmp(&a))
    });
    candidates.truncate(count);
    candidates.sort_unstable();
    candidates
}
