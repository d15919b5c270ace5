use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::run::read_frame_records;
use super::{
    load_sequence, map_path, select_neighbors, RunConfig, CONFIG_FILE, EVAL_REPORT_FILE, EVAL_SUMMARY_FILE, FRAMES_FILE,
    TRAJECTORY_FILE,
};
use crate::dataset::{load_trajectory, read_intrinsics, Sequence, INTRINSICS_FILE};
use crate::error::{Error, Result};
use crate::mapper::{read_map, splat};
use crate::metrics::{ate_rmse, depth_l1, psnr, ssim};
use crate::Pose;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Absent when the frame has no valid depth.
    pub depth_l1_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: usize,
    /// Absent without ground truth.
    pub ate_rmse_m: Option<f64>,
    pub ate_frames: usize,
    pub psnr_mean_db: f64,
    pub ssim_mean: f64,
    pub depth_l1_mean_m: Option<f64>,
    pub tracking_failures: usize,
    pub per_frame: Vec<FrameMetrics>,
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn format_report(r: &EvalReport) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("frames", r.frames.to_string());
    kv("ate_rmse_m", r.ate_rmse_m.map_or("absent".into(), num));
    kv("ate_frames", r.ate_frames.to_string());
    kv("psnr_mean_db", num(r.psnr_mean_db));
    kv("ssim_mean", num(r.ssim_mean));
    kv("depth_l1_mean_m", r.depth_l1_mean_m.map_or("absent".into(), num));
    kv("tracking_failures", r.tracking_failures.to_string());
    for f in &r.per_frame {
        kv(&format!("frame.{:06}.psnr_db", f.index), num(f.psnr_db));
        kv(&format!("frame.{:06}.ssim", f.index), num(f.ssim));
        kv(&format!("frame.{:06}.depth_l1_m", f.index), f.depth_l1_m.map_or("absent".into(), num));
    }
    out
}

pub(crate) fn summary_json(r: &EvalReport, elapsed_s: Option<f64>) -> String {
    #[derive(Serialize)]
    struct Summary<'a> {
        #[serde(flatten)]
        report: &'a EvalReport,
        flagged: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        elapsed_s: Option<f64>,
    }
    let s = Summary {
        report: r,
        flagged: r.tracking_failures > 0,
        elapsed_s,
    };
    serde_json::to_string_pretty(&s).expect("summary serializes") + "\n"
}

/// Recomputes every metric from the artifacts in `run_dir`, against the input frames `seq`.
pub fn evaluate(run_dir: &Path, seq: &Sequence, cfg: &RunConfig) -> Result<EvalReport> {
    let frames_file = run_dir.join(FRAMES_FILE);
    let mut missing: Vec<PathBuf> = [CONFIG_FILE, INTRINSICS_FILE, FRAMES_FILE, TRAJECTORY_FILE]
        .iter()
        .map(|f| run_dir.join(f))
        .filter(|p| !p.is_file())
        .collect();
    let records = if frames_file.is_file() {
        read_frame_records(&frames_file)?
    } else {
        Vec::new()
    };
    missing.extend((0..records.len()).map(|i| map_path(run_dir, i)).filter(|p| !p.is_file()));
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    if records.is_empty() {
        return Err(Error::format(&frames_file, "no frames recorded"));
    }
    let n = records.len();
    if n > seq.frames.len() {
        return Err(Error::InvalidInput(format!("run has {n} frames but the dataset only {}", seq.frames.len())));
    }
    let k = read_intrinsics(&run_dir.join(INTRINSICS_FILE))?;
    if k != seq.frames[0].intrinsics {
        return Err(Error::InvalidInput("run intrinsics differ from the dataset's".into()));
    }
    let traj_file = run_dir.join(TRAJECTORY_FILE);
    let trajectory = load_trajectory(&traj_file)?;
    if trajectory.len() != n {
        return Err(Error::format(&traj_file, format!("{} poses for {n} frames", trajectory.len())));
    }
    let maps = (0..n).map(|i| read_map(&map_path(run_dir, i))).collect::<Result<Vec<_>>>()?;
    let poses: Vec<Pose> = records.iter().map(|r| r.pose).collect();

    let per_frame = (0..n)
        .into_par_iter()
        .map(|i| {
            let frame = &seq.frames[i];
            let mut sources = vec![&maps[i]];
            sources.extend(select_neighbors(i, &poses, cfg.mapper.neighbors).into_iter().map(|j| &maps[j]));
            let out = splat(&sources, &poses[i], &k, cfg.mapper.normalize_depth)?;
            let depth = if frame.valid_count() > 0 {
                Some(depth_l1(&out.depth, &frame.depth, &frame.valid_mask)?)
            } else {
                None
            };
            Ok(FrameMetrics {
                index: i,
                psnr_db: psnr(&out.color, &frame.color)?,
                ssim: ssim(&out.color, &frame.color)?,
                depth_l1_m: depth,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (est, gt): (Vec<Pose>, Vec<Pose>) = trajectory
        .iter()
        .zip(&seq.ground_truth)
        .filter_map(|((_, e), g)| g.map(|g| (*e, g)))
        .unzip();
    let ate = if est.is_empty() { None } else { Some(ate_rmse(&est, &gt)?.ate_rmse) };
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let depths: Vec<f64> = per_frame.iter().filter_map(|f| f.depth_l1_m).collect();
    Ok(EvalReport {
        frames: n,
        ate_rmse_m: ate,
        ate_frames: est.len(),
        psnr_mean_db: mean(&per_frame.iter().map(|f| f.psnr_db).collect::<Vec<_>>()),
        ssim_mean: mean(&per_frame.iter().map(|f| f.ssim).collect::<Vec<_>>()),
        depth_l1_mean_m: (!depths.is_empty()).then(|| mean(&depths)),
        tracking_failures: records.iter().filter(|r| r.tracking_failed).count(),
        per_frame,
    })
}

/// Re-evaluates a completed run directory and writes `eval_report.txt` and `eval_summary.json`.
pub fn run_eval(run_dir: &Path) -> Result<EvalReport> {
    let config_file = run_dir.join(CONFIG_FILE);
    if !config_file.is_file() {
        let missing = [CONFIG_FILE, INTRINSICS_FILE, FRAMES_FILE, TRAJECTORY_FILE]
            .iter()
            .map(|f| run_dir.join(f))
            .filter(|p| !p.is_file())
            .collect();
        return Err(Error::MissingArtifacts(missing));
    }
    let mut cfg = RunConfig::from_file(&config_file)?;
    cfg.output = run_dir.to_path_buf();
    let frames_file = run_dir.join(FRAMES_FILE);
    if frames_file.is_file() {
        cfg.max_frames = Some(read_frame_records(&frames_file)?.len().max(1));
    }
    let seq = load_sequence(&cfg)?;
    let report = evaluate(run_dir, &seq, &cfg)?;
    let path = run_dir.join(EVAL_REPORT_FILE);
    fs::write(&path, format_report(&report)).map_err(|e| Error::io(&path, e))?;
    let path = run_dir.join(EVAL_SUMMARY_FILE);
    fs::write(&path, summary_json(&report, None)).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
