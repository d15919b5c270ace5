use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::run::read_frame_records;
use super::{map_path, RunConfig, FRAMES_FILE};
use crate::dataset::{
    read_intrinsics, render_synthetic_frame, save_trajectory, write_color_png, write_depth_png, write_intrinsics,
    INTRINSICS_FILE,
};
use crate::error::{Error, Result};
use crate::mapper::{read_map, splat};
use crate::Pose;

/// Writes the configured synthetic sequence in the generic layout (`color/`, `depth/`,
/// `intrinsics.txt`, `poses.txt`). Returns the number of frames written.
pub fn write_synthetic(cfg: &RunConfig, out_dir: &Path) -> Result<usize> {
    cfg.validate()?;
    let scene = cfg
        .synthetic_scene()
        .ok_or_else(|| Error::Config(format!("synth needs a synthetic dataset, got {}", cfg.dataset)))?;
    let n = cfg.max_frames.map_or(scene.len(), |m| m.min(scene.len()));
    for sub in ["color", "depth"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let k = scene.intrinsics;
    write_intrinsics(&out_dir.join(INTRINSICS_FILE), &k)?;
    let stamps = (0..n)
        .into_par_iter()
        .map(|i| {
            let f = render_synthetic_frame(&scene, i)?;
            let name = format!("{i:06}.png");
            write_color_png(&out_dir.join("color").join(&name), &f.color)?;
            write_depth_png(&out_dir.join("depth").join(&name), &f.depth, k.depth_scale)?;
            Ok(f.timestamp)
        })
        .collect::<Result<Vec<f64>>>()?;
    save_trajectory(&scene.trajectory[..n], &stamps, &out_dir.join("poses.txt"))?;
    Ok(n)
}

/// Renders the saved maps of `run_dir` at each pose, combining the `maps_per_view` maps whose
/// cameras are closest, and writes `color_%06d.png` and `depth_%06d.png` (alpha-normalized
/// depth) into `out_dir`.
pub fn render_views(run_dir: &Path, poses: &[Pose], out_dir: &Path, maps_per_view: usize) -> Result<usize> {
    if maps_per_view == 0 {
        return Err(Error::Config("render needs at least one map per view".into()));
    }
    let k = read_intrinsics(&run_dir.join(INTRINSICS_FILE))?;
    let records = read_frame_records(&run_dir.join(FRAMES_FILE))?;
    let missing: Vec<_> = (0..records.len()).map(|i| map_path(run_dir, i)).filter(|p| !p.is_file()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let maps = (0..records.len()).map(|i| read_map(&map_path(run_dir, i))).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (j, pose) in poses.iter().enumerate() {
        let mut order: Vec<usize> = (0..maps.len()).collect();
        order.sort_by(|&a, &b| {
            let da = maps[a].pose.translation_distance_to(pose);
            let db = maps[b].pose.translation_distance_to(pose);
            da.total_cmp(&db).then(a.cmp(&b))
        });
        let sources: Vec<_> = order.iter().take(maps_per_view).map(|&i| &maps[i]).collect();
        let out = splat(&sources, pose, &k, true)?;
        write_color_png(&out_dir.join(format!("color_{j:06}.png")), &out.color)?;
        write_depth_png(&out_dir.join(format!("depth_{j:06}.png")), &out.depth, k.depth_scale)?;
    }
    Ok(poses.len())
}
