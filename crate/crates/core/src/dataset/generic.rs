//! Generic layout: `color/%06d.png`, `depth/%06d.png`, `intrinsics.txt`, optional `poses.txt`.
//!
//! `intrinsics.txt` holds one line `fx fy cx cy width height depth_scale`; `poses.txt` is a
//! trajectory file whose lines pair with frames in index order.

use std::fs;
use std::path::Path;

use super::png::{read_color_png, read_depth_png};
use super::trajectory::load_trajectory;
use super::{downsample_frame, RgbdFrame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::{check_shape, Intrinsics};

pub const INTRINSICS_FILE: &str = "intrinsics.txt";

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| Error::format(path, "empty intrinsics file"))?;
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(str::parse::<f64>)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if vals.len() != 7 {
        return Err(Error::format(path, format!("expected 7 values, found {}", vals.len())));
    }
    let k = Intrinsics {
        fx: vals[0],
        fy: vals[1],
        cx: vals[2],
        cy: vals[3],
        width: vals[4] as usize,
        height: vals[5] as usize,
        depth_scale: vals[6],
    };
    k.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(k)
}

pub fn write_intrinsics(path: &Path, k: &Intrinsics) -> Result<()> {
    let text = format!(
        "# fx fy cx cy width height depth_scale\n{:?} {:?} {:?} {:?} {} {} {:?}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height, k.depth_scale
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_generic_sequence(root: &Path, max_frames: Option<usize>, downscale: usize) -> Result<Sequence> {
    let k = read_intrinsics(&root.join(INTRINSICS_FILE))?;
    let color_dir = root.join("color");
    let mut names: Vec<String> = fs::read_dir(&color_dir)
        .map_err(|e| Error::io(&color_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    let poses_file = root.join("poses.txt");
    let poses = if poses_file.is_file() {
        Some(load_trajectory(&poses_file)?)
    } else {
        None
    };
    let mut seq = Sequence::default();
    for (i, name) in names.iter().take(max_frames.unwrap_or(usize::MAX)).enumerate() {
        let color = read_color_png(&color_dir.join(name))?;
        let depth = read_depth_png(&root.join("depth").join(name), k.depth_scale)?;
        check_shape(color.width(), color.height(), &k)?;
        check_shape(depth.width(), depth.height(), &k)?;
        let entry = poses.as_ref().and_then(|p| p.get(i));
        let ts = entry.map_or(i as f64, |e| e.0);
        let frame = RgbdFrame::new(color, depth, k, ts, i);
        seq.frames.push(downsample_frame(&frame, downscale));
        seq.ground_truth.push(entry.map(|e| e.1));
    }
    Ok(seq)
}
