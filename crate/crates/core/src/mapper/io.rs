//! Little-endian map files.
//!
//! ```text
//! magic    4 bytes  "PXGM"
//! version  u32
//! height   u32
//! width    u32
//! frame    u64
//! pose     12 × f64, rotation row-major then translation
//! planes   7 × H·W × f32, row-major: base_depth, δ, radius, opacity logit, red, green, blue
//! mask     H·W bytes, 0 or 1
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::PixelGaussianMap;
use crate::error::{Error, Result};
use crate::grid::{ColorImage, DepthMap, Mask};
use crate::Pose;

pub const MAP_MAGIC: [u8; 4] = *b"PXGM";
pub const MAP_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 12 * 8;
const PLANES: usize = 7;

pub fn write_map(path: &Path, map: &PixelGaussianMap) -> Result<()> {
    let buf = encode(map);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_map(path: &Path) -> Result<PixelGaussianMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// The map exactly as it reads back after a write.
pub fn quantize_map(map: &PixelGaussianMap) -> PixelGaussianMap {
    decode(&encode(map), Path::new("<memory>")).expect("encoded map decodes")
}

fn encode(map: &PixelGaussianMap) -> Vec<u8> {
    let n = map.len();
    let mut buf = Vec::with_capacity(HEADER_LEN + n * (PLANES * 4 + 1));
    buf.extend_from_slice(&MAP_MAGIC);
    buf.extend_from_slice(&MAP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(map.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(map.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(map.frame_index as u64).to_le_bytes());
    for x in map.pose.to_array12() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut plane = |values: &mut dyn Iterator<Item = f64>| {
        for x in values {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    };
    plane(&mut map.base_depth.iter().copied());
    plane(&mut map.offset.iter().copied());
    plane(&mut map.log_radius.iter().map(|l| l.exp()));
    plane(&mut map.opacity_logit.iter().copied());
    for c in 0..3 {
        plane(&mut map.color.iter().map(|p| p[c]));
    }
    buf.extend(map.active.iter().map(|&a| a as u8));
    buf
}

fn decode(bytes: &[u8], path: &Path) -> Result<PixelGaussianMap> {
    let bad = |reason: String| Error::format(path, reason);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != MAP_MAGIC {
        return Err(bad("not a Gaussian map (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != MAP_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let height = u32_at(8) as usize;
    let width = u32_at(12) as usize;
    let frame_index = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let mut pose = [0.0; 12];
    for (i, p) in pose.iter_mut().enumerate() {
        let o = 24 + 8 * i;
        *p = f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    }
    if pose.iter().any(|x| !x.is_finite()) {
        return Err(bad("non-finite pose".into()));
    }
    let n = width
        .checked_mul(height)
        .filter(|&n| n > 0)
        .ok_or_else(|| bad(format!("invalid size {width}x{height}")))?;
    let expected = HEADER_LEN + n * (PLANES * 4 + 1);
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes for {width}x{height}, found {}", bytes.len())));
    }
    let plane = |k: usize| -> Vec<f64> {
        let start = HEADER_LEN + k * n * 4;
        bytes[start..start + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    let planes: Vec<Vec<f64>> = (0..PLANES).map(plane).collect();
    if planes.iter().flatten().any(|x| !x.is_finite()) {
        return Err(bad("non-finite attribute value".into()));
    }
    if planes[2].iter().any(|&r| r <= 0.0) {
        return Err(bad("non-positive radius".into()));
    }
    let mask_start = HEADER_LEN + PLANES * n * 4;
    let mut active = Vec::with_capacity(n);
    for &b in &bytes[mask_start..] {
        match b {
            0 => active.push(false),
            1 => active.push(true),
            other => return Err(bad(format!("mask byte {other} is neither 0 nor 1"))),
        }
    }
    let color = (0..n).map(|i| [planes[4][i], planes[5][i], planes[6][i]]).collect();
    Ok(PixelGaussianMap {
        frame_index,
        pose: Pose::from_array12(&pose),
        base_depth: DepthMap::from_vec(width, height, planes[0].clone()),
        offset: DepthMap::from_vec(width, height, planes[1].clone()),
        log_radius: DepthMap::from_vec(width, height, planes[2].iter().map(|r| r.ln()).collect()),
        opacity_logit: DepthMap::from_vec(width, height, planes[3].clone()),
        color: ColorImage::from_vec(width, height, color),
        active: Mask::from_vec(width, height, active),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Twist};
    use crate::geometry::se3_exp;

    fn sample_map() -> PixelGaussianMap {
        let (w, h) = (5, 3);
        PixelGaussianMap {
            frame_index: 42,
            pose: se3_exp(&Twist::new(0.1, -0.2, 0.3, 1.0, 2.0, -3.0)),
            base_depth: DepthMap::from_fn(w, h, |u, v| 1.0 + 0.25 * u as f64 + 0.5 * v as f64),
            offset: DepthMap::from_fn(w, h, |u, _| -0.125 * u as f64),
            color: ColorImage::from_fn(w, h, |u, v| [0.25 * u as f64, 0.5, 0.125 * v as f64]),
            log_radius: DepthMap::filled(w, h, 0.0078125f64.ln()),
            opacity_logit: DepthMap::from_fn(w, h, |u, v| u as f64 - v as f64),
            active: Mask::from_fn(w, h, |u, v| (u + v) % 2 == 0),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pxgm");
        let map = sample_map();
        write_map(&path, &map).unwrap();
        let back = read_map(&path).unwrap();
        assert_eq!(back.frame_index, 42);
        assert_eq!(back.pose, map.pose);
        assert_eq!(back.base_depth, map.base_depth);
        assert_eq!(back.offset, map.offset);
        assert_eq!(back.color, map.color);
        assert_eq!(back.active, map.active);
        assert_eq!(back.opacity_logit, map.opacity_logit);
        assert!((back.radius(3) - 0.0078125).abs() < 1e-12);
        back.check_shape(&Intrinsics::from_fov(5, 3, 1.0)).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, HEADER_LEN + 15 * 29);
        assert_eq!(quantize_map(&map), back);
        assert_eq!(quantize_map(&back), back);
    }

    #[test]
    fn corrupted_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.pxgm");
        write_map(&path, &sample_map()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        let err = read_map(&path).unwrap_err().to_string();
        assert!(err.contains("broken.pxgm"), "{err}");

        std::fs::write(&path, b"nope").unwrap();
        assert!(read_map(&path).unwrap_err().to_string().contains("broken.pxgm"));

        let mut bytes = Vec::new();
        write_map(&path, &sample_map()).unwrap();
        bytes.extend(std::fs::read(&path).unwrap());
        *bytes.last_mut().unwrap() = 7;
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_map(&path).is_err());
    }
}
