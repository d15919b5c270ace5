use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::grid::{ColorImage, DepthMap};

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_color_png(path: &Path) -> Result<ColorImage> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Ok(ColorImage::from_vec(w as usize, h as usize, data))
}

/// Reads a 16-bit depth image and converts raw units to meters.
pub fn read_depth_png(path: &Path, depth_scale: f64) -> Result<DepthMap> {
    let img = open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p[0] as f64 / depth_scale).collect();
    Ok(DepthMap::from_vec(w as usize, h as usize, data))
}

pub fn write_color_png(path: &Path, color: &ColorImage) -> Result<()> {
    let mut img = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(color.width() as u32, color.height() as u32);
    for (p, c) in img.pixels_mut().zip(color.iter()) {
        *p = Rgb(c.map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    save(path, img.save(path))
}

/// Writes meters as 16-bit raw units (`round(d · depth_scale)`, saturating).
pub fn write_depth_png(path: &Path, depth: &DepthMap, depth_scale: f64) -> Result<()> {
    let mut img = ImageBuffer::<Luma<u16>, Vec<u16>>::new(depth.width() as u32, depth.height() as u32);
    for (p, &d) in img.pixels_mut().zip(depth.iter()) {
        let raw = if d.is_finite() && d > 0.0 {
            (d * depth_scale).round().min(u16::MAX as f64)
        } else {
            0.0
        };
        *p = Luma([raw as u16]);
    }
    save(path, img.save(path))
}

fn save(path: &Path, r: image::ImageResult<()>) -> Result<()> {
    r.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_png_round_trip_in_raw_units() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let d = DepthMap::from_vec(3, 1, vec![1.0, 0.0, 0.12]);
        write_depth_png(&path, &d, 5000.0).unwrap();
        let back = read_depth_png(&path, 5000.0).unwrap();
        assert_eq!(back.as_slice(), &[1.0, 0.0, 0.12]);
    }

    #[test]
    fn raw_5000_is_one_meter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let img = ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(2, 1, vec![5000, 600]).unwrap();
        img.save(&path).unwrap();
        let d = read_depth_png(&path, 5000.0).unwrap();
        assert_eq!(d[(0, 0)], 1.0);
        assert!((d[(1, 0)] - 0.12).abs() < 1e-15);
    }

    #[test]
    fn color_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let c = ColorImage::from_vec(2, 1, vec![[0.0, 1.0, 0.2], [128.0 / 255.0, 0.5, 1.0]]);
        write_color_png(&path, &c).unwrap();
        let back = read_color_png(&path).unwrap();
        for (a, b) in back.iter().zip(c.iter()) {
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
