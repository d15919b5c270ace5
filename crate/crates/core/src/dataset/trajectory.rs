//! TUM trajectory text files: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::Pose;

/// Formats with at most `digits` significant digits, trailing zeros trimmed; zero is `"0"`.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { format!("{x}") };
    }
    let sci = format!("{:.*e}", digits.saturating_sub(1), x);
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let mut s = format!("{:.*}", decimals, x);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn save_trajectory(poses: &[Pose], timestamps: &[f64], path: &Path) -> Result<()> {
    if poses.len() != timestamps.len() {
        return Err(Error::InvalidInput(format!(
            "{} poses but {} timestamps",
            poses.len(),
            timestamps.len()
        )));
    }
    let mut out = String::new();
    for (pose, &ts) in poses.iter().zip(timestamps) {
        let q = pose.quaternion();
        let t = pose.translation;
        let fields: Vec<String> = [t.x, t.y, t.z, q[0], q[1], q[2], q[3]]
            .iter()
            .map(|&v| format_significant(v, 9))
            .collect();
        let _ = writeln!(out, "{ts:.9} {}", fields.join(" "));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads `(timestamp, pose)` pairs; `#` comment lines and blank lines are skipped.
pub fn load_trajectory(path: &Path) -> Result<Vec<(f64, Pose)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text).map_err(|reason| Error::format(path, reason))
}

pub(crate) fn parse_trajectory(text: &str) -> std::result::Result<Vec<(f64, Pose)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", n + 1))?;
        if vals.len() != 8 {
            return Err(format!("line {}: expected 8 fields, found {}", n + 1, vals.len()));
        }
        let pose = Pose::from_quaternion(vals[4], vals[5], vals[6], vals[7], Vector3::new(vals[1], vals[2], vals[3]));
        out.push((vals[0], pose));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};

    #[test]
    fn identity_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        save_trajectory(&[Pose::identity()], &[0.0], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "0.000000000 0 0 0 0 0 0 1\n");
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(1.5, 9), "1.5");
        assert_eq!(format_significant(-0.000123456789123, 9), "-0.000123456789");
        assert_eq!(format_significant(1.23456789123456, 9), "1.23456789");
        assert_eq!(format_significant(9.9999999999, 9), "10");
        assert_eq!(format_significant(-0.0, 9), "0");
    }

    #[test]
    fn round_trip_and_cardinality() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let poses: Vec<Pose> = (0..100)
            .map(|i| {
                let f = i as f64;
                se3_exp(&Twist::new(0.01 * f, -0.02 * f, 0.03, 0.05 * f, -1.0, 0.3 * (f * 0.1).sin()))
            })
            .collect();
        let ts: Vec<f64> = (0..100).map(|i| 1305031102.175304 + i as f64 / 30.0).collect();
        save_trajectory(&poses, &ts, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 100);
        let back = load_trajectory(&path).unwrap();
        assert_eq!(back.len(), 100);
        for ((t, p), (t0, p0)) in back.iter().zip(ts.iter().zip(&poses)) {
            assert!((t - t0).abs() < 1e-8);
            assert!(p.max_abs_diff(p0) < 1e-8, "{p:?} vs {p0:?}");
        }
    }

    #[test]
    fn malformed_line_is_reported() {
        assert!(parse_trajectory("0 1 2 3\n").is_err());
        assert!(parse_trajectory("# comment\n\n0 0 0 0 0 0 0 1\n").unwrap().len() == 1);
    }
}
