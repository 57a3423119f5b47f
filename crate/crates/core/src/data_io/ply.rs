use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::sampling::PointCloud;

/// Writes an ASCII PLY with one `x y z` float vertex per line.
pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", cloud.len()).unwrap();
    out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in &cloud.points {
        writeln!(out, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the PLY subset written by [`save_cloud`]; the header must match exactly.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text).map_err(|msg| Error::format(path, msg))
}

fn parse_cloud(text: &str) -> std::result::Result<PointCloud, String> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let mut expect = |want: &str| -> std::result::Result<(), String> {
        match lines.next() {
            Some((_, l)) if l == want => Ok(()),
            Some((n, l)) => Err(format!("line {n}: expected `{want}`, found `{l}`")),
            None => Err(format!("unexpected end of file, expected `{want}`")),
        }
    };
    expect("ply")?;
    expect("format ascii 1.0")?;
    let count = match lines.next() {
        Some((n, l)) => l
            .strip_prefix("element vertex ")
            .and_then(|c| c.parse::<usize>().ok())
            .ok_or_else(|| format!("line {n}: expected `element vertex N`, found `{l}`"))?,
        None => return Err("unexpected end of file in header".into()),
    };
    let mut properties = Vec::new();
    loop {
        match lines.next() {
            Some((_, "end_header")) => break,
            Some((n, l)) if l.starts_with("property ") => properties.push((n, l.to_string())),
            Some((n, l)) => return Err(format!("line {n}: unexpected header line `{l}`")),
            None => return Err("unexpected end of file in header".into()),
        }
    }
    if properties.len() != 3 {
        let n = properties.last().map(|p| p.0).unwrap_or(3);
        return Err(format!("line {n}: expected 3 vertex properties, found {}", properties.len()));
    }
    for ((n, l), axis) in properties.iter().zip(["x", "y", "z"]) {
        if *l != format!("property float {axis}") {
            return Err(format!("line {n}: expected `property float {axis}`, found `{l}`"));
        }
    }
    let mut points = Vec::with_capacity(count);
    for (n, l) in lines.by_ref() {
        if l.trim().is_empty() {
            continue;
        }
        if points.len() == count {
            return Err(format!("line {n}: more than {count} vertices"));
        }
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f32>().map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format!("line {n}: non-numeric vertex `{l}`"))?;
        if vals.len() != 3 {
            return Err(format!("line {n}: expected 3 coordinates, found {}", vals.len()));
        }
        points.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    if points.len() != count {
        return Err(format!("expected {count} vertices, found {}", points.len()));
    }
    Ok(PointCloud::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_to_float_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = PointCloud::new(vec![Vector3::new(0.1, -2.5e-3, 1.0 / 3.0), Vector3::new(1e-8, 7.0, -0.0)]);
        save_cloud(&path, &cloud).unwrap();
        let back = load_cloud(&path).unwrap();
        for (a, b) in cloud.points.iter().zip(&back.points) {
            for k in 0..3 {
                assert_eq!(a[k] as f32, b[k] as f32);
            }
        }
    }

    #[test]
    fn empty_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ply");
        save_cloud(&path, &PointCloud::default()).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("element vertex 0\n"));
        assert!(load_cloud(&path).unwrap().is_empty());
    }

    #[test]
    fn four_properties_rejected() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty float w\nend_header\n1 2 3 4\n";
        let err = parse_cloud(text).unwrap_err();
        assert!(err.contains("line 7"), "{err}");
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(parse_cloud("ply\nformat binary_little_endian 1.0\n").unwrap_err().contains("line 2"));
        let bad_row = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 a 3\n";
        assert!(parse_cloud(bad_row).unwrap_err().contains("line 8"));
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(parse_cloud(short).is_err());
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.ply");
        assert!(load_cloud(&missing).unwrap_err().to_string().contains("missing.ply"));
    }
}
