//! Binary little-endian PLY point clouds with float positions and uchar colors.

use std::path::Path;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};

const PROPERTIES: [&str; 6] = [
    "property float x",
    "property float y",
    "property float z",
    "property uchar red",
    "property uchar green",
    "property uchar blue",
];

fn header(count: usize) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for p in PROPERTIES {
        h.push_str(p);
        h.push('\n');
    }
    h.push_str("end_header\n");
    h
}

pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let h = header(cloud.len());
    let mut out = Vec::with_capacity(h.len() + 15 * cloud.len());
    out.extend_from_slice(h.as_bytes());
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        for v in p.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(c);
    }
    out
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, encode_ply(cloud)).map_err(|e| Error::io(path, e))
}

/// Reads clouds in the layout produced by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::format(path, "missing end_header"))?
        + END.len();
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::format(path, "header is not ASCII"))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.first() != Some(&"ply") || lines.get(1) != Some(&"format binary_little_endian 1.0") {
        return Err(Error::format(path, "expected binary_little_endian PLY"));
    }
    let count: usize = lines
        .get(2)
        .and_then(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::format(path, "missing vertex element count"))?;
    if lines[3..lines.len() - 1] != PROPERTIES {
        return Err(Error::format(path, "unsupported vertex properties"));
    }
    let body = &bytes[end..];
    if body.len() != 15 * count {
        return Err(Error::format(
            path,
            format!(
                "expected {} body bytes for {count} vertices, found {}",
                15 * count,
                body.len()
            ),
        ));
    }
    let mut cloud = PointCloud::default();
    for rec in body.chunks_exact(15) {
        let f = |i: usize| f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]) as f64;
        cloud.push(Vector3::new(f(0), f(4), f(8)), [rec[12], rec[13], rec[14]]);
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cloud_has_zero_elements() {
        let bytes = encode_ply(&PointCloud::default());
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("element vertex 0\n"));
        assert!(text.ends_with("end_header\n"));
    }

    #[test]
    fn one_point_is_header_plus_fifteen_bytes() {
        let mut cloud = PointCloud::default();
        cloud.push(Vector3::new(1.0, -2.0, 3.5), [10, 20, 30]);
        let bytes = encode_ply(&cloud);
        assert_eq!(bytes.len(), header(1).len() + 15);
        assert_eq!(
            &bytes[bytes.len() - 15..bytes.len() - 11],
            &1.0f32.to_le_bytes()
        );
        assert_eq!(&bytes[bytes.len() - 3..], &[10, 20, 30]);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let mut cloud = PointCloud::default();
        cloud.push(Vector3::new(0.25, 8.0, -1.5), [1, 2, 3]);
        cloud.push(Vector3::new(100.0, 0.0, 7.0), [255, 0, 9]);
        write_ply(&path, &cloud).unwrap();
        assert_eq!(read_ply(&path).unwrap(), cloud);
    }
}
