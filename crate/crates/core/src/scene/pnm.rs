//! Binary PPM (P6) images and PGM (P5) validity masks.

use std::path::Path;

use super::RgbImage;
use crate::error::{Error, Result};

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Masks are stored as 255 (valid) / 0 (invalid).
pub fn write_pgm_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    if mask.len() != width * height {
        return Err(Error::Shape(format!(
            "{width}x{height} mask needs {} entries, got {}",
            width * height,
            mask.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255u8 } else { 0 }));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a binary PNM header; returns (width, height, data offset).
fn parse_header(bytes: &[u8], magic: &str, path: &Path) -> Result<(usize, usize, usize)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != magic {
        return Err(Error::format(
            path,
            format!("expected {magic}, found '{}'", fields[0]),
        ));
    }
    let parse = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
    let (w, h, max) = match (parse(&fields[1]), parse(&fields[2]), parse(&fields[3])) {
        (Some(w), Some(h), Some(m)) => (w, h, m),
        _ => return Err(Error::format(path, "invalid header fields")),
    };
    if max != 255 {
        return Err(Error::format(
            path,
            format!("only 8-bit images are supported (maxval {max})"),
        ));
    }
    Ok((w, h, pos + 1))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, off) = parse_header(&bytes, "P6", path)?;
    let data = bytes
        .get(off..)
        .filter(|d| d.len() == w * h * 3)
        .ok_or_else(|| Error::format(path, format!("expected {} pixel bytes", w * h * 3)))?;
    RgbImage::new(w, h, data.to_vec())
}

/// Returns (width, height, mask); any nonzero byte is valid.
pub fn read_pgm_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, off) = parse_header(&bytes, "P5", path)?;
    let data = bytes
        .get(off..)
        .filter(|d| d.len() == w * h)
        .ok_or_else(|| Error::format(path, format!("expected {} pixel bytes", w * h)))?;
    Ok((w, h, data.iter().map(|&b| b != 0).collect()))
}
