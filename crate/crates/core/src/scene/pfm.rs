//! Grayscale PFM maps ("Pf"), 32-bit floats stored bottom row first.

use std::path::Path;

use super::ScalarMap;
use crate::error::{Error, Result};

/// Encodes `map` as little-endian PFM. Non-finite values are written as 0.
/// `scale` is the header scale magnitude and sign; only negative
/// (little-endian) scales are produced.
pub fn encode_pfm(map: &ScalarMap, scale: f64) -> Result<Vec<u8>> {
    if !(scale < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "PFM writing supports little-endian only (negative scale), got {scale}"
        )));
    }
    let header = format!("Pf\n{} {}\n{:?}\n", map.width, map.height, scale);
    let mut out = Vec::with_capacity(header.len() + 4 * map.values.len());
    out.extend_from_slice(header.as_bytes());
    for y in (0..map.height).rev() {
        for &v in &map.values[y * map.width..(y + 1) * map.width] {
            let v = if v.is_finite() { v as f32 } else { 0.0 };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path, what: &str) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(path, format!("missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::format(path, format!("non-ASCII {what}")))
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<ScalarMap> {
    let mut pos = 0;
    match header_token(bytes, &mut pos, path, "magic")? {
        "Pf" => {}
        "PF" => return Err(Error::format(path, "color PFM (PF) is not supported")),
        m => return Err(Error::format(path, format!("not a PFM file (magic '{m}')"))),
    }
    let dim = |s: &str, what: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(path, format!("invalid {what} '{s}'")))
    };
    let width = dim(header_token(bytes, &mut pos, path, "width")?, "width")?;
    let height = dim(header_token(bytes, &mut pos, path, "height")?, "height")?;
    let scale_tok = header_token(bytes, &mut pos, path, "scale")?;
    let scale: f64 = scale_tok
        .parse()
        .ok()
        .filter(|s: &f64| *s != 0.0 && s.is_finite())
        .ok_or_else(|| Error::format(path, format!("invalid scale '{scale_tok}'")))?;
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let need = width * height * 4;
    let body = bytes
        .get(pos..)
        .filter(|b| b.len() == need)
        .ok_or_else(|| {
            Error::format(
                path,
                format!("expected {need} data bytes for {width}x{height}"),
            )
        })?;
    let little = scale < 0.0;
    let mut values = vec![0.0; width * height];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row, x) = (i / width, i % width);
        values[(height - 1 - row) * width + x] = v as f64;
    }
    ScalarMap::new(width, height, values)
}

pub fn write_pfm(path: &Path, map: &ScalarMap) -> Result<()> {
    std::fs::write(path, encode_pfm(map, -1.0)?).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<ScalarMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}
