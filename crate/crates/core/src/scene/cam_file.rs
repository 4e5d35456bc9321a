//! Plain-text camera files.
//!
//! ```text
//! extrinsic
//! r00 r01 r02 t0
//! r10 r11 r12 t1
//! r20 r21 r22 t2
//! 0 0 0 1
//!
//! intrinsic
//! fx 0 cx
//! 0 fy cy
//! 0 0 1
//!
//! d_min interval D d_max
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Camera, DepthHypotheses};

fn num(v: f64) -> String {
    // 17 significant digits round-trip every f64
    format!("{v:.16e}")
}

pub fn format_cam(camera: &Camera, hyp: &DepthHypotheses) -> String {
    let mut s = String::from("extrinsic\n");
    for i in 0..3 {
        let r = &camera.r;
        let _ = writeln!(
            s,
            "{} {} {} {}",
            num(r[(i, 0)]),
            num(r[(i, 1)]),
            num(r[(i, 2)]),
            num(camera.t[i])
        );
    }
    s.push_str("0 0 0 1\n\nintrinsic\n");
    for i in 0..3 {
        let k = &camera.k;
        let _ = writeln!(
            s,
            "{} {} {}",
            num(k[(i, 0)]),
            num(k[(i, 1)]),
            num(k[(i, 2)])
        );
    }
    let _ = writeln!(
        s,
        "\n{} {} {} {}",
        num(hyp.d_min),
        num(hyp.interval),
        hyp.count,
        num(hyp.d_max())
    );
    s
}

struct Lines<'a> {
    path: &'a Path,
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn next(&mut self, section: &str) -> Result<(usize, &'a str)> {
        let last = self.lines.last().map_or(1, |l| l.0 + 1);
        let item =
            self.lines.get(self.pos).copied().ok_or_else(|| {
                self.err(last, format!("unexpected end of file: missing {section}"))
            })?;
        self.pos += 1;
        Ok(item)
    }

    fn keyword(&mut self, word: &str) -> Result<()> {
        let (n, l) = self.next(&format!("'{word}' section"))?;
        if l != word {
            return Err(self.err(n, format!("expected '{word}', found '{l}'")));
        }
        Ok(())
    }

    fn row(&mut self, section: &str, len: usize) -> Result<(usize, Vec<f64>)> {
        let (n, l) = self.next(section)?;
        let vals = l
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| self.err(n, format!("invalid number '{t}' in {section}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != len {
            return Err(self.err(
                n,
                format!("{section} row needs {len} values, found {}", vals.len()),
            ));
        }
        Ok((n, vals))
    }
}

/// Parses camera file text; `path` only labels errors.
pub fn parse_cam(text: &str, path: &Path) -> Result<(Camera, DepthHypotheses)> {
    let lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let mut p = Lines {
        path,
        lines,
        pos: 0,
    };

    p.keyword("extrinsic")?;
    let mut r = Matrix3::zeros();
    let mut t = Vector3::zeros();
    for i in 0..3 {
        let (_, v) = p.row("extrinsic", 4)?;
        for j in 0..3 {
            r[(i, j)] = v[j];
        }
        t[i] = v[3];
    }
    let (n, v) = p.row("extrinsic", 4)?;
    if v != [0.0, 0.0, 0.0, 1.0] {
        return Err(p.err(n, "last extrinsic row must be 0 0 0 1"));
    }
    p.keyword("intrinsic")?;
    let mut k = Matrix3::zeros();
    for i in 0..3 {
        let (_, v) = p.row("intrinsic", 3)?;
        for j in 0..3 {
            k[(i, j)] = v[j];
        }
    }
    let (n, d) = p.next("depth range line")?;
    let toks: Vec<&str> = d.split_whitespace().collect();
    if toks.len() != 4 {
        return Err(p.err(
            n,
            format!("depth range line needs 4 values, found {}", toks.len()),
        ));
    }
    let f = |t: &str| {
        t.parse::<f64>()
            .map_err(|_| p.err(n, format!("invalid number '{t}' in depth range")))
    };
    let d_min = f(toks[0])?;
    let interval = f(toks[1])?;
    let count = toks[2]
        .parse::<usize>()
        .map_err(|_| p.err(n, format!("invalid depth count '{}'", toks[2])))?;
    let d_max = f(toks[3])?;
    if let Ok((extra, _)) = p.next("") {
        return Err(p.err(extra, "trailing content after depth range line"));
    }

    let hyp = DepthHypotheses::new(d_min, interval, count).map_err(|e| p.err(n, e.to_string()))?;
    let camera = Camera::new(k, r, t, (d_min, d_max)).map_err(|e| p.err(1, e.to_string()))?;
    Ok((camera, hyp))
}

pub fn write_cam(path: &Path, camera: &Camera, hyp: &DepthHypotheses) -> Result<()> {
    std::fs::write(path, format_cam(camera, hyp)).map_err(|e| Error::io(path, e))
}

pub fn read_cam(path: &Path) -> Result<(Camera, DepthHypotheses)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cam(&text, path)
}
