//! Scene directories:
//!
//! ```text
//! images/NNNNNNNN.ppm
//! cams/NNNNNNNN_cam.txt
//! depths/NNNNNNNN.pfm     (optional)
//! masks/NNNNNNNN.pgm      (optional, defaults to depth > 0)
//! tracks.txt              (optional, "x y z k id_1 .. id_k" per line)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{
    read_cam, read_pfm, read_pgm_mask, read_ppm, write_cam, write_pfm, write_pgm_mask, write_ppm,
    GroundTruth, SceneBundle, View,
};
use crate::error::{Error, Result};
use crate::geometry::SparseTrack;

/// Zero-padded 8-digit file stem for view `index`.
pub fn view_file_stem(index: usize) -> String {
    format!("{index:08}")
}

fn create(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn save_scene_dir(root: &Path, bundle: &SceneBundle) -> Result<()> {
    create(&root.join("images"))?;
    create(&root.join("cams"))?;
    for (i, view) in bundle.views.iter().enumerate() {
        let stem = view_file_stem(i);
        write_ppm(
            &root.join("images").join(format!("{stem}.ppm")),
            &view.image,
        )?;
        write_cam(
            &root.join("cams").join(format!("{stem}_cam.txt")),
            &view.camera,
            &bundle.hypotheses,
        )?;
    }
    if let Some(gts) = &bundle.ground_truth {
        create(&root.join("depths"))?;
        create(&root.join("masks"))?;
        for (i, gt) in gts.iter().enumerate() {
            let stem = view_file_stem(i);
            write_pfm(&root.join("depths").join(format!("{stem}.pfm")), &gt.depth)?;
            write_pgm_mask(
                &root.join("masks").join(format!("{stem}.pgm")),
                gt.depth.width,
                gt.depth.height,
                &gt.mask,
            )?;
        }
    }
    let mut tracks = String::new();
    for t in &bundle.tracks {
        let p = t.position;
        let _ = write!(
            tracks,
            "{:.16e} {:.16e} {:.16e} {}",
            p.x,
            p.y,
            p.z,
            t.views.len()
        );
        for v in &t.views {
            let _ = write!(tracks, " {v}");
        }
        tracks.push('\n');
    }
    let path = root.join("tracks.txt");
    std::fs::write(&path, tracks).map_err(|e| Error::io(&path, e))
}

/// Indices of files in `dir` named `<8 digits><suffix>`.
fn indexed_files(dir: &Path, suffix: &str) -> Result<BTreeMap<usize, String>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(suffix) {
            if stem.len() == 8 && stem.bytes().all(|b| b.is_ascii_digit()) {
                out.insert(stem.parse().expect("digits"), name);
            }
        }
    }
    Ok(out)
}

fn orphan_error(
    root: &Path,
    images: &BTreeMap<usize, String>,
    cams: &BTreeMap<usize, String>,
) -> Error {
    let mut orphans: Vec<String> = images
        .iter()
        .filter(|(i, _)| !cams.contains_key(i))
        .map(|(_, n)| format!("images/{n}"))
        .collect();
    orphans.extend(
        cams.iter()
            .filter(|(i, _)| !images.contains_key(i))
            .map(|(_, n)| format!("cams/{n}")),
    );
    Error::format(
        root,
        format!(
            "{} images but {} cameras; orphans: {}",
            images.len(),
            cams.len(),
            orphans.join(", ")
        ),
    )
}

pub fn load_scene_dir(root: &Path) -> Result<SceneBundle> {
    let images = indexed_files(&root.join("images"), ".ppm")?;
    let cams = indexed_files(&root.join("cams"), "_cam.txt")?;
    if images.keys().ne(cams.keys()) {
        return Err(orphan_error(root, &images, &cams));
    }
    if images.is_empty() {
        return Err(Error::Empty(format!("no views in {}", root.display())));
    }
    if images.keys().enumerate().any(|(pos, &i)| pos != i) {
        return Err(Error::format(
            root,
            "view indices must be contiguous from 0",
        ));
    }

    let mut views = Vec::with_capacity(images.len());
    let mut hypotheses = None;
    for (name_img, name_cam) in images.values().zip(cams.values()) {
        let image = read_ppm(&root.join("images").join(name_img))?;
        let cam_path = root.join("cams").join(name_cam);
        let (camera, hyp) = read_cam(&cam_path)?;
        match hypotheses {
            None => hypotheses = Some(hyp),
            Some(h) if h != hyp => {
                return Err(Error::format(
                    &cam_path,
                    "depth hypotheses differ from view 0",
                ));
            }
            _ => {}
        }
        views.push(View { image, camera });
    }

    let depth_dir = root.join("depths");
    let ground_truth = if depth_dir.is_dir() {
        let mut gts = Vec::with_capacity(views.len());
        for (i, view) in views.iter().enumerate() {
            let stem = view_file_stem(i);
            let depth = read_pfm(&depth_dir.join(format!("{stem}.pfm")))?;
            if (depth.width, depth.height) != (view.image.width, view.image.height) {
                return Err(Error::format(
                    &depth_dir,
                    format!("depth {stem} size differs from its image"),
                ));
            }
            let mask_path = root.join("masks").join(format!("{stem}.pgm"));
            let mask = if mask_path.exists() {
                let (w, h, m) = read_pgm_mask(&mask_path)?;
                if (w, h) != (depth.width, depth.height) {
                    return Err(Error::format(
                        &mask_path,
                        "mask size differs from depth map",
                    ));
                }
                m
            } else {
                (0..depth.values.len()).map(|j| depth.is_valid(j)).collect()
            };
            gts.push(GroundTruth { depth, mask });
        }
        Some(gts)
    } else {
        None
    };

    let tracks_path = root.join("tracks.txt");
    let tracks = if tracks_path.exists() {
        parse_tracks(&tracks_path, views.len())?
    } else {
        Vec::new()
    };

    Ok(SceneBundle {
        views,
        hypotheses: hypotheses.expect("at least one view"),
        ground_truth,
        tracks,
    })
}

fn parse_tracks(path: &Path, view_count: usize) -> Result<Vec<SparseTrack>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tracks = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 4 {
            return Err(err("expected 'x y z k id..'".into()));
        }
        let coord = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| err(format!("invalid coordinate '{t}'")))
        };
        let position = Vector3::new(coord(toks[0])?, coord(toks[1])?, coord(toks[2])?);
        let k: usize = toks[3]
            .parse()
            .map_err(|_| err(format!("invalid view count '{}'", toks[3])))?;
        if toks.len() != 4 + k {
            return Err(err(format!(
                "expected {k} view ids, found {}",
                toks.len() - 4
            )));
        }
        let views = toks[4..]
            .iter()
            .map(|t| {
                t.parse::<usize>()
                    .ok()
                    .filter(|&v| v < view_count)
                    .ok_or_else(|| err(format!("invalid view id '{t}'")))
            })
            .collect::<Result<BTreeSet<usize>>>()?;
        tracks.push(SparseTrack { position, views });
    }
    Ok(tracks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_eight_digits() {
        assert_eq!(view_file_stem(0), "00000000");
        assert_eq!(view_file_stem(123), "00000123");
    }
}
