use std::fs;
use std::path::{Path, PathBuf};

use super::PipelineConfig;
use crate::error::Error;
use crate::eval::{evaluate, MetricReport};
use crate::exec;
use crate::geometry::{select_source_views, Camera, DepthHypotheses};
use crate::network::{train, training_samples, Model, Params};
use crate::postprocess::{
    confidence_map, fuse, geometric_consistency, photometric_filter, DepthView, FuseView,
};
use crate::scene::{
    generate_scene, load_scene_dir, read_pfm, read_ply, save_scene_dir, view_file_stem, write_pfm,
    write_ply, DepthMap, PointCloud, ScalarMap, SceneBundle,
};

/// Why a stage stopped. Validation failures are problems with the
/// configuration or missing inputs, detected before any work starts.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Invalid(Error),
    #[error("{0}")]
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Train,
    Infer,
    Filter,
    Fuse,
    Eval,
    Pipeline,
}

fn missing(what: &str, path: &Path) -> Failure {
    Failure::Invalid(Error::InvalidArgument(format!(
        "{what} not found: {}",
        path.display()
    )))
}

fn require(what: &str, path: &Path) -> Outcome<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(missing(what, path))
    }
}

fn validated(cfg: &PipelineConfig) -> Outcome<()> {
    cfg.validate().map_err(Failure::Invalid)
}

fn create_dir(path: &Path) -> Outcome<()> {
    fs::create_dir_all(path).map_err(|e| Failure::Runtime(Error::io(path, e)))
}

fn write_text(path: &Path, text: &str) -> Outcome<()> {
    fs::write(path, text).map_err(|e| Failure::Runtime(Error::io(path, e)))
}

fn view_map_path(cfg: &PipelineConfig, dir: &str, i: usize) -> PathBuf {
    cfg.output_dir
        .join(dir)
        .join(format!("{}.pfm", view_file_stem(i)))
}

fn load_scene(cfg: &PipelineConfig) -> Outcome<SceneBundle> {
    require("scene directory", &cfg.scene_dir)?;
    let scene = load_scene_dir(&cfg.scene_dir)?;
    if scene.hypotheses.count % 8 != 0 {
        return Err(Failure::Invalid(Error::InvalidArgument(format!(
            "scene has {} depth hypotheses, not a multiple of 8",
            scene.hypotheses.count
        ))));
    }
    if scene.views.len() < cfg.views {
        return Err(Failure::Invalid(Error::InvalidArgument(format!(
            "scene has {} views but views = {}",
            scene.views.len(),
            cfg.views
        ))));
    }
    Ok(scene)
}

/// Renders the configured scene and writes it to `scene_dir`.
pub fn synth(cfg: &PipelineConfig) -> Outcome<SceneBundle> {
    validated(cfg)?;
    let spec = cfg.scene_spec();
    spec.validate().map_err(Failure::Invalid)?;
    let mut scene = generate_scene(&spec)?;
    if let (Some(d_min), Some(interval)) = (cfg.d_min, cfg.interval) {
        let hyp =
            DepthHypotheses::new(d_min, interval, cfg.depth_count).map_err(Failure::Invalid)?;
        scene.hypotheses = hyp;
        for v in &mut scene.views {
            v.camera.depth_range = (hyp.d_min, hyp.d_max());
        }
    }
    save_scene_dir(&cfg.scene_dir, &scene)?;
    log::info!(
        "synth: {} views of {}x{} written to {}",
        scene.views.len(),
        cfg.width,
        cfg.height,
        cfg.scene_dir.display()
    );
    Ok(scene)
}

/// Trains from scratch on every view of the scene and saves the checkpoint
/// and the per-step loss.
pub fn train_stage(cfg: &PipelineConfig) -> Outcome<Model> {
    validated(cfg)?;
    let scene = load_scene(cfg)?;
    if scene.ground_truth.is_none() {
        return Err(Failure::Invalid(Error::InvalidArgument(format!(
            "training needs ground-truth depths in {}",
            cfg.scene_dir.join("depths").display()
        ))));
    }
    let all: Vec<usize> = (0..scene.views.len()).collect();
    let samples = training_samples(0, &scene, &all, &all, cfg.views, &cfg.selection())?;
    let mut model = Model::new(cfg.network(), cfg.seed)?;
    let report = train(
        &mut model,
        std::slice::from_ref(&scene),
        &samples,
        &cfg.training(),
    )?;
    create_dir(&cfg.output_dir)?;
    let checkpoint = cfg.checkpoint_path();
    if let Some(parent) = checkpoint.parent() {
        create_dir(parent)?;
    }
    model.params.save(&checkpoint)?;
    let history: String = report
        .loss_history
        .iter()
        .map(|l| format!("{l}\n"))
        .collect();
    write_text(&cfg.output_dir.join("loss_history.txt"), &history)?;
    log::info!(
        "train: {} steps, final loss {:.4}, checkpoint {}",
        report.loss_history.len(),
        report.loss_history.last().copied().unwrap_or(f64::NAN),
        checkpoint.display()
    );
    Ok(model)
}

fn load_model(cfg: &PipelineConfig) -> Outcome<Model> {
    let path = cfg.checkpoint_path();
    require("checkpoint", &path)?;
    let params = Params::load(&path)?;
    Model::from_params(cfg.network(), params).map_err(Failure::Invalid)
}

/// Quarter-resolution depth and confidence for every view, each using its
/// best `views - 1` sources.
pub fn infer_stage(cfg: &PipelineConfig) -> Outcome<Vec<(DepthMap, ScalarMap)>> {
    validated(cfg)?;
    let model = load_model(cfg)?;
    let scene = load_scene(cfg)?;
    let cams = scene.cameras();
    let selection = cfg.selection();
    let maps = exec::map_indices(
        scene.views.len(),
        |r| -> crate::Result<(DepthMap, ScalarMap)> {
            let sources = select_source_views(r, &cams, &scene.tracks, cfg.views - 1, &selection)?;
            let mut views = vec![&scene.views[r]];
            views.extend(sources.iter().map(|&s| &scene.views[s]));
            let out = model.infer(&views, scene.hypotheses)?;
            let confidence = confidence_map(&out.probability, &scene.hypotheses, &out.depth)?;
            Ok((out.depth, confidence))
        },
    )
    .into_iter()
    .collect::<crate::Result<Vec<_>>>()?;
    create_dir(&cfg.output_dir.join("depths"))?;
    create_dir(&cfg.output_dir.join("confidence"))?;
    for (i, (depth, conf)) in maps.iter().enumerate() {
        write_pfm(&view_map_path(cfg, "depths", i), depth)?;
        write_pfm(&view_map_path(cfg, "confidence", i), conf)?;
    }
    log::info!("infer: {} depth maps written", maps.len());
    Ok(maps)
}

struct Estimates {
    scene: SceneBundle,
    depths: Vec<DepthMap>,
    confidences: Vec<ScalarMap>,
    cameras: Vec<Camera>,
}

fn load_estimates(cfg: &PipelineConfig) -> Outcome<Estimates> {
    let scene = load_scene(cfg)?;
    let mut depths = Vec::new();
    let mut confidences = Vec::new();
    let mut cameras = Vec::new();
    for (i, view) in scene.views.iter().enumerate() {
        let dp = view_map_path(cfg, "depths", i);
        let cp = view_map_path(cfg, "confidence", i);
        require("depth map", &dp)?;
        require("confidence map", &cp)?;
        let depth = read_pfm(&dp)?;
        let conf = read_pfm(&cp)?;
        if depth.width == 0 || view.image.width % depth.width != 0 {
            return Err(Failure::Runtime(Error::format(
                &dp,
                format!(
                    "width {} does not divide the image width {}",
                    depth.width, view.image.width
                ),
            )));
        }
        cameras.push(
            view.camera
                .scaled(depth.width as f64 / view.image.width as f64),
        );
        depths.push(depth);
        confidences.push(conf);
    }
    Ok(Estimates {
        scene,
        depths,
        confidences,
        cameras,
    })
}

/// Photometric then geometric filtering of every inferred depth map.
pub fn filter_stage(cfg: &PipelineConfig) -> Outcome<Vec<DepthMap>> {
    validated(cfg)?;
    let est = load_estimates(cfg)?;
    let fc = cfg.filter();
    let photometric = est
        .depths
        .iter()
        .zip(&est.confidences)
        .map(|(d, c)| photometric_filter(d, c, &fc))
        .collect::<crate::Result<Vec<_>>>()?;
    let views: Vec<DepthView> = photometric
        .iter()
        .zip(&est.cameras)
        .map(|(depth, camera)| DepthView { depth, camera })
        .collect();
    let needed = fc.required_sources();
    let mut out = Vec::with_capacity(views.len());
    for (r, reference) in views.iter().enumerate() {
        let others: Vec<DepthView> = views
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != r)
            .map(|(_, v)| *v)
            .collect();
        let c = geometric_consistency(*reference, &others, &fc)?;
        let mut d = reference.depth.clone();
        for (v, n) in d.values.iter_mut().zip(&c.count) {
            if *n < needed {
                *v = 0.0;
            }
        }
        out.push(d);
    }
    create_dir(&cfg.output_dir.join("filtered"))?;
    for (i, d) in out.iter().enumerate() {
        write_pfm(&view_map_path(cfg, "filtered", i), d)?;
    }
    log::info!(
        "filter: kept {} of {} pixels",
        out.iter().map(DepthMap::valid_count).sum::<usize>(),
        est.depths.iter().map(DepthMap::valid_count).sum::<usize>()
    );
    Ok(out)
}

/// Fuses the inferred depth maps into `<output_dir>/fused.ply`.
pub fn fuse_stage(cfg: &PipelineConfig) -> Outcome<PointCloud> {
    validated(cfg)?;
    let est = load_estimates(cfg)?;
    let views: Vec<FuseView> = (0..est.depths.len())
        .map(|i| FuseView {
            depth: &est.depths[i],
            confidence: &est.confidences[i],
            camera: &est.cameras[i],
            image: &est.scene.views[i].image,
        })
        .collect();
    let cloud = fuse(&views, &cfg.filter())?.to_point_cloud();
    create_dir(&cfg.output_dir)?;
    write_ply(&cfg.output_dir.join("fused.ply"), &cloud)?;
    log::info!("fuse: {} points", cloud.len());
    Ok(cloud)
}

/// Compares the reconstruction against ground truth and writes the report
/// as a table and as key/value lines.
pub fn eval_stage(cfg: &PipelineConfig) -> Outcome<MetricReport> {
    validated(cfg)?;
    let recon_path = cfg.recon_path();
    require("reconstruction", &recon_path)?;
    let gt = if cfg.gt_ply.as_os_str().is_empty() {
        let scene = load_scene(cfg)?;
        let cloud = scene.ground_truth_cloud(cfg.gt_stride).ok_or_else(|| {
            Failure::Invalid(Error::InvalidArgument(format!(
                "no gt_ply given and {} has no ground-truth depths",
                cfg.scene_dir.display()
            )))
        })?;
        create_dir(&cfg.output_dir)?;
        write_ply(&cfg.output_dir.join("gt.ply"), &cloud)?;
        cloud
    } else {
        require("ground-truth cloud", &cfg.gt_ply)?;
        read_ply(&cfg.gt_ply)?
    };
    let recon = read_ply(&recon_path)?;
    let report = evaluate(&recon.positions, &gt.positions, &cfg.evaluation())?;
    create_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("report.txt"), &report.to_table())?;
    write_text(&cfg.output_dir.join("report.kv"), &report.to_key_values())?;
    log::info!("eval: overall {:.4}", report.overall);
    Ok(report)
}

/// synth, train, infer, filter, fuse and eval in sequence.
pub fn run_pipeline(cfg: &PipelineConfig) -> Outcome<MetricReport> {
    validated(cfg)?;
    create_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("config.txt"), &cfg.to_text())?;
    synth(cfg)?;
    train_stage(cfg)?;
    infer_stage(cfg)?;
    filter_stage(cfg)?;
    fuse_stage(cfg)?;
    eval_stage(cfg)
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Outcome<()> {
    match stage {
        Stage::Synth => synth(cfg).map(drop),
        Stage::Train => train_stage(cfg).map(drop),
        Stage::Infer => infer_stage(cfg).map(drop),
        Stage::Filter => filter_stage(cfg).map(drop),
        Stage::Fuse => fuse_stage(cfg).map(drop),
        Stage::Eval => eval_stage(cfg).map(drop),
        Stage::Pipeline => run_pipeline(cfg).map(drop),
    }
}
