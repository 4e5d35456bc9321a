//! Supervised training on scenes with ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{NormKind, TrainConfig};
use super::layers::{Binding, NormMode};
use super::model::{depth_loss, forward, Model, MvsInput};
use crate::error::{Error, Result};
use crate::geometry::{select_source_views, ViewSelectionParams};
use crate::scene::SceneBundle;
use crate::tensor::{Adam, AdamConfig, Tape, Tensor};

/// One reference view and its ordered source views within a scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    pub scene: usize,
    pub reference: usize,
    pub sources: Vec<usize>,
}

/// Samples for the given reference views with `views - 1` sources each,
/// chosen by view selection among `candidates`.
pub fn training_samples(
    scene_index: usize,
    scene: &SceneBundle,
    references: &[usize],
    candidates: &[usize],
    views: usize,
    selection: &ViewSelectionParams,
) -> Result<Vec<TrainingSample>> {
    let cams = scene.cameras();
    let allowed: Vec<_> = candidates.to_vec();
    references
        .iter()
        .map(|&r| {
            if r >= cams.len() {
                return Err(Error::InvalidArgument(format!(
                    "reference view {r} out of range"
                )));
            }
            // score every view, then keep the best candidates
            let ranked = select_source_views(r, &cams, &scene.tracks, cams.len() - 1, selection)?;
            let sources: Vec<usize> = ranked
                .into_iter()
                .filter(|v| allowed.contains(v))
                .take(views - 1)
                .collect();
            if sources.len() + 1 < views {
                return Err(Error::InvalidArgument(format!(
                    "reference view {r} has only {} candidate sources, need {}",
                    sources.len(),
                    views - 1
                )));
            }
            Ok(TrainingSample {
                scene: scene_index,
                reference: r,
                sources,
            })
        })
        .collect()
}

/// Network input plus quarter-resolution ground truth for one sample.
struct Prepared {
    input: MvsInput<f32>,
    gt: Tensor<f32>,
    mask: Vec<bool>,
}

fn prepare(scenes: &[SceneBundle], s: &TrainingSample) -> Result<Prepared> {
    let scene = scenes
        .get(s.scene)
        .ok_or_else(|| Error::InvalidArgument(format!("scene {} out of range", s.scene)))?;
    let gts = scene
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("training needs ground-truth depth maps".into()))?;
    let mut order = vec![s.reference];
    order.extend_from_slice(&s.sources);
    let views = order
        .iter()
        .map(|&i| {
            scene
                .views
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("view {i} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    let input = MvsInput::from_views(&views, scene.hypotheses)?;
    let gt = &gts[s.reference];
    let depth = gt.depth.subsample(4);
    let w = gt.depth.width;
    let mut mask = Vec::with_capacity(depth.values.len());
    for y in 0..depth.height {
        for x in 0..depth.width {
            mask.push(gt.mask[4 * y * w + 4 * x]);
        }
    }
    Ok(Prepared {
        input,
        gt: depth.to_tensor(),
        mask,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Total loss of every step, evaluated before that step's update.
    pub loss_history: Vec<f64>,
    /// Samples dropped for lacking valid ground-truth pixels.
    pub skipped: Vec<TrainingSample>,
}

/// Adam on randomly drawn samples; deterministic for a given seed.
pub fn train(
    model: &mut Model,
    scenes: &[SceneBundle],
    samples: &[TrainingSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    let mut prepared = Vec::with_capacity(samples.len());
    for s in samples {
        if s.sources.len() + 1 < 2 {
            return Err(Error::InvalidArgument(
                "every sample needs at least one source view".into(),
            ));
        }
        let p = prepare(scenes, s)?;
        if p.mask.iter().any(|&m| m) {
            prepared.push(p);
        } else {
            log::warn!(
                "skipping scene {} reference {}: no valid ground-truth pixels",
                s.scene,
                s.reference
            );
            report.skipped.push(s.clone());
        }
    }
    if prepared.is_empty() {
        return Err(Error::Empty(
            "no training sample has valid ground truth".into(),
        ));
    }

    let mode = match model.config.norm {
        NormKind::Batch => NormMode::Train {
            momentum: cfg.bn_momentum,
        },
        NormKind::Frozen => NormMode::Frozen,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::<f32>::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    });
    for step in 0..cfg.iterations {
        let p = &prepared[rng.gen_range(0..prepared.len())];
        let mut tape = Tape::new();
        let mut bind = Binding::new(&mut model.params, mode, true);
        let out = forward(&mut tape, &mut bind, &model.config, &p.input)?;
        let gt = tape.constant(p.gt.clone());
        let loss = depth_loss(&mut tape, gt, out.initial, out.refined, &p.mask, cfg.lambda)?;
        let value = tape.value(loss.total).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        tape.backward(loss.total)?;
        let grads = bind.gradients(&tape);
        drop(bind);
        adam.step(model.params.tensors.iter_mut().filter_map(|(name, t)| {
            grads
                .get(name)
                .map(|g| (name.as_str(), t.data_mut(), g.as_slice()))
        }))?;
        report.loss_history.push(value);
        if step % 50 == 0 || step + 1 == cfg.iterations {
            log::info!("step {step}: loss {value:.4}");
        }
    }
    Ok(report)
}

/// Mean loss over `samples` with inference-mode normalization. Samples
/// without valid pixels are ignored.
pub fn validation_loss(
    model: &Model,
    scenes: &[SceneBundle],
    samples: &[TrainingSample],
    lambda: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for s in samples {
        let p = prepare(scenes, s)?;
        if !p.mask.iter().any(|&m| m) {
            continue;
        }
        let mut params = model.params.clone();
        let mut bind = Binding::new(&mut params, model.eval_mode(), false);
        let mut tape = Tape::new();
        let out = forward(&mut tape, &mut bind, &model.config, &p.input)?;
        let gt = tape.constant(p.gt.clone());
        let loss = depth_loss(&mut tape, gt, out.initial, out.refined, &p.mask, lambda)?;
        total += tape.value(loss.total).data()[0] as f64;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty(
            "no validation sample has valid ground truth".into(),
        ));
    }
    Ok(total / count as f64)
}
