//! The depth network: feature tower, cost volume, 3D regularizer, depth
//! regression and residual refinement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{
    CostMetric, FeatureConfig, NetworkConfig, NormKind, RefinerConfig, RegularizerConfig,
};
use super::layers::{init_conv, init_conv_transpose, init_norm, Binding, NormMode};
use super::params::Params;
use crate::error::{Error, Result};
use crate::geometry::{warp_volume_on_tape, Camera, DepthHypotheses};
use crate::scene::{DepthMap, RgbImage, ScalarMap, View};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Feature maps are computed at this fraction of the image resolution.
pub const FEATURE_SCALE: f64 = 0.25;

pub fn init_params<T: Real>(cfg: &NetworkConfig, seed: u64) -> Result<Params<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::default();

    let layers = cfg.features.layers();
    let mut cin = 3;
    for (i, &(cout, k, _)) in layers.iter().enumerate() {
        let prefix = format!("feature.{i}");
        let last = i + 1 == layers.len();
        init_conv(&mut p, &mut rng, &prefix, cout, cin, &[k, k], last);
        if !last {
            init_norm(&mut p, &prefix, cout);
        }
        cin = cout;
    }

    let reg = &cfg.regularizer;
    let mut cin = cfg.features.out_channels();
    for s in 0..reg.scales {
        let c = reg.channels(s);
        for l in 0..reg.layers_per_scale {
            let prefix = format!("regularizer.enc{s}.{l}");
            init_conv(&mut p, &mut rng, &prefix, c, cin, &[3, 3, 3], false);
            init_norm(&mut p, &prefix, c);
            cin = c;
        }
    }
    for s in (1..reg.scales).rev() {
        let prefix = format!("regularizer.dec{s}");
        init_conv_transpose(
            &mut p,
            &mut rng,
            &prefix,
            reg.channels(s),
            reg.channels(s - 1),
            3,
        );
        init_norm(&mut p, &prefix, reg.channels(s - 1));
    }
    init_conv(
        &mut p,
        &mut rng,
        "regularizer.out",
        1,
        reg.channels(0),
        &[3, 3, 3],
        true,
    );

    if cfg.refinement {
        let rc = &cfg.refiner;
        let mut cin = 4;
        for i in 0..rc.layers {
            let prefix = format!("refiner.{i}");
            init_conv(&mut p, &mut rng, &prefix, rc.channels, cin, &[3, 3], false);
            init_norm(&mut p, &prefix, rc.channels);
            cin = rc.channels;
        }
        // zero residual at initialization
        p.init_const("refiner.out.weight".into(), &[1, rc.channels, 3, 3], 0.0);
        p.init_const("refiner.out.bias".into(), &[1], 0.0);
    }
    Ok(p)
}

fn divisibility(what: &str, value: usize, divisor: usize) -> Result<()> {
    if !value.is_multiple_of(divisor) {
        let padded = value.div_ceil(divisor) * divisor;
        return Err(Error::Shape(format!(
            "{what} {value} is not divisible by {divisor}; pad by {} to {padded}",
            padded - value
        )));
    }
    Ok(())
}

/// `[3, H, W]` image to `[F, H/4, W/4]` features.
pub fn extract_features<T: Real>(
    tape: &mut Tape<T>,
    bind: &mut Binding<'_, T>,
    image: Var,
    cfg: &FeatureConfig,
    divisor: usize,
) -> Result<Var> {
    let s = tape.shape(image).to_vec();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!("image must be [3, H, W], got {s:?}")));
    }
    divisibility("image height", s[1], divisor)?;
    divisibility("image width", s[2], divisor)?;
    let layers = cfg.layers();
    let mut x = image;
    for (i, &(_, _, stride)) in layers.iter().enumerate() {
        let prefix = format!("feature.{i}");
        x = if i + 1 == layers.len() {
            bind.conv2d(tape, x, &prefix, stride, true)?
        } else {
            bind.conv_bn_relu(tape, x, &prefix, stride, false)?
        };
    }
    Ok(x)
}

/// Warps every view's features onto the reference frustum and reduces them
/// with `metric`, giving `[F, D, h, w]`. The first entry is the reference.
pub fn build_cost_volume<T: Real>(
    tape: &mut Tape<T>,
    features: &[Var],
    cameras: &[Camera],
    depths: &[f64],
    metric: CostMetric,
) -> Result<Var> {
    if features.len() != cameras.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature maps for {} cameras",
            features.len(),
            cameras.len()
        )));
    }
    if features.len() < 2 {
        return Err(Error::InvalidArgument(
            "a cost volume needs at least two views".into(),
        ));
    }
    let reference = &cameras[0];
    let mut volumes = Vec::with_capacity(features.len());
    for (f, cam) in features.iter().zip(cameras) {
        // the reference warps onto itself through an exact identity homography
        volumes.push(warp_volume_on_tape(
            tape,
            *f,
            reference,
            cam,
            depths,
            FEATURE_SCALE,
        )?);
    }
    match metric {
        CostMetric::Variance => tape.variance_across(&volumes),
        CostMetric::Mean => tape.mean_across(&volumes),
    }
}

/// `[F, D, h, w]` cost volume to a `[D, h, w]` probability volume.
pub fn regularize<T: Real>(
    tape: &mut Tape<T>,
    bind: &mut Binding<'_, T>,
    cost: Var,
    cfg: &RegularizerConfig,
) -> Result<Var> {
    let s = tape.shape(cost).to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "cost volume must be [F, D, h, w], got {s:?}"
        )));
    }
    for (what, v) in [
        ("depth count", s[1]),
        ("volume height", s[2]),
        ("volume width", s[3]),
    ] {
        divisibility(what, v, cfg.divisor())?;
    }
    let mut skips = Vec::with_capacity(cfg.scales);
    let mut x = cost;
    for scale in 0..cfg.scales {
        for l in 0..cfg.layers_per_scale {
            let stride = if scale > 0 && l == 0 { 2 } else { 1 };
            x = bind.conv_bn_relu(
                tape,
                x,
                &format!("regularizer.enc{scale}.{l}"),
                stride,
                true,
            )?;
        }
        skips.push(x);
    }
    for scale in (1..cfg.scales).rev() {
        let prefix = format!("regularizer.dec{scale}");
        let up = bind.conv_transpose3d(tape, x, &prefix)?;
        let up = bind.norm(tape, up, &prefix)?;
        let up = tape.relu(up);
        x = tape.add(up, skips[scale - 1])?;
    }
    let logits = bind.conv3d(tape, x, "regularizer.out", 1, true)?;
    let logits = tape.reshape(logits, &s[1..])?;
    tape.softmax(logits, 0)
}

/// Probability-weighted depth `[h, w]`.
pub fn initial_depth<T: Real>(tape: &mut Tape<T>, prob: Var, hyp: &DepthHypotheses) -> Result<Var> {
    let depths: Vec<T> = hyp.samples().into_iter().map(T::of).collect();
    tape.expectation(prob, &depths)
}

/// Adds a learned residual to `initial` (`[h, w]`), guided by the
/// reference image `guide` (`[3, h, w]`). The depth is min-max scaled to
/// `[0, 1]` before the network and the residual scaled back after; a
/// constant map is fed as 0.5 and its residual is used unscaled.
pub fn refine_depth<T: Real>(
    tape: &mut Tape<T>,
    bind: &mut Binding<'_, T>,
    initial: Var,
    guide: Var,
    cfg: &RefinerConfig,
) -> Result<Var> {
    let ds = tape.shape(initial).to_vec();
    let gs = tape.shape(guide).to_vec();
    if ds.len() != 2 || gs.len() != 3 || gs[0] != 3 || gs[1..] != ds[..] {
        return Err(Error::Shape(format!(
            "refinement needs depth [h, w] and image [3, h, w], got {ds:?} and {gs:?}"
        )));
    }
    let lo = tape.min(initial);
    let hi = tape.max(initial);
    let (lo_v, hi_v) = (tape.value(lo).data()[0], tape.value(hi).data()[0]);
    let degenerate = !(hi_v - lo_v > T::epsilon() * hi_v.abs().max(T::one()));
    let (scaled, range) = if degenerate {
        (tape.constant(Tensor::full(&ds, T::of(0.5))), None)
    } else {
        let range = tape.sub(hi, lo)?;
        let inv = tape.recip(range);
        let centered = tape.sub(initial, lo)?;
        (tape.mul(centered, inv)?, Some(range))
    };
    let scaled = tape.reshape(scaled, &[1, ds[0], ds[1]])?;
    let mut x = tape.concat(&[scaled, guide])?;
    for i in 0..cfg.layers {
        x = bind.conv_bn_relu(tape, x, &format!("refiner.{i}"), 1, false)?;
    }
    let residual = bind.conv2d(tape, x, "refiner.out", 1, true)?;
    let residual = tape.reshape(residual, &ds)?;
    let residual = match range {
        Some(r) => tape.mul(residual, r)?,
        None => residual,
    };
    tape.add(initial, residual)
}

/// Loss terms recorded on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub initial: Var,
    pub refined: Option<Var>,
}

/// Masked L1 of the initial estimate plus `lambda` times that of the
/// refined estimate, when there is one.
pub fn depth_loss<T: Real>(
    tape: &mut Tape<T>,
    gt: Var,
    initial: Var,
    refined: Option<Var>,
    mask: &[bool],
    lambda: f64,
) -> Result<LossVars> {
    let l0 = tape.masked_l1(initial, gt, mask)?;
    let Some(refined) = refined else {
        return Ok(LossVars {
            total: l0,
            initial: l0,
            refined: None,
        });
    };
    let l1 = tape.masked_l1(refined, gt, mask)?;
    let weighted = tape.scale(l1, T::of(lambda));
    Ok(LossVars {
        total: tape.add(l0, weighted)?,
        initial: l0,
        refined: Some(l1),
    })
}

/// Per-channel zero-mean unit-variance image tensor `[3, H, W]`.
pub fn standardize<T: Real>(image: &RgbImage) -> Tensor<T> {
    let raw = image.to_tensor::<f64>();
    let plane = image.width * image.height;
    let mut out = Vec::with_capacity(3 * plane);
    for c in raw.data().chunks(plane) {
        let mean = c.iter().sum::<f64>() / plane as f64;
        let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
        out.extend(c.iter().map(|v| T::of((v - mean) * inv)));
    }
    Tensor::new(&[3, image.height, image.width], out).expect("same size")
}

/// `[3, H/4, W/4]` image in `[0, 1]` by 4x4 box averaging.
pub fn guide_image<T: Real>(image: &RgbImage) -> Tensor<T> {
    let (w, h) = (image.width / 4, image.height / 4);
    let mut out = vec![T::zero(); 3 * w * h];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..4 {
                    for dx in 0..4 {
                        acc += image.pixel(4 * x + dx, 4 * y + dy)[c] as f64;
                    }
                }
                out[(c * h + y) * w + x] = T::of(acc / (16.0 * 255.0));
            }
        }
    }
    Tensor::new(&[3, h, w], out).expect("same size")
}

/// Network inputs for one reference view; index 0 is the reference.
#[derive(Clone, Debug)]
pub struct MvsInput<T> {
    pub images: Vec<Tensor<T>>,
    pub cameras: Vec<Camera>,
    pub guide: Tensor<T>,
    pub hypotheses: DepthHypotheses,
}

impl<T: Real> MvsInput<T> {
    pub fn from_views(views: &[&View], hypotheses: DepthHypotheses) -> Result<Self> {
        let reference = views
            .first()
            .ok_or_else(|| Error::Empty("no views given".into()))?;
        let (w, h) = (reference.image.width, reference.image.height);
        if views
            .iter()
            .any(|v| (v.image.width, v.image.height) != (w, h))
        {
            return Err(Error::Shape("all views must share one image size".into()));
        }
        Ok(Self {
            images: views.iter().map(|v| standardize(&v.image)).collect(),
            cameras: views.iter().map(|v| v.camera.clone()).collect(),
            guide: guide_image(&reference.image),
            hypotheses,
        })
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub prob: Var,
    pub initial: Var,
    pub refined: Option<Var>,
}

pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    bind: &mut Binding<'_, T>,
    cfg: &NetworkConfig,
    input: &MvsInput<T>,
) -> Result<ForwardVars> {
    if input.images.len() != input.cameras.len() {
        return Err(Error::InvalidArgument(
            "one camera per image required".into(),
        ));
    }
    let mut features = Vec::with_capacity(input.images.len());
    for img in &input.images {
        let x = tape.constant(img.clone());
        features.push(extract_features(
            tape,
            bind,
            x,
            &cfg.features,
            cfg.image_divisor(),
        )?);
    }
    let depths = input.hypotheses.samples();
    let cost = build_cost_volume(tape, &features, &input.cameras, &depths, cfg.cost_metric)?;
    let prob = regularize(tape, bind, cost, &cfg.regularizer)?;
    let initial = initial_depth(tape, prob, &input.hypotheses)?;
    let refined = if cfg.refinement {
        let guide = tape.constant(input.guide.clone());
        Some(refine_depth(tape, bind, initial, guide, &cfg.refiner)?)
    } else {
        None
    };
    Ok(ForwardVars {
        prob,
        initial,
        refined,
    })
}

/// Trained network: configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub params: Params<f32>,
}

/// Quarter-resolution output for one reference view.
#[derive(Clone, Debug)]
pub struct Inference {
    /// Refined depth when refinement is enabled, else the initial depth.
    pub depth: DepthMap,
    pub initial: DepthMap,
    /// `[D, h, w]`.
    pub probability: Tensor<f32>,
}

impl Model {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Wraps loaded parameters after checking they fit `config`.
    pub fn from_params(config: NetworkConfig, params: Params<f32>) -> Result<Self> {
        init_params::<f32>(&config, 0)?.check_layout(&params)?;
        Ok(Self { config, params })
    }

    pub fn eval_mode(&self) -> NormMode {
        match self.config.norm {
            NormKind::Batch => NormMode::Eval,
            NormKind::Frozen => NormMode::Frozen,
        }
    }

    /// Depth for `views[0]` using every other entry as a source; any number
    /// of sources works.
    pub fn infer(&self, views: &[&View], hypotheses: DepthHypotheses) -> Result<Inference> {
        if views.len() < 2 {
            return Err(Error::InvalidArgument(
                "inference needs a reference and at least one source".into(),
            ));
        }
        let input = MvsInput::<f32>::from_views(views, hypotheses)?;
        let mut params = self.params.clone();
        let mut bind = Binding::new(&mut params, self.eval_mode(), false);
        let mut tape = Tape::new();
        let out = forward(&mut tape, &mut bind, &self.config, &input)?;
        let initial = ScalarMap::from_tensor(tape.value(out.initial))?;
        let depth = match out.refined {
            Some(r) => {
                // the residual may push past the swept range; keep estimates inside it
                let mut d = ScalarMap::from_tensor(tape.value(r))?;
                let (lo, hi) = (hypotheses.d_min, hypotheses.d_max());
                d.values.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
                d
            }
            None => initial.clone(),
        };
        Ok(Inference {
            depth,
            initial,
            probability: tape.value(out.prob).clone(),
        })
    }
}
