//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Norm, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Step and absolute floor for [`check_gradient`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Denominator floor in the relative error, so that near-zero gradients
    /// are compared on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element)` where the maximum was attained.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares the tape gradient of the scalar `f(inputs)` against
/// `(f(x + h) - f(x - h)) / 2h` for every element of the inputs listed in
/// `wrt`, and returns the maximum of `|a - n| / max(|a|, |n|, floor)`.
pub fn check_gradient<F>(
    f: F,
    inputs: &[Tensor<f64>],
    wrt: &[usize],
    cfg: GradCheck,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.leaf(t.clone(), wrt.contains(&i)))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::InvalidArgument(
            "gradient check needs a scalar function".into(),
        ));
    }
    tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for &i in wrt {
        let n = inputs[i].numel();
        let analytic = tape
            .grad(vars[i])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        for e in 0..n {
            let x0 = inputs[i].data()[e];
            probe[i].data_mut()[e] = x0 + cfg.step;
            let plus = eval(&probe)?;
            probe[i].data_mut()[e] = x0 - cfg.step;
            let minus = eval(&probe)?;
            probe[i].data_mut()[e] = x0;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = (i, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// `sum(y * r)` for a fixed random `r`, so every output element carries a
/// distinct weight into the scalar.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let r = tape.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

type Case = (
    &'static str,
    Vec<Tensor<f64>>,
    Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>,
);

/// Checks every differentiable tape operation on random inputs drawn from
/// `seed`, each wrt all of its inputs. Returns one report per case.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = seed ^ 0x9e37_79b9;
    let mut mask: Vec<bool> = (0..12).map(|_| rng.gen_bool(0.6)).collect();
    mask[0] = true;
    let depths: Vec<f64> = (0..4).map(|i| 2.0 + 0.5 * i as f64).collect();
    // relu inputs stay away from the kink
    let relu_in = Tensor::from_fn(&[2, 3, 4], |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let mut cases: Vec<Case> = vec![
        (
            "conv2d",
            vec![
                uniform(&mut rng, &[2, 5, 6], -1.0, 1.0),
                uniform(&mut rng, &[3, 2, 3, 3], -1.0, 1.0),
                uniform(&mut rng, &[3], -1.0, 1.0),
            ],
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 1)?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "conv2d_stride2",
            vec![
                uniform(&mut rng, &[2, 8, 6], -1.0, 1.0),
                uniform(&mut rng, &[3, 2, 5, 5], -1.0, 1.0),
                uniform(&mut rng, &[3], -1.0, 1.0),
            ],
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 2)?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "conv3d",
            vec![
                uniform(&mut rng, &[2, 4, 4, 6], -1.0, 1.0),
                uniform(&mut rng, &[2, 2, 3, 3, 3], -1.0, 1.0),
                uniform(&mut rng, &[2], -1.0, 1.0),
            ],
            Box::new(move |t, v| {
                let y = t.conv3d(v[0], v[1], Some(v[2]), 2)?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "conv_transpose2d",
            vec![
                uniform(&mut rng, &[2, 3, 3], -1.0, 1.0),
                uniform(&mut rng, &[2, 3, 3, 3], -1.0, 1.0),
            ],
            Box::new(move |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], 2)?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "conv_transpose3d",
            vec![
                uniform(&mut rng, &[2, 2, 3, 3], -1.0, 1.0),
                uniform(&mut rng, &[2, 2, 3, 3, 3], -1.0, 1.0),
            ],
            Box::new(move |t, v| {
                let y = t.conv_transpose3d(v[0], v[1], 2)?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "batch_norm",
            vec![
                uniform(&mut rng, &[3, 4, 5], -2.0, 2.0),
                uniform(&mut rng, &[3], 0.5, 1.5),
                uniform(&mut rng, &[3], -1.0, 1.0),
            ],
            Box::new(move |t, v| {
                let y = t.batch_norm(v[0], v[1], v[2], Norm::Batch)?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "batch_norm_eval",
            vec![
                uniform(&mut rng, &[3, 4, 5], -2.0, 2.0),
                uniform(&mut rng, &[3], 0.5, 1.5),
                uniform(&mut rng, &[3], -1.0, 1.0),
            ],
            Box::new(move |t, v| {
                let y = t.batch_norm(
                    v[0],
                    v[1],
                    v[2],
                    Norm::Eval {
                        running_mean: &[0.1, -0.2, 0.3],
                        running_var: &[0.5, 1.5, 2.0],
                    },
                )?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "relu",
            vec![relu_in],
            Box::new(move |t, v| {
                let y = t.relu(v[0]);
                weighted_sum(t, y, w)
            }),
        ),
        (
            "bilinear_sample",
            // a margin past the border exercises the zero-padded neighbors
            vec![uniform(&mut rng, &[2, 5, 6], -1.0, 1.0), {
                let mut c = uniform(&mut rng, &[2, 3, 4], -0.6, 4.6);
                let half = c.numel() / 2;
                c.data_mut()[..half]
                    .iter_mut()
                    .for_each(|x| *x = *x / 4.6 * 5.6);
                c
            }],
            Box::new(move |t, v| {
                let y = t.bilinear_sample(v[0], v[1])?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "variance_across",
            (0..3)
                .map(|_| uniform(&mut rng, &[2, 3, 4], -1.0, 1.0))
                .collect(),
            Box::new(move |t, v| {
                let y = t.variance_across(v)?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "mean_across",
            (0..3)
                .map(|_| uniform(&mut rng, &[2, 3, 4], -1.0, 1.0))
                .collect(),
            Box::new(move |t, v| {
                let y = t.mean_across(v)?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "softmax",
            vec![uniform(&mut rng, &[4, 3, 3], -2.0, 2.0)],
            Box::new(move |t, v| {
                let y = t.softmax(v[0], 0)?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "expectation",
            vec![uniform(&mut rng, &[4, 3, 4], -2.0, 2.0)],
            Box::new(move |t, v| {
                let p = t.softmax(v[0], 0)?;
                let y = t.expectation(p, &depths)?;
                weighted_sum(t, y, w)
            }),
        ),
        (
            "masked_l1",
            vec![
                uniform(&mut rng, &[3, 4], -1.0, 1.0),
                uniform(&mut rng, &[3, 4], -1.0, 1.0),
            ],
            Box::new(move |t, v| t.masked_l1(v[0], v[1], &mask)),
        ),
    ];
    cases
        .drain(..)
        .map(|(name, inputs, f)| {
            let wrt: Vec<usize> = (0..inputs.len()).collect();
            check_gradient(f, &inputs, &wrt, GradCheck::default()).map(|r| (name, r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact_up_to_rounding() {
        let x = Tensor::from_fn(&[5], |i| i as f64 * 0.3 - 0.7);
        let report = check_gradient(
            |t, v| {
                let s = t.scale(v[0], 2.5);
                Ok(t.sum(s))
            },
            &[x],
            &[0],
            GradCheck::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9);
        assert_eq!(report.checked, 5);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu probed at a kink: the analytic subgradient (0) disagrees with
        // the one-sided slope picked up by central differences.
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        let report = check_gradient(
            |t, v| {
                let r = t.relu(v[0]);
                Ok(t.sum(r))
            },
            &[x],
            &[0],
            GradCheck::default(),
        )
        .unwrap();
        assert!(report.max_rel_error > 0.1);
    }

    #[test]
    fn op_suite_passes_for_one_seed() {
        for (name, r) in op_suite(0).unwrap() {
            assert!(r.max_rel_error < 1e-4, "{name}: {r:?}");
            assert!(r.checked > 0);
        }
    }
}
