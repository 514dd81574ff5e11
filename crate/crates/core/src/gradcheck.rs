//! Central finite-difference verification of analytic gradients, run in
//! 64-bit precision.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// How the (possibly non-scalar) op output is reduced to a scalar objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// `Σ out`
    Ones,
    /// `Σ w ⊙ out` with `w ~ U(-1, 1)` from the given seed.
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    /// Central-difference half step. A power of two keeps perturbations exact.
    pub step: f64,
    pub projection: Projection,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1.0 / 131_072.0,
            projection: Projection::Random(0x5eed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Per input: `max |analytic - numeric| / max(max |analytic|, max |numeric|)`.
    pub max_rel_error: Vec<f64>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|&e| e < self.tolerance)
    }
}

/// Compares the gradient of `Σ w ⊙ op(inputs)` with respect to every input
/// against central differences. Failures are reported, not returned as
/// errors; `Err` only surfaces when `op` itself fails.
pub fn finite_difference_gradcheck<F>(op: F, inputs: &[Tensor<f64>], tolerance: f64, opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = op(&mut g, &vars)?;
    let n_out = g.value(out).len();
    let weights: Vec<f64> = match opts.projection {
        Projection::Ones => alloc::vec![1.0; n_out],
        Projection::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect()
        }
    };
    g.backward_with(out, weights.clone())?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| alloc::vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let objective = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = op(&mut g, &vars)?;
        Ok(g.value(out).data().iter().zip(&weights).map(|(a, b)| a * b).sum())
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = Vec::with_capacity(inputs.len());
    for (i, a) in analytic.iter().enumerate() {
        let mut max_diff = 0.0f64;
        let mut scale = 1e-300f64;
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + opts.step;
            let plus = objective(&work)?;
            work[i].data_mut()[j] = x0 - opts.step;
            let minus = objective(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * opts.step);
            max_diff = max_diff.max((a[j] - numeric).abs());
            scale = scale.max(a[j].abs()).max(numeric.abs());
        }
        report.push(max_diff / scale);
    }
    Ok(GradcheckReport {
        max_rel_error: report,
        tolerance,
    })
}
/// One op checked on one random instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub op: &'static str,
    pub instance: usize,
    pub report: GradcheckReport,
}

/// Names of the ops covered by [`standard_suite`], in report order.
pub const SUITE_OPS: [&str; 9] = [
    "conv2d",
    "batch_norm_train",
    "batch_norm_infer",
    "prelu",
    "avg_pool",
    "concat",
    "sub",
    "softmax_cross_entropy",
    "remnant_composite",
];

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("length matches shape")
}

/// Values bounded away from zero, so piecewise-linear ops are smooth within
/// one finite-difference step.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Checks every differentiable op on `instances` random small inputs each.
pub fn standard_suite(instances: usize, seed: u64, tolerance: f64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradcheckOptions::default();
    let eps = 1e-5;
    let mut out = Vec::new();
    for op in SUITE_OPS {
        for instance in 0..instances {
            let b = rng.random_range(1..=2usize);
            let h = rng.random_range(2..=5usize);
            let w = rng.random_range(2..=5usize);
            let c = rng.random_range(1..=3usize);
            let report = match op {
                "conv2d" => {
                    let k = rng.random_range(1..=3usize);
                    let cout = rng.random_range(1..=3usize);
                    let stride = rng.random_range(1..=2usize);
                    let inputs = [
                        uniform(&mut rng, &[b, h, w, c], -1.0, 1.0),
                        uniform(&mut rng, &[k, k, c, cout], -1.0, 1.0),
                        uniform(&mut rng, &[cout], -1.0, 1.0),
                    ];
                    finite_difference_gradcheck(|g, v| g.conv2d(v[0], v[1], v[2], stride), &inputs, tolerance, opts)?
                }
                "batch_norm_train" => {
                    let inputs = [
                        uniform(&mut rng, &[b + 1, h, w, c], -1.0, 1.0),
                        uniform(&mut rng, &[c], 0.5, 1.5),
                        uniform(&mut rng, &[c], -0.5, 0.5),
                    ];
                    finite_difference_gradcheck(|g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], eps)?.0), &inputs, tolerance, opts)?
                }
                "batch_norm_infer" => {
                    let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
                    let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
                    let inputs = [
                        uniform(&mut rng, &[b, h, w, c], -1.0, 1.0),
                        uniform(&mut rng, &[c], 0.5, 1.5),
                        uniform(&mut rng, &[c], -0.5, 0.5),
                    ];
                    finite_difference_gradcheck(|g, v| g.batch_norm_infer(v[0], v[1], v[2], &mean, &var, eps), &inputs, tolerance, opts)?
                }
                "prelu" => {
                    let inputs = [away_from_zero(&mut rng, &[b, h, w, c]), uniform(&mut rng, &[c], 0.05, 0.5)];
                    finite_difference_gradcheck(|g, v| g.prelu(v[0], v[1]), &inputs, tolerance, opts)?
                }
                "avg_pool" => {
                    let k = rng.random_range(1..=3usize);
                    let (ph, pw) = (k * rng.random_range(1..=2usize), k * rng.random_range(1..=2usize));
                    let inputs = [uniform(&mut rng, &[b, ph, pw, c], -1.0, 1.0)];
                    finite_difference_gradcheck(|g, v| g.avg_pool(v[0], k), &inputs, tolerance, opts)?
                }
                "concat" => {
                    let c2 = rng.random_range(1..=3usize);
                    let inputs = [uniform(&mut rng, &[b, h, w, c], -1.0, 1.0), uniform(&mut rng, &[b, h, w, c2], -1.0, 1.0)];
                    finite_difference_gradcheck(|g, v| g.concat(v[0], v[1]), &inputs, tolerance, opts)?
                }
                "sub" => {
                    let inputs = [uniform(&mut rng, &[b, h, w, c], -1.0, 1.0), uniform(&mut rng, &[b, h, w, c], -1.0, 1.0)];
                    finite_difference_gradcheck(|g, v| g.sub(v[0], v[1]), &inputs, tolerance, opts)?
                }
                "softmax_cross_entropy" => {
                    let n_class = rng.random_range(2..=5usize);
                    let rows = b + h;
                    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..n_class)).collect();
                    let inputs = [uniform(&mut rng, &[rows, n_class], -2.0, 2.0)];
                    finite_difference_gradcheck(|g, v| Ok(g.softmax_cross_entropy(v[0], &labels)?.0), &inputs, tolerance, opts)?
                }
                "remnant_composite" => {
                    // x - BN(conv(concat(x, BN(conv(x))))) with unit BN
                    // affine parameters fed as inputs
                    let f = rng.random_range(1..=3usize);
                    let inputs = [
                        uniform(&mut rng, &[b + 1, h, w, c], -1.0, 1.0),
                        uniform(&mut rng, &[3, 3, c, f], -0.5, 0.5),
                        uniform(&mut rng, &[3, 3, c + f, c], -0.5, 0.5),
                    ];
                    let op = |g: &mut Graph<f64>, v: &[Var]| -> Result<Var> {
                        let ones = |g: &mut Graph<f64>, n: usize| g.leaf(Tensor::full(&[n], 1.0), false);
                        let zeros = |g: &mut Graph<f64>, n: usize| g.leaf(Tensor::zeros(&[n]), false);
                        let (g1, b1, z1) = (ones(g, f), zeros(g, f), zeros(g, f));
                        let (g2, b2, z2) = (ones(g, c), zeros(g, c), zeros(g, c));
                        let h1 = g.conv2d(v[0], v[1], z1, 1)?;
                        let (h1, _) = g.batch_norm_train(h1, g1, b1, eps)?;
                        let cat = g.concat(v[0], h1)?;
                        let h2 = g.conv2d(cat, v[2], z2, 1)?;
                        let (h2, _) = g.batch_norm_train(h2, g2, b2, eps)?;
                        g.sub(v[0], h2)
                    };
                    finite_difference_gradcheck(op, &inputs, tolerance, opts)?
                }
                _ => unreachable!(),
            };
            out.push(SuiteEntry { op, instance, report });
        }
    }
    Ok(out)
}
