//! Central finite-difference checks of the analytic network gradients.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::neural::{Head, Mlp, HIDDEN};
use crate::rng::{stream_rng, Stream};

pub const FD_STEP: f64 = 1e-5;
/// Coordinates whose finite difference is smaller than this are skipped.
pub const FD_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GradcheckResult {
    pub max_param_rel_error: f64,
    pub max_input_rel_error: f64,
    pub checked: usize,
    pub kinks: usize,
}

impl GradcheckResult {
    pub fn max_rel_error(&self) -> f64 {
        self.max_param_rel_error.max(self.max_input_rel_error)
    }

    fn merge(self, other: Self) -> Self {
        Self {
            max_param_rel_error: self.max_param_rel_error.max(other.max_param_rel_error),
            max_input_rel_error: self.max_input_rel_error.max(other.max_input_rel_error),
            checked: self.checked + other.checked,
            kinks: self.kinks + other.kinks,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, kink: bool, param: bool) {
        if kink {
            self.kinks += 1;
            return;
        }
        if numeric.abs() <= FD_FLOOR {
            return;
        }
        let err = rel_error(analytic, numeric);
        if param {
            self.max_param_rel_error = self.max_param_rel_error.max(err);
        } else {
            self.max_input_rel_error = self.max_input_rel_error.max(err);
        }
        self.checked += 1;
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
}

/// Plain-loop evaluator used for the finite differences, independent of the
/// batched matrix path it checks. Returns `L = wᵀ·net(x)` and the ReLU
/// activation pattern of the second hidden layer.
struct Probe {
    h1: Vec<f64>,
    h2: Vec<f64>,
    z: Vec<f64>,
    pattern: Vec<bool>,
}

impl Probe {
    fn new(out: usize) -> Self {
        Self {
            h1: vec![0.0; HIDDEN],
            h2: vec![0.0; HIDDEN],
            z: vec![0.0; out],
            pattern: vec![false; HIDDEN],
        }
    }

    fn eval(&mut self, net: &Mlp, x: &[f64], mask: Option<&[bool]>, weights: &[f64]) -> f64 {
        let p = net.params();
        let (inp, out) = (net.input_len(), net.output_len());
        let b1 = HIDDEN * inp;
        let w2 = b1 + HIDDEN;
        let b2 = w2 + HIDDEN * HIDDEN;
        let w3 = b2 + HIDDEN;
        let b3 = w3 + out * HIDDEN;
        for j in 0..HIDDEN {
            let row = &p[j * inp..(j + 1) * inp];
            let acc: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            self.h1[j] = (acc + p[b1 + j]).tanh();
        }
        for j in 0..HIDDEN {
            let row = &p[w2 + j * HIDDEN..w2 + (j + 1) * HIDDEN];
            let acc: f64 = row.iter().zip(&self.h1).map(|(a, b)| a * b).sum();
            let z = acc + p[b2 + j];
            self.pattern[j] = z > 0.0;
            self.h2[j] = z.max(0.0);
        }
        for j in 0..out {
            let row = &p[w3 + j * HIDDEN..w3 + (j + 1) * HIDDEN];
            let acc: f64 = row.iter().zip(&self.h2).map(|(a, b)| a * b).sum();
            self.z[j] = acc + p[b3 + j];
        }
        match net.head() {
            Head::Linear => {}
            Head::SoftmaxBlocks { block } => {
                for (b, chunk) in self.z.chunks_mut(*block).enumerate() {
                    let valid = |k: usize| mask.is_none_or(|m| m[b * block + k]);
                    let mut max = f64::NEG_INFINITY;
                    for (k, v) in chunk.iter().enumerate() {
                        if valid(k) {
                            max = max.max(*v);
                        }
                    }
                    let mut sum = 0.0;
                    for (k, v) in chunk.iter_mut().enumerate() {
                        *v = if valid(k) { (*v - max).exp() } else { 0.0 };
                        sum += *v;
                    }
                    chunk.iter_mut().for_each(|v| *v /= sum);
                }
            }
            Head::BoundedAffine { lower, upper } => {
                for (k, v) in self.z.iter_mut().enumerate() {
                    *v = lower[k] + (upper[k] - lower[k]) / (1.0 + (-*v).exp());
                }
            }
        }
        self.z.iter().zip(weights).map(|(a, b)| a * b).sum()
    }
}

/// Compares analytic parameter and input gradients of `L = wᵀ·net(x)`
/// against central differences with step [`FD_STEP`].
///
/// A coordinate whose stencil flips a ReLU unit straddles a kink, where the
/// map is not differentiable; such coordinates are counted in `kinks` and
/// not compared.
pub fn check_case(
    net: &Mlp,
    x: &[f64],
    mask: Option<&[bool]>,
    weights: &[f64],
) -> Result<GradcheckResult> {
    let xv = ArrayView2::from_shape((1, x.len()), x)
        .map_err(|e| Error::validation("input", e.to_string()))?;
    let masks = mask.map(|m| vec![m.to_vec()]);
    let cache = net.forward_batch(xv, masks.as_deref())?;
    let upstream = Array2::from_shape_vec((1, weights.len()), weights.to_vec())
        .map_err(|e| Error::validation("weights", e.to_string()))?;
    let (g_params, g_input) = net.backward(&cache, upstream.view())?;

    let mut probe = Probe::new(net.output_len());
    probe.eval(net, x, mask, weights);
    let base_pattern = probe.pattern.clone();
    let mut out = GradcheckResult::default();

    let mut work = net.clone();
    for k in 0..net.params().len() {
        let orig = net.params()[k];
        work.params_mut()[k] = orig + FD_STEP;
        let hi = probe.eval(&work, x, mask, weights);
        let kink = probe.pattern != base_pattern;
        work.params_mut()[k] = orig - FD_STEP;
        let lo = probe.eval(&work, x, mask, weights);
        let kink = kink || probe.pattern != base_pattern;
        work.params_mut()[k] = orig;
        out.record(g_params[k], (hi - lo) / (2.0 * FD_STEP), kink, true);
    }

    let mut xs = x.to_vec();
    for k in 0..x.len() {
        xs[k] = x[k] + FD_STEP;
        let hi = probe.eval(net, &xs, mask, weights);
        let kink = probe.pattern != base_pattern;
        xs[k] = x[k] - FD_STEP;
        let lo = probe.eval(net, &xs, mask, weights);
        let kink = kink || probe.pattern != base_pattern;
        xs[k] = x[k];
        out.record(g_input[[0, k]], (hi - lo) / (2.0 * FD_STEP), kink, false);
    }
    Ok(out)
}

/// Network shapes exercised by [`run_suite`].
#[derive(Debug, Clone, Copy)]
pub struct SuiteShape {
    pub obs_len: usize,
    pub block: usize,
    pub critic_input: usize,
}

impl Default for SuiteShape {
    /// Sizes of a 4×4 grid.
    fn default() -> Self {
        Self {
            obs_len: 34,
            block: 5,
            critic_input: 16 * 6 + 1 + 16 * 10 + 16 * 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SuiteReport {
    pub region: GradcheckResult,
    pub adversary: GradcheckResult,
    pub critic: GradcheckResult,
    pub cases: usize,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.region
            .max_rel_error()
            .max(self.adversary.max_rel_error())
            .max(self.critic.max_rel_error())
    }
}

/// Runs `cases` random (network, input) pairs for each of the region policy,
/// adversary policy, and critic.
pub fn run_suite(cases: usize, seed: u64, shape: SuiteShape) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        cases,
        ..Default::default()
    };
    for case in 0..cases {
        let mut rng = stream_rng(seed, Stream::Gradcheck, case as u64);
        let input = |rng: &mut crate::rng::SimRng, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
        };
        let weights = |rng: &mut crate::rng::SimRng, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
        };

        let out = 2 * shape.block;
        let region = Mlp::init(shape.obs_len, out, Head::SoftmaxBlocks { block: shape.block }, &mut rng)?;
        let mut mask: Vec<bool> = (0..out).map(|_| rng.random_bool(0.8)).collect();
        // the stay slot of each block is always valid
        mask[shape.block - 1] = true;
        mask[out - 1] = true;
        let x = input(&mut rng, shape.obs_len);
        let w = weights(&mut rng, out);
        report.region = report.region.merge(check_case(&region, &x, Some(&mask), &w)?);

        let adversary = Mlp::init(
            shape.obs_len,
            3,
            Head::BoundedAffine {
                lower: vec![-0.3, -0.2, -0.2],
                upper: vec![0.3, 0.2, 0.2],
            },
            &mut rng,
        )?;
        let x = input(&mut rng, shape.obs_len);
        let w = weights(&mut rng, 3);
        report.adversary = report.adversary.merge(check_case(&adversary, &x, None, &w)?);

        let critic = Mlp::init(shape.critic_input, 1, Head::Linear, &mut rng)?;
        let x = input(&mut rng, shape.critic_input);
        let w = weights(&mut rng, 1);
        report.critic = report.critic.merge(check_case(&critic, &x, None, &w)?);
    }
    Ok(report)
}
