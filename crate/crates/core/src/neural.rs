//! Dense networks with two hidden layers (Tanh, then ReLU), hand-written
//! reverse-mode gradients, Adam, and soft target blending.
//!
//! Parameters live in one flat vector laid out as
//! `W1 (h×in) | b1 | W2 (h×h) | b2 | W3 (out×h) | b3`, all row-major.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIDDEN: usize = 30;

/// Output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Linear,
    /// Independent softmax over consecutive blocks of `block` outputs.
    /// Masked entries (see [`Mlp::forward_batch`]) are excluded and emit 0.
    SoftmaxBlocks { block: usize },
    /// `lower + (upper − lower)·σ(z)` per coordinate.
    BoundedAffine { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    input: usize,
    output: usize,
    head: Head,
    params: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    hidden1: Array2<f64>,
    hidden2: Array2<f64>,
    /// Head outputs, one row per input row.
    pub output: Array2<f64>,
}

impl Mlp {
    pub fn param_count(input: usize, output: usize) -> usize {
        input * HIDDEN + HIDDEN + HIDDEN * HIDDEN + HIDDEN + HIDDEN * output + output
    }

    /// A network with all parameters zero.
    pub fn zeros(input: usize, output: usize, head: Head) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::validation("mlp", "input and output sizes must be >= 1"));
        }
        match &head {
            Head::SoftmaxBlocks { block } if *block == 0 || !output.is_multiple_of(*block) => {
                return Err(Error::validation(
                    "head",
                    format!("output {output} is not a multiple of block {block}"),
                ));
            }
            Head::BoundedAffine { lower, upper } => {
                if lower.len() != output || upper.len() != output {
                    return Err(Error::validation("head", "bounds must match output size"));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::validation("head", "need lower <= upper"));
                }
            }
            _ => {}
        }
        Ok(Self {
            input,
            output,
            head,
            params: vec![0.0; Self::param_count(input, output)],
        })
    }

    /// Uniform initialization in `±1/√fan_in` per layer.
    pub fn init<R: Rng>(input: usize, output: usize, head: Head, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(input, output, head)?;
        let fans = [
            (input * HIDDEN + HIDDEN, input),
            (HIDDEN * HIDDEN + HIDDEN, HIDDEN),
            (HIDDEN * output + output, HIDDEN),
        ];
        let mut offset = 0;
        for (len, fan_in) in fans {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + len] {
                *p = rng.random_range(-bound..=bound);
            }
            offset += len;
        }
        Ok(net)
    }

    pub fn input_len(&self) -> usize {
        self.input
    }

    pub fn output_len(&self) -> usize {
        self.output
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::validation(
                "params",
                format!("expected {} values, got {}", self.params.len(), params.len()),
            ));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Same architecture and head.
    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.input == other.input && self.output == other.output && self.head == other.head
    }

    fn offsets(&self) -> [usize; 6] {
        let w1 = 0;
        let b1 = w1 + HIDDEN * self.input;
        let w2 = b1 + HIDDEN;
        let b2 = w2 + HIDDEN * HIDDEN;
        let w3 = b2 + HIDDEN;
        let b3 = w3 + self.output * HIDDEN;
        [w1, b1, w2, b2, w3, b3]
    }

    fn layers<'a>(&self, p: &'a [f64]) -> Layers<'a> {
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let mat = |start: usize, rows: usize, cols: usize| {
            ArrayView2::from_shape((rows, cols), &p[start..start + rows * cols]).expect("layout")
        };
        Layers {
            w1: mat(w1, HIDDEN, self.input),
            b1: ArrayView1::from(&p[b1..w2]),
            w2: mat(w2, HIDDEN, HIDDEN),
            b2: ArrayView1::from(&p[b2..w3]),
            w3: mat(w3, self.output, HIDDEN),
            b3: ArrayView1::from(&p[b3..b3 + self.output]),
        }
    }

    /// Evaluates one input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_masked(x, None)
    }

    pub fn forward_masked(&self, x: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::validation("input", e.to_string()))?;
        let masks = mask.map(|m| vec![m.to_vec()]);
        Ok(self.predict_batch(view, masks.as_deref())?.row(0).to_vec())
    }

    /// Evaluates a batch, one input per row, keeping activations for
    /// [`Mlp::backward_into`].
    ///
    /// For softmax heads, `masks` marks valid outputs; row `r` uses
    /// `masks[r % masks.len()]`, so a batch laid out as consecutive groups of
    /// regions can pass one mask per region.
    pub fn forward_batch(
        &self,
        x: ArrayView2<'_, f64>,
        masks: Option<&[Vec<bool>]>,
    ) -> Result<ForwardCache> {
        let (hidden1, hidden2, output) = self.layers_forward(x, masks)?;
        Ok(ForwardCache {
            input: x.to_owned(),
            hidden1,
            hidden2,
            output,
        })
    }

    /// Head outputs of a batch without keeping activations.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>, masks: Option<&[Vec<bool>]>) -> Result<Array2<f64>> {
        Ok(self.layers_forward(x, masks)?.2)
    }

    fn layers_forward(
        &self,
        x: ArrayView2<'_, f64>,
        masks: Option<&[Vec<bool>]>,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        if x.ncols() != self.input {
            return Err(Error::validation(
                "input",
                format!("expected {} features, got {}", self.input, x.ncols()),
            ));
        }
        if let Some(m) = masks {
            if m.is_empty() || m.iter().any(|row| row.len() != self.output) {
                return Err(Error::validation("mask", "masks must match the output size"));
            }
        }
        let l = self.layers(&self.params);

        let mut hidden1 = x.dot(&l.w1.t());
        for mut row in hidden1.rows_mut() {
            for (h, b) in row.iter_mut().zip(l.b1) {
                *h = fast_tanh(*h + b);
            }
        }
        let mut hidden2 = hidden1.dot(&l.w2.t());
        for mut row in hidden2.rows_mut() {
            for (h, b) in row.iter_mut().zip(l.b2) {
                *h = (*h + b).max(0.0);
            }
        }
        let mut output = hidden2.dot(&l.w3.t());
        output += &l.b3;
        self.apply_head(&mut output, masks);
        Ok((hidden1, hidden2, output))
    }

    fn apply_head(&self, z: &mut Array2<f64>, masks: Option<&[Vec<bool>]>) {
        match &self.head {
            Head::Linear => {}
            Head::SoftmaxBlocks { block } => {
                for (r, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
                    let mask = masks.map(|m| m[r % m.len()].as_slice());
                    let row = row.as_slice_mut().expect("row-major");
                    for (b, chunk) in row.chunks_mut(*block).enumerate() {
                        let valid = |k: usize| mask.is_none_or(|m| m[b * block + k]);
                        let max = (0..*block)
                            .filter(|&k| valid(k))
                            .map(|k| chunk[k])
                            .fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for (k, v) in chunk.iter_mut().enumerate() {
                            if valid(k) {
                                *v = (*v - max).exp();
                                sum += *v;
                            } else {
                                *v = 0.0;
                            }
                        }
                        if sum > 0.0 {
                            chunk.iter_mut().for_each(|v| *v /= sum);
                        }
                    }
                }
            }
            Head::BoundedAffine { lower, upper } => {
                for mut row in z.axis_iter_mut(Axis(0)) {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = lower[k] + (upper[k] - lower[k]) * sigmoid(*v);
                    }
                }
            }
        }
    }

    /// Reverse-mode pass for `upstream = ∂L/∂output`.
    ///
    /// Returns the parameter gradient summed over the batch and the gradient
    /// with respect to every input row.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let dx = self.backward_into(cache, upstream, &mut grad, true)?;
        Ok((grad, dx.expect("input gradient requested")))
    }

    /// Like [`Self::backward`], accumulating into `grad` and optionally
    /// skipping the input gradient.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
        grad: &mut [f64],
        want_input: bool,
    ) -> Result<Option<Array2<f64>>> {
        let rows = cache.output.nrows();
        if upstream.dim() != (rows, self.output) {
            return Err(Error::validation(
                "upstream",
                format!("expected shape ({rows}, {}), got {:?}", self.output, upstream.dim()),
            ));
        }
        if grad.len() != self.params.len() {
            return Err(Error::validation("grad", "length differs from parameter count"));
        }
        let dz3 = self.head_backward(&cache.output, upstream);
        let l = self.layers(&self.params);
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let input = self.input;
        let output = self.output;
        {
            let (g_w1, rest) = grad.split_at_mut(b1);
            let (g_b1, rest) = rest.split_at_mut(w2 - b1);
            let (g_w2, rest) = rest.split_at_mut(b2 - w2);
            let (g_b2, rest) = rest.split_at_mut(w3 - b2);
            let (g_w3, g_b3) = rest.split_at_mut(b3 - w3);
            debug_assert_eq!(w1, 0);

            let mut g_w3 = ArrayViewMut2::from_shape((output, HIDDEN), g_w3).expect("layout");
            general_mat_mul(1.0, &dz3.t(), &cache.hidden2, 1.0, &mut g_w3);
            ArrayViewMut1::from(g_b3).scaled_add(1.0, &dz3.sum_axis(Axis(0)));

            let mut dz2 = dz3.dot(&l.w3);
            ndarray::Zip::from(&mut dz2)
                .and(&cache.hidden2)
                .for_each(|d, &h| {
                    if h <= 0.0 {
                        *d = 0.0
                    }
                });
            let mut g_w2 = ArrayViewMut2::from_shape((HIDDEN, HIDDEN), g_w2).expect("layout");
            general_mat_mul(1.0, &dz2.t(), &cache.hidden1, 1.0, &mut g_w2);
            ArrayViewMut1::from(g_b2).scaled_add(1.0, &dz2.sum_axis(Axis(0)));

            let mut dz1 = dz2.dot(&l.w2);
            ndarray::Zip::from(&mut dz1)
                .and(&cache.hidden1)
                .for_each(|d, &a| *d *= 1.0 - a * a);
            let mut g_w1 = ArrayViewMut2::from_shape((HIDDEN, input), g_w1).expect("layout");
            general_mat_mul(1.0, &dz1.t(), &cache.input, 1.0, &mut g_w1);
            ArrayViewMut1::from(g_b1).scaled_add(1.0, &dz1.sum_axis(Axis(0)));

            if want_input {
                return Ok(Some(dz1.dot(&l.w1)));
            }
        }
        Ok(None)
    }

    fn head_backward(&self, y: &Array2<f64>, dy: ArrayView2<'_, f64>) -> Array2<f64> {
        match &self.head {
            Head::Linear => dy.to_owned(),
            Head::SoftmaxBlocks { block } => {
                let mut dz = Array2::zeros(y.dim());
                for ((yr, dyr), mut dzr) in y
                    .axis_iter(Axis(0))
                    .zip(dy.axis_iter(Axis(0)))
                    .zip(dz.axis_iter_mut(Axis(0)))
                {
                    for b in (0..self.output).step_by(*block) {
                        let range = s![b..b + block];
                        let ys = yr.slice(range);
                        let dys = dyr.slice(range);
                        // masked entries have y = 0 and get zero gradient
                        let inner: f64 = ys.iter().zip(dys.iter()).map(|(a, d)| a * d).sum();
                        for (k, out) in dzr.slice_mut(range).iter_mut().enumerate() {
                            *out = ys[k] * (dys[k] - inner);
                        }
                    }
                }
                dz
            }
            Head::BoundedAffine { lower, upper } => {
                let mut dz = dy.to_owned();
                for (mut dzr, yr) in dz.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
                    for k in 0..self.output {
                        let width = upper[k] - lower[k];
                        let deriv = if width > 0.0 {
                            let s = (yr[k] - lower[k]) / width;
                            width * s * (1.0 - s)
                        } else {
                            0.0
                        };
                        dzr[k] *= deriv;
                    }
                }
                dz
            }
        }
    }
}

struct Layers<'a> {
    w1: ArrayView2<'a, f64>,
    b1: ArrayView1<'a, f64>,
    w2: ArrayView2<'a, f64>,
    b2: ArrayView1<'a, f64>,
    w3: ArrayView2<'a, f64>,
    b3: ArrayView1<'a, f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `tanh` through one `exp`; the absolute error stays near machine epsilon.
fn fast_tanh(x: f64) -> f64 {
    if x.abs() > 19.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp();
    (e - 1.0) / (e + 1.0)
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of `params` along `-grad`.
pub fn adam_step(params: &mut [f64], grad: &[f64], opt: &mut AdamState) -> Result<()> {
    if params.len() != grad.len() || opt.m.len() != params.len() {
        return Err(Error::validation("adam", "parameter, gradient and moment lengths differ"));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "adam gradient".into(),
        });
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for k in 0..params.len() {
        let g = grad[k];
        opt.m[k] = opt.beta1 * opt.m[k] + (1.0 - opt.beta1) * g;
        opt.v[k] = opt.beta2 * opt.v[k] + (1.0 - opt.beta2) * g * g;
        let m_hat = opt.m[k] / c1;
        let v_hat = opt.v[k] / c2;
        params[k] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
    }
    Ok(())
}

/// `target ← τ·online + (1 − τ)·target`.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) {
    debug_assert!(tau > 0.0 && tau <= 1.0);
    debug_assert_eq!(target.len(), online.len());
    if tau == 1.0 {
        target.copy_from_slice(online);
        return;
    }
    for (t, o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}
