//! MLP encoder with a projection head and exact reverse-mode gradients.
//!
//! Topology: `input → [dense → (norm) → act] × H → dense → L2-normalize`.
//! When `use_batchnorm_in_head` is set, the per-feature batch
//! standardization sits on the last hidden layer, between its dense map and
//! its activation, so the head reads dense–norm–dense.
//!
//! Weights use He-uniform initialization: `W ~ U(−b, b)` with
//! `b = sqrt(6 / fan_in)`, i.e. standard deviation `sqrt(2 / fan_in)`.
//! Biases and norm shifts start at 0, norm scales at 1, running means at 0
//! and running variances at 1.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::Rng;

use crate::error::{Error, Result};
use crate::vecspace::{dot, normalize, DenseMatrix};

pub const NORM_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the eval-time averages.
pub const RUNNING_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Subgradient at 0 is 0.
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderArch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub projection_dim: usize,
    pub activation: Activation,
    pub use_batchnorm_in_head: bool,
}

impl EncoderArch {
    /// Experiment default: `[64, 64]` hidden, 16-d projection, ReLU, norm on.
    pub fn default_for(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![64, 64],
            projection_dim: 16,
            activation: Activation::Relu,
            use_batchnorm_in_head: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.projection_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "encoder dims must be positive: {self:?}"
            )));
        }
        if self.use_batchnorm_in_head && self.hidden_dims.is_empty() {
            return Err(Error::InvalidConfig(
                "batch norm in the head needs at least one hidden layer".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.projection_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn norm_layer(&self) -> Option<usize> {
        self.use_batchnorm_in_head.then(|| self.hidden_dims.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `fan_out × fan_in`.
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// All weights of one encoder. Also used as the gradient container, in
/// which case the running statistics are zero and unused.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    arch: EncoderArch,
    pub layers: Vec<DenseLayer>,
    pub norm: Option<BatchNorm>,
}

pub type Gradients = EncoderParams;

impl EncoderParams {
    pub fn zeros(arch: &EncoderArch) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| DenseLayer {
                weight: DenseMatrix::zeros(fan_out, fan_in),
                bias: vec![0.0; fan_out],
            })
            .collect();
        let norm = arch.norm_layer().map(|l| {
            let width = arch.hidden_dims[l];
            BatchNorm {
                gamma: vec![1.0; width],
                beta: vec![0.0; width],
                running_mean: vec![0.0; width],
                running_var: vec![1.0; width],
            }
        });
        Ok(Self {
            arch: arch.clone(),
            layers,
            norm,
        })
    }

    pub fn arch(&self) -> &EncoderArch {
        &self.arch
    }

    /// A zero-valued tensor set with the same shapes (gradient buffer).
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for t in g.tensors_mut() {
            t.fill(0.0);
        }
        g
    }

    /// Trainable tensors in a fixed order: per layer weight then bias, then
    /// norm scale and shift.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        if let Some(n) = &self.norm {
            out.push(&n.gamma);
            out.push(&n.beta);
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        if let Some(n) = &mut self.norm {
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
        }
        out
    }

    /// Trainable tensors followed by the running statistics.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.trainable();
        if let Some(n) = &self.norm {
            out.push(&n.running_mean);
            out.push(&n.running_var);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        if let Some(n) = &mut self.norm {
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
            out.push(&mut n.running_mean);
            out.push(&mut n.running_var);
        }
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Hash over the bit patterns of every tensor.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in self.tensors() {
            h.write_usize(t.len());
            for v in t {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    /// Elementwise shape check against another parameter set.
    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        let a = self.tensors();
        let b = other.tensors();
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.len() != y.len()) {
            return Err(Error::ShapeMismatch(
                "parameter sets have different shapes".into(),
            ));
        }
        Ok(())
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// averages.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) {
        if let (Some(n), Some(t)) = (&mut self.norm, &trace.norm) {
            if trace.mode != Mode::Train {
                return;
            }
            for (r, &m) in n.running_mean.iter_mut().zip(&t.batch_mean) {
                *r = RUNNING_MOMENTUM * *r + (1.0 - RUNNING_MOMENTUM) * m;
            }
            for (r, &v) in n.running_var.iter_mut().zip(&t.batch_var) {
                *r = RUNNING_MOMENTUM * *r + (1.0 - RUNNING_MOMENTUM) * v;
            }
        }
    }
}

pub fn init_params<R: Rng + ?Sized>(arch: &EncoderArch, rng: &mut R) -> Result<EncoderParams> {
    let mut params = EncoderParams::zeros(arch)?;
    for layer in &mut params.layers {
        let bound = (6.0 / layer.weight.cols() as f64).sqrt();
        for w in layer.weight.as_mut_slice() {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Norm layer uses batch statistics.
    Train,
    /// Norm layer uses running statistics.
    Eval,
}

#[derive(Debug, Clone)]
pub struct NormTrace {
    pub xhat: DenseMatrix,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub mode: Mode,
    /// Input of every dense layer (the batch itself for layer 0).
    pub inputs: Vec<DenseMatrix>,
    /// Activation inputs of hidden layers (after the norm layer if any).
    pub pre_activations: Vec<DenseMatrix>,
    pub norm: Option<NormTrace>,
    /// Projection before L2 normalization.
    pub projection: DenseMatrix,
    pub projection_norms: Vec<f64>,
    pub output: DenseMatrix,
}

fn check_finite(m: &DenseMatrix, what: &str) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::NonFinite(format!("encoder forward: {what}")));
    }
    Ok(())
}

fn affine(x: &DenseMatrix, layer: &DenseLayer) -> Result<DenseMatrix> {
    let mut out = x.matmul_transposed(&layer.weight)?;
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(&layer.bias) {
            *o += b;
        }
    }
    Ok(out)
}

fn batch_norm_forward(
    a: &DenseMatrix,
    bn: &BatchNorm,
    mode: Mode,
) -> (DenseMatrix, NormTrace) {
    let (rows, cols) = (a.rows(), a.cols());
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; cols];
            for r in a.row_iter() {
                for (m, v) in mean.iter_mut().zip(r) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; cols];
            for r in a.row_iter() {
                for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= rows as f64);
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut xhat = a.clone();
    let mut y = a.clone();
    for i in 0..rows {
        for j in 0..cols {
            let h = (a[(i, j)] - mean[j]) * inv_std[j];
            xhat[(i, j)] = h;
            y[(i, j)] = bn.gamma[j] * h + bn.beta[j];
        }
    }
    (
        y,
        NormTrace {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Runs the encoder on a batch (one sample per row). Output rows are unit
/// norm.
pub fn forward(
    params: &EncoderParams,
    x: &DenseMatrix,
    mode: Mode,
) -> Result<(DenseMatrix, ForwardTrace)> {
    let arch = &params.arch;
    if x.cols() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim,
            got: x.cols(),
        });
    }
    check_finite(x, "input batch")?;
    let norm_layer = arch.norm_layer();
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(last);
    let mut norm_trace = None;
    let mut h = x.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut a = affine(&h, layer)?;
        inputs.push(h);
        if l == last {
            h = a;
            break;
        }
        if norm_layer == Some(l) {
            let bn = params.norm.as_ref().expect("norm params match arch");
            let (y, t) = batch_norm_forward(&a, bn, mode);
            a = y;
            norm_trace = Some(t);
        }
        check_finite(&a, "hidden pre-activation")?;
        h = a.map(|v| arch.activation.apply(v));
        pre_activations.push(a);
    }
    let projection = h;
    check_finite(&projection, "projection")?;
    let mut output = projection.clone();
    let mut projection_norms = Vec::with_capacity(projection.rows());
    for i in 0..projection.rows() {
        let row = projection.row(i);
        projection_norms.push(dot(row, row).sqrt());
        let unit = normalize(row)?;
        output.row_mut(i).copy_from_slice(&unit);
    }
    let trace = ForwardTrace {
        mode,
        inputs,
        pre_activations,
        norm: norm_trace,
        projection,
        projection_norms,
        output: output.clone(),
    };
    Ok((output, trace))
}

/// Gradient of the loss given `dL/dz` for the normalized outputs.
pub fn backward(
    params: &EncoderParams,
    trace: &ForwardTrace,
    d_output: &DenseMatrix,
) -> Result<Gradients> {
    let z = &trace.output;
    if d_output.rows() != z.rows() || d_output.cols() != z.cols() {
        return Err(Error::ShapeMismatch(format!(
            "dL/dz is {}x{}, forward output is {}x{}",
            d_output.rows(),
            d_output.cols(),
            z.rows(),
            z.cols()
        )));
    }
    // (I − z zᵀ)/‖v‖ per row
    let mut dv = d_output.clone();
    for i in 0..z.rows() {
        let zi = z.row(i);
        let proj = dot(zi, d_output.row(i));
        let n = trace.projection_norms[i];
        for (d, &zv) in dv.row_mut(i).iter_mut().zip(zi) {
            *d = (*d - zv * proj) / n;
        }
    }
    backward_projection(params, trace, &dv)
}

/// Gradient given `dL/dv` for the projection before normalization.
pub fn backward_projection(
    params: &EncoderParams,
    trace: &ForwardTrace,
    d_projection: &DenseMatrix,
) -> Result<Gradients> {
    let v = &trace.projection;
    if d_projection.rows() != v.rows() || d_projection.cols() != v.cols() {
        return Err(Error::ShapeMismatch(format!(
            "dL/dv is {}x{}, projection is {}x{}",
            d_projection.rows(),
            d_projection.cols(),
            v.rows(),
            v.cols()
        )));
    }
    let arch = &params.arch;
    let norm_layer = arch.norm_layer();
    let mut grads = params.zeros_like();
    let mut delta = d_projection.clone();
    for l in (0..params.layers.len()).rev() {
        let input = &trace.inputs[l];
        let g = &mut grads.layers[l];
        g.weight = delta.transpose().matmul(input)?;
        for r in delta.row_iter() {
            for (b, d) in g.bias.iter_mut().zip(r) {
                *b += d;
            }
        }
        if l == 0 {
            break;
        }
        // gradient w.r.t. the activation output of hidden layer l-1
        let d_act = delta.matmul(&params.layers[l].weight)?;
        let pre = &trace.pre_activations[l - 1];
        let mut d_pre = d_act;
        for ((d, &x), &y) in d_pre
            .as_mut_slice()
            .iter_mut()
            .zip(pre.as_slice())
            .zip(input.as_slice())
        {
            *d *= arch.activation.derivative(x, y);
        }
        if norm_layer == Some(l - 1) {
            let bn = params.norm.as_ref().expect("norm params match arch");
            let t = trace.norm.as_ref().expect("trace has norm");
            let gn = grads.norm.as_mut().expect("grad norm");
            d_pre = batch_norm_backward(&d_pre, bn, t, trace.mode, gn);
        }
        delta = d_pre;
    }
    Ok(grads)
}

fn batch_norm_backward(
    dy: &DenseMatrix,
    bn: &BatchNorm,
    t: &NormTrace,
    mode: Mode,
    grads: &mut BatchNorm,
) -> DenseMatrix {
    let (rows, cols) = (dy.rows(), dy.cols());
    let mut dx = dy.clone();
    for j in 0..cols {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for i in 0..rows {
            let d = dy[(i, j)];
            grads.gamma[j] += d * t.xhat[(i, j)];
            grads.beta[j] += d;
            let dxhat = d * bn.gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * t.xhat[(i, j)];
        }
        for i in 0..rows {
            let dxhat = dy[(i, j)] * bn.gamma[j];
            dx[(i, j)] = match mode {
                Mode::Train => {
                    t.inv_std[j] / rows as f64
                        * (rows as f64 * dxhat - sum_dxhat - t.xhat[(i, j)] * sum_dxhat_xhat)
                }
                Mode::Eval => dxhat * t.inv_std[j],
            };
        }
    }
    dx
}
