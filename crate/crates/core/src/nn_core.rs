//! A small deterministic neural-network engine.
//!
//! Activations are `features × batch` matrices, one sample per column. Image
//! activations store each sample as a channel-major `C × H × W` column.
//! Parameters live in row-major [`Tensor`]s.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrixView;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::Mat;
use crate::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }
}

/// Layer description before shapes are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { out: usize },
    Conv3x3 { out_channels: usize },
    Relu,
    MaxPool2,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl NetworkSpec {
    /// `input → hidden… → classes` with ReLU between dense layers.
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Self {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::Dense { out: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { out: classes });
        Self {
            input: Shape::Flat(input_dim),
            layers,
            seed,
        }
    }

    /// conv3x3(16) → relu → maxpool → conv3x3(32) → relu → maxpool → dense(K)
    pub fn small_cnn(channels: usize, height: usize, width: usize, classes: usize, seed: u64) -> Self {
        use LayerSpec::*;
        Self {
            input: Shape::Image {
                channels,
                height,
                width,
            },
            layers: vec![
                Conv3x3 { out_channels: 16 },
                Relu,
                MaxPool2,
                Conv3x3 { out_channels: 32 },
                Relu,
                MaxPool2,
                Flatten,
                Dense { out: classes },
            ],
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Layer {
    Dense {
        input: usize,
        out: usize,
        param: usize,
    },
    Conv3x3 {
        cin: usize,
        cout: usize,
        height: usize,
        width: usize,
        param: usize,
    },
    Relu,
    MaxPool2 {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flatten,
}

/// Resolved network: layers with concrete shapes and their parameters.
///
/// Every trainable layer owns two consecutive tensors: weight then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    tensors: Vec<Tensor>,
    output_dim: usize,
    version: u64,
}

impl NetworkParams {
    /// Resolves shapes and draws He-scaled Gaussian weights from `spec.seed`.
    pub fn init(spec: &NetworkSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut shape = spec.input;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut tensors = Vec::new();
        for (i, l) in spec.layers.iter().enumerate() {
            let err = |msg: &str| Error::Shape(format!("layer {i} ({l:?}): {msg}"));
            match (*l, shape) {
                (LayerSpec::Dense { out }, Shape::Flat(input)) => {
                    if out == 0 {
                        return Err(err("zero width"));
                    }
                    let param = tensors.len();
                    tensors.push(he_tensor(&[out, input], input, &mut rng));
                    tensors.push(Tensor::zeros(&[out]));
                    layers.push(Layer::Dense { input, out, param });
                    shape = Shape::Flat(out);
                }
                (LayerSpec::Dense { .. }, Shape::Image { .. }) => return Err(err("flatten before dense")),
                (
                    LayerSpec::Conv3x3 { out_channels },
                    Shape::Image {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    let param = tensors.len();
                    tensors.push(he_tensor(&[out_channels, channels, 3, 3], channels * 9, &mut rng));
                    tensors.push(Tensor::zeros(&[out_channels]));
                    layers.push(Layer::Conv3x3 {
                        cin: channels,
                        cout: out_channels,
                        height,
                        width,
                        param,
                    });
                    shape = Shape::Image {
                        channels: out_channels,
                        height,
                        width,
                    };
                }
                (LayerSpec::Conv3x3 { .. }, Shape::Flat(_)) => return Err(err("convolution needs an image input")),
                (
                    LayerSpec::MaxPool2,
                    Shape::Image {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    if height < 2 || width < 2 {
                        return Err(err("image too small to pool"));
                    }
                    layers.push(Layer::MaxPool2 {
                        channels,
                        height,
                        width,
                    });
                    shape = Shape::Image {
                        channels,
                        height: height / 2,
                        width: width / 2,
                    };
                }
                (LayerSpec::MaxPool2, Shape::Flat(_)) => return Err(err("pooling needs an image input")),
                (LayerSpec::Relu, s) => {
                    layers.push(Layer::Relu);
                    shape = s;
                }
                (LayerSpec::Flatten, s) => {
                    layers.push(Layer::Flatten);
                    shape = Shape::Flat(s.size());
                }
            }
        }
        let Shape::Flat(output_dim) = shape else {
            return Err(Error::Shape("network must end in a flat output".into()));
        };
        Ok(Self {
            spec: spec.clone(),
            layers,
            tensors,
            output_dim,
            version: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input.size()
    }

    /// Number of logits `K`.
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Mutable access; invalidates any outstanding forward cache.
    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        self.version += 1;
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Logits only.
    pub fn predict(&self, inputs: &Mat) -> Result<Mat> {
        Ok(self.forward(inputs)?.0)
    }

    /// Forward pass returning `K × B` logits and the cache for [`backward`](Self::backward).
    pub fn forward(&self, inputs: &Mat) -> Result<(Mat, ForwardCache)> {
        if inputs.nrows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input features, got {}",
                self.input_dim(),
                inputs.nrows()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pool_argmax = Vec::new();
        let mut x = inputs.clone();
        for layer in &self.layers {
            let y = match *layer {
                Layer::Dense { input, out, param } => {
                    dense_forward(&self.tensors[param], &self.tensors[param + 1], &x, input, out)
                }
                Layer::Conv3x3 {
                    cin,
                    cout,
                    height,
                    width,
                    param,
                } => conv_forward(
                    &self.tensors[param],
                    &self.tensors[param + 1],
                    &x,
                    cin,
                    cout,
                    height,
                    width,
                ),
                Layer::Relu => x.map(|v| v.max(0.0)),
                Layer::MaxPool2 {
                    channels,
                    height,
                    width,
                } => {
                    let (y, idx) = maxpool_forward(&x, channels, height, width);
                    pool_argmax.push(idx);
                    y
                }
                Layer::Flatten => x.clone(),
            };
            activations.push(std::mem::replace(&mut x, y));
        }
        debug_assert!(x.iter().all(|v| v.is_finite()), "non-finite logits");
        Ok((
            x.clone(),
            ForwardCache {
                activations,
                pool_argmax,
                version: self.version,
                batch: inputs.ncols(),
            },
        ))
    }

    /// Reverse pass: parameter gradients for an upstream `dloss/dlogits`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Mat) -> Result<Vec<Tensor>> {
        Ok(self.backward_with_input(cache, dlogits)?.0)
    }

    /// Like [`backward`](Self::backward) but also returns `dloss/dinputs`.
    pub fn backward_with_input(&self, cache: &ForwardCache, dlogits: &Mat) -> Result<(Vec<Tensor>, Mat)> {
        if cache.version != self.version || cache.activations.len() != self.layers.len() {
            return Err(Error::Cache("forward cache does not belong to these parameters".into()));
        }
        if dlogits.shape() != (self.output_dim, cache.batch) {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, expected {:?}",
                dlogits.shape(),
                (self.output_dim, cache.batch)
            )));
        }
        let mut grads: Vec<Tensor> = self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut pools = cache.pool_argmax.iter().rev();
        let mut dy = dlogits.clone();
        for (layer, x) in self.layers.iter().zip(&cache.activations).rev() {
            dy = match *layer {
                Layer::Dense { input, out, param } => {
                    let (dx, dw, db) = dense_backward(&self.tensors[param], x, &dy, input, out);
                    grads[param].data = dw;
                    grads[param + 1].data = db;
                    dx
                }
                Layer::Conv3x3 {
                    cin,
                    cout,
                    height,
                    width,
                    param,
                } => {
                    let (dx, dw, db) = conv_backward(&self.tensors[param], x, &dy, cin, cout, height, width);
                    grads[param].data = dw;
                    grads[param + 1].data = db;
                    dx
                }
                Layer::Relu => dy.zip_map(x, |g, v| if v > 0.0 { g } else { 0.0 }),
                Layer::MaxPool2 {
                    channels,
                    height,
                    width,
                } => {
                    let idx = pools
                        .next()
                        .ok_or_else(|| Error::Cache("missing pooling indices".into()))?;
                    maxpool_backward(&dy, idx, channels * height * width)
                }
                Layer::Flatten => dy,
            };
        }
        Ok((grads, dy))
    }
}

fn he_tensor(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| normal.sample(rng)).collect(),
    }
}

/// Activations saved by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Mat>,
    pool_argmax: Vec<Vec<usize>>,
    version: u64,
    batch: usize,
}

fn dense_forward(w: &Tensor, b: &Tensor, x: &Mat, input: usize, out: usize) -> Mat {
    // Row-major out×in is column-major in×out.
    let wt = DMatrixView::from_slice(&w.data, input, out);
    let mut y = Mat::zeros(out, x.ncols());
    y.gemm_tr(1.0, &wt, x, 0.0);
    for mut col in y.column_iter_mut() {
        for (v, bias) in col.iter_mut().zip(&b.data) {
            *v += bias;
        }
    }
    y
}

fn dense_backward(w: &Tensor, x: &Mat, dy: &Mat, input: usize, out: usize) -> (Mat, Vec<f64>, Vec<f64>) {
    let wt = DMatrixView::from_slice(&w.data, input, out);
    let dx = wt * dy;
    // Column-major in×out of X·dYᵀ is row-major dY·Xᵀ.
    let dw = x * dy.transpose();
    let db = dy.column_sum();
    (dx, dw.as_slice().to_vec(), db.as_slice().to_vec())
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(w: &Tensor, b: &Tensor, x: &Mat, cin: usize, cout: usize, h: usize, wd: usize) -> Mat {
    let plane = h * wd;
    let mut y = Mat::zeros(cout * plane, x.ncols());
    for (xs, mut ys) in x.column_iter().zip(y.column_iter_mut()) {
        for co in 0..cout {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = b.data[co];
                    for ci in 0..cin {
                        let wbase = (co * cin + ci) * 9;
                        for di in 0..3 {
                            let ii = i + di;
                            if ii == 0 || ii > h {
                                continue;
                            }
                            for dj in 0..3 {
                                let jj = j + dj;
                                if jj == 0 || jj > wd {
                                    continue;
                                }
                                acc += w.data[wbase + di * 3 + dj] * xs[ci * plane + (ii - 1) * wd + (jj - 1)];
                            }
                        }
                    }
                    ys[co * plane + i * wd + j] = acc;
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    w: &Tensor,
    x: &Mat,
    dy: &Mat,
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
) -> (Mat, Vec<f64>, Vec<f64>) {
    let plane = h * wd;
    let mut dx = Mat::zeros(x.nrows(), x.ncols());
    let mut dw = vec![0.0; w.data.len()];
    let mut db = vec![0.0; cout];
    for ((xs, gs), mut dxs) in x.column_iter().zip(dy.column_iter()).zip(dx.column_iter_mut()) {
        for co in 0..cout {
            for i in 0..h {
                for j in 0..wd {
                    let g = gs[co * plane + i * wd + j];
                    if g == 0.0 {
                        continue;
                    }
                    db[co] += g;
                    for ci in 0..cin {
                        let wbase = (co * cin + ci) * 9;
                        for di in 0..3 {
                            let ii = i + di;
                            if ii == 0 || ii > h {
                                continue;
                            }
                            for dj in 0..3 {
                                let jj = j + dj;
                                if jj == 0 || jj > wd {
                                    continue;
                                }
                                let xi = ci * plane + (ii - 1) * wd + (jj - 1);
                                dw[wbase + di * 3 + dj] += g * xs[xi];
                                dxs[xi] += g * w.data[wbase + di * 3 + dj];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

fn maxpool_forward(x: &Mat, channels: usize, h: usize, w: usize) -> (Mat, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let out_len = channels * oh * ow;
    let mut y = Mat::zeros(out_len, x.ncols());
    let mut argmax = Vec::with_capacity(out_len * x.ncols());
    for (xs, mut ys) in x.column_iter().zip(y.column_iter_mut()) {
        for c in 0..channels {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = c * h * w + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let k = c * h * w + (2 * i + di) * w + 2 * j + dj;
                        // First maximum wins on ties.
                        if xs[k] > xs[best] {
                            best = k;
                        }
                    }
                    ys[c * oh * ow + i * ow + j] = xs[best];
                    argmax.push(best);
                }
            }
        }
    }
    (y, argmax)
}

fn maxpool_backward(dy: &Mat, argmax: &[usize], in_len: usize) -> Mat {
    let out_len = dy.nrows();
    let mut dx = Mat::zeros(in_len, dy.ncols());
    for (s, (gs, mut dxs)) in dy.column_iter().zip(dx.column_iter_mut()).enumerate() {
        for o in 0..out_len {
            dxs[argmax[s * out_len + o]] += gs[o];
        }
    }
    dx
}

/// Column-wise softmax with max subtraction.
pub fn softmax(logits: &Mat) -> Mat {
    let mut p = logits.clone();
    for mut col in p.column_iter_mut() {
        let m = col.max();
        col.apply(|v| *v = (*v - m).exp());
        let s = col.sum();
        col /= s;
    }
    p
}

/// One-hot `K × B` matrix from class indices.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Mat> {
    let mut m = Mat::zeros(classes, labels.len());
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Label(format!("label {l} at {i} is outside 0..{classes}")));
        }
        m[(l, i)] = 1.0;
    }
    Ok(m)
}

/// Mean softmax cross-entropy over the batch and its gradient `(softmax − y) / B`.
pub fn softmax_ce_loss(logits: &Mat, labels: &Mat) -> Result<(f64, Mat)> {
    if logits.shape() != labels.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} vs labels {:?}",
            logits.shape(),
            labels.shape()
        )));
    }
    if logits.ncols() == 0 {
        return Err(Error::BatchSize("empty batch".into()));
    }
    for (i, col) in labels.column_iter().enumerate() {
        let ones = col.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || col.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Label(format!("label column {i} is not one-hot")));
        }
    }
    let b = logits.ncols() as f64;
    let mut loss = 0.0;
    for (z, y) in logits.column_iter().zip(labels.column_iter()) {
        let m = z.max();
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += z.iter().zip(y.iter()).map(|(zk, yk)| yk * (lse - zk)).sum::<f64>();
    }
    let grad = (softmax(logits) - labels) / b;
    Ok((loss / b, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        let zeros = || params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(params: &mut NetworkParams, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.tensors.len()
        || grads.iter().zip(&params.tensors).any(|(g, p)| g.shape != p.shape)
        || state.first.len() != grads.len()
    {
        return Err(Error::Shape("gradients do not mirror parameters".into()));
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &str = "lautum-params v1";

/// Text dump of all parameter tensors; round-trips exactly.
pub fn checkpoint_to_string(params: &NetworkParams) -> String {
    let mut s = format!("{CHECKPOINT_MAGIC}\ntensors {}\n", params.tensors.len());
    for t in &params.tensors {
        let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "shape {}", dims.join(" "));
        let vals: Vec<String> = t.data.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", vals.join(" "));
    }
    s
}

/// Loads a dump produced by [`checkpoint_to_string`] into matching parameters.
pub fn checkpoint_from_str(params: &mut NetworkParams, text: &str) -> Result<()> {
    let bad = |line: usize, msg: String| Error::Parse {
        row: line + 1,
        message: msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, CHECKPOINT_MAGIC)) => {}
        _ => return Err(bad(0, "missing checkpoint header".into())),
    }
    let (ln, count) = lines.next().ok_or_else(|| bad(1, "missing tensor count".into()))?;
    let count: usize = count
        .strip_prefix("tensors ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| bad(ln, "bad tensor count".into()))?;
    if count != params.tensors.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {count} tensors, network has {}",
            params.tensors.len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for expected in &params.tensors {
        let (ln, shape_line) = lines.next().ok_or_else(|| bad(ln, "truncated checkpoint".into()))?;
        let shape: Vec<usize> = shape_line
            .strip_prefix("shape ")
            .ok_or_else(|| bad(ln, "expected shape line".into()))?
            .split_whitespace()
            .map(|d| d.parse().map_err(|e| bad(ln, format!("{e}"))))
            .collect::<Result<_>>()?;
        if shape != expected.shape {
            return Err(Error::Shape(format!(
                "checkpoint tensor {shape:?} vs network {:?}",
                expected.shape
            )));
        }
        let (ln, data_line) = lines.next().ok_or_else(|| bad(ln, "truncated checkpoint".into()))?;
        let data: Vec<f64> = data_line
            .split_whitespace()
            .map(|v| v.parse().map_err(|e| bad(ln, format!("{e}"))))
            .collect::<Result<_>>()?;
        loaded.push(Tensor::new(shape, data)?);
    }
    params.tensors_mut().clone_from_slice(&loaded);
    Ok(())
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(params: &mut NetworkParams, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(params, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_dense_layer_passes_inputs_through() {
        let spec = NetworkSpec {
            input: Shape::Flat(3),
            layers: vec![LayerSpec::Dense { out: 3 }],
            seed: 0,
        };
        let mut net = NetworkParams::init(&spec).unwrap();
        let eye = Mat::identity(3, 3);
        net.tensors_mut()[0].data_mut().copy_from_slice(eye.as_slice());
        let x = Mat::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut net = NetworkParams::init(&NetworkSpec::mlp(4, &[5], 3, 1)).unwrap();
        for t in net.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = net.predict(&random_mat(4, 6, &mut rng)).unwrap();
        assert_eq!(logits, Mat::zeros(3, 6));
        assert!(softmax(&logits).iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn golden_logits() {
        let net = NetworkParams::init(&NetworkSpec::mlp(3, &[4], 2, 42)).unwrap();
        let x = Mat::from_column_slice(3, 1, &[0.5, -1.0, 2.0]);
        let logits = net.predict(&x).unwrap();
        let golden = [GOLDEN_LOGITS[0], GOLDEN_LOGITS[1]];
        for (a, b) in logits.iter().zip(golden) {
            assert_eq!(a.to_bits(), b.to_bits(), "logits {logits}");
        }
    }

    const GOLDEN_LOGITS: [f64; 2] = [0.12058235073203671, -0.8267435153161548];

    #[test]
    fn shape_errors() {
        let net = NetworkParams::init(&NetworkSpec::mlp(4, &[5], 3, 1)).unwrap();
        assert!(matches!(net.predict(&Mat::zeros(3, 2)), Err(Error::Shape(_))));
        let bad = NetworkSpec {
            input: Shape::Flat(4),
            layers: vec![LayerSpec::Conv3x3 { out_channels: 2 }],
            seed: 0,
        };
        assert!(NetworkParams::init(&bad).is_err());
    }

    #[test]
    fn ce_loss_examples() {
        let labels = one_hot(&[3, 7], 10).unwrap();
        let (loss, _) = softmax_ce_loss(&Mat::zeros(10, 2), &labels).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        let mut z = Mat::zeros(10, 2);
        z[(3, 0)] = 200.0;
        z[(7, 1)] = 200.0;
        let (loss, grad) = softmax_ce_loss(&z, &labels).unwrap();
        assert!((0.0..1e-80).contains(&loss));
        assert!(grad.amax() < 1e-80);
        assert!(matches!(
            softmax_ce_loss(&Mat::zeros(2, 1), &Mat::from_element(2, 1, 0.5)),
            Err(Error::Label(_))
        ));
        assert!(one_hot(&[2], 2).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let net = NetworkParams::init(&NetworkSpec::small_cnn(1, 4, 4, 3, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, cache) = net.forward(&random_mat(16, 2, &mut rng)).unwrap();
        let grads = net.backward(&cache, &Mat::zeros(3, 2)).unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn dense_gradient_matches_loop_oracle() {
        let spec = NetworkSpec {
            input: Shape::Flat(3),
            layers: vec![LayerSpec::Dense { out: 2 }],
            seed: 9,
        };
        let net = NetworkParams::init(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_mat(3, 5, &mut rng);
        let dy = random_mat(2, 5, &mut rng);
        let (_, cache) = net.forward(&x).unwrap();
        let grads = net.backward(&cache, &dy).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let expected: f64 = (0..5).map(|b| dy[(o, b)] * x[(i, b)]).sum();
                assert!((grads[0].data()[o * 3 + i] - expected).abs() < 1e-14);
            }
            let expected_b: f64 = (0..5).map(|b| dy[(o, b)]).sum();
            assert!((grads[1].data()[o] - expected_b).abs() < 1e-14);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = NetworkParams::init(&NetworkSpec::mlp(2, &[3], 2, 1)).unwrap();
        let (_, cache) = net.forward(&Mat::zeros(2, 2)).unwrap();
        net.tensors_mut()[0].data_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &Mat::zeros(2, 2)), Err(Error::Cache(_))));
    }

    #[test]
    fn maxpool_routes_gradient_to_the_maximum() {
        let x = Mat::from_column_slice(4, 1, &[1.0, 5.0, 3.0, 2.0]);
        let (y, idx) = maxpool_forward(&x, 1, 2, 2);
        assert_eq!(y[(0, 0)], 5.0);
        let dx = maxpool_backward(&Mat::from_element(1, 1, 2.0), &idx, 4);
        assert_eq!(dx.as_slice(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut net = NetworkParams::init(&NetworkSpec::mlp(2, &[3], 2, 1)).unwrap();
        let before = net.tensors().to_vec();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let zeros: Vec<Tensor> = before.iter().map(|t| Tensor::zeros(t.shape())).collect();
        for _ in 0..5 {
            adam_step(&mut net, &zeros, &mut state).unwrap();
        }
        assert_eq!(net.tensors(), &before[..]);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn adam_constant_gradient_moves_at_lr_per_step() {
        // Scalar simulation: with a constant gradient, m̂ = g and v̂ = g², so
        // every step moves by lr · g / (|g| + ε).
        let spec = NetworkSpec {
            input: Shape::Flat(1),
            layers: vec![LayerSpec::Dense { out: 1 }],
            seed: 0,
        };
        let mut net = NetworkParams::init(&spec).unwrap();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let g = 0.37;
        let grads = vec![Tensor::new(vec![1, 1], vec![g]).unwrap(), Tensor::zeros(&[1])];
        let mut prev = net.tensors()[0].data()[0];
        for _ in 0..200 {
            adam_step(&mut net, &grads, &mut state).unwrap();
            let cur = net.tensors()[0].data()[0];
            assert!(cur < prev);
            let delta = prev - cur;
            assert!((delta - 1e-3 * g / (g + 1e-8)).abs() < 1e-12);
            prev = cur;
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = NetworkParams::init(&NetworkSpec::small_cnn(1, 4, 4, 3, 77)).unwrap();
        let text = checkpoint_to_string(&net);
        let mut other = NetworkParams::init(&NetworkSpec::small_cnn(1, 4, 4, 3, 78)).unwrap();
        assert_ne!(other.tensors(), net.tensors());
        checkpoint_from_str(&mut other, &text).unwrap();
        assert_eq!(other.tensors(), net.tensors());
        let mut wrong = NetworkParams::init(&NetworkSpec::mlp(4, &[2], 3, 0)).unwrap();
        assert!(checkpoint_from_str(&mut wrong, &text).is_err());
        assert!(checkpoint_from_str(&mut other, "garbage").is_err());
    }
}
