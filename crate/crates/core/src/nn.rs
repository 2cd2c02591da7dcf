//! Feed-forward models with a hand-written backward pass.
//!
//! Data is laid out with samples as columns: a batch `X` is `d_in × N`. A model
//! with `L + 1` layers applies its activation after each of the first `L`
//! layers; the output of layer `L` is the representation `Z` and the last layer
//! is the classifier head.

use std::io::{Read, Write};
use std::path::Path;

use crate::decorr;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

/// Also used as the carrier for gradients and momentum buffers, which share its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Batch {
    pub fn new(x: Matrix, y: Vec<usize>, classes: usize) -> Result<Self> {
        if y.is_empty() || x.cols() != y.len() {
            return Err(Error::invalid(format!(
                "batch has {} feature columns and {} labels",
                x.cols(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Batch { x, y, classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// One-hot label matrix, `C × N`.
    pub fn one_hot(&self) -> Matrix {
        let mut m = Matrix::zeros(self.classes, self.len());
        for (i, &c) in self.y.iter().enumerate() {
            m[(c, i)] = 1.0;
        }
        m
    }
}

/// Proximal anchor: adds `(μ/2)‖w − anchor‖²` over every parameter.
#[derive(Debug, Clone, Copy)]
pub struct Prox<'a> {
    pub mu: f64,
    pub anchor: &'a Model,
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `inputs[i]` feeds layer `i`; `inputs[0]` is `X`, `inputs[L]` is `Z`.
    pub inputs: Vec<Matrix>,
    /// Pre-activation outputs of the first `L` layers.
    pub pre: Vec<Matrix>,
    pub logits: Matrix,
    pub probs: Matrix,
}

impl Forward {
    pub fn representations(&self) -> &Matrix {
        self.inputs.last().expect("at least one layer")
    }
}

impl Model {
    /// `dims = [d_in, h_1, …, h_L, C]`. Weights and biases uniform in `±1/√fan_in`.
    pub fn mlp(dims: &[usize], activation: Activation, bias: bool, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("invalid layer dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = Matrix::from_fn(w[1], w[0], |_, _| rng.uniform_range(-bound, bound));
                let bias = bias.then(|| (0..w[1]).map(|_| rng.uniform_range(-bound, bound)).collect());
                Layer { weight, bias }
            })
            .collect();
        Ok(Model { layers, activation })
    }

    /// Bias-free model from explicit weights, first layer first.
    pub fn from_weights(weights: Vec<Matrix>, activation: Activation) -> Result<Self> {
        let m = Model {
            layers: weights
                .into_iter()
                .map(|weight| Layer { weight, bias: None })
                .collect(),
            activation,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("model has no layers"));
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[1].weight.cols() != w[0].weight.rows() {
                return Err(Error::invalid(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    w[0].weight.rows(),
                    i + 1,
                    w[1].weight.cols()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(b) = &l.bias {
                if b.len() != l.weight.rows() {
                    return Err(Error::invalid(format!("layer {i} bias length mismatch")));
                }
            }
        }
        Ok(())
    }

    /// Representation depth `L`.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn rep_dim(&self) -> usize {
        self.layers[self.depth()].weight.cols()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.depth()].weight.rows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.rows()));
        d
    }

    pub fn zeros_like(&self) -> Model {
        Model {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
                .collect(),
            activation: self.activation,
        }
    }

    pub fn same_shape(&self, other: &Model) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape()
                    && a.bias.as_ref().map(Vec::len) == b.bias.as_ref().map(Vec::len)
            })
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    /// All parameters in layer order, each layer's weight then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| {
            l.weight
                .as_slice()
                .iter()
                .chain(l.bias.iter().flat_map(|b| b.iter()))
        })
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| {
            l.weight
                .as_mut_slice()
                .iter_mut()
                .chain(l.bias.iter_mut().flat_map(|b| b.iter_mut()))
        })
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    /// Product `W_L ⋯ W_1` of the representation layers.
    pub fn product(&self) -> Result<Matrix> {
        let mut p = self.layers[0].weight.clone();
        for l in &self.layers[1..self.depth()] {
            p = l.weight.matmul(&p)?;
        }
        Ok(p)
    }

    fn apply_layer(&self, i: usize, h: &Matrix) -> Result<Matrix> {
        let l = &self.layers[i];
        let mut out = l.weight.matmul(h)?;
        if let Some(b) = &l.bias {
            for (r, &br) in b.iter().enumerate() {
                out.row_mut(r).iter_mut().for_each(|v| *v += br);
            }
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        if x.rows() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} rows, model expects {}",
                x.rows(),
                self.input_dim()
            )));
        }
        let depth = self.depth();
        let mut inputs = Vec::with_capacity(depth + 1);
        let mut pre = Vec::with_capacity(depth);
        inputs.push(x.clone());
        for i in 0..depth {
            let a = self.apply_layer(i, &inputs[i])?;
            let h = match self.activation {
                Activation::None => a.clone(),
                Activation::Relu => a.map(|v| v.max(0.0)),
            };
            pre.push(a);
            inputs.push(h);
        }
        let logits = self.apply_layer(depth, &inputs[depth])?;
        let probs = softmax_columns(&logits);
        Ok(Forward {
            inputs,
            pre,
            logits,
            probs,
        })
    }

    /// Representations `Z` (`d × N`) of the inputs.
    pub fn represent(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for i in 0..self.depth() {
            h = self.apply_layer(i, &h)?;
            if self.activation == Activation::Relu {
                h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Predicted class per column.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let f = self.forward(x)?;
        Ok((0..f.logits.cols())
            .map(|j| {
                let col = f.logits.col(j);
                (0..col.len())
                    .max_by(|&a, &b| col[a].total_cmp(&col[b]).then(b.cmp(&a)))
                    .unwrap()
            })
            .collect())
    }

    pub fn accuracy(&self, batch: &Batch) -> Result<f64> {
        let pred = self.predict(&batch.x)?;
        let hits = pred.iter().zip(&batch.y).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / batch.len() as f64)
    }
}

/// Column-wise softmax with max subtraction.
pub fn softmax_columns(logits: &Matrix) -> Matrix {
    let (c, n) = logits.shape();
    let mut out = Matrix::zeros(c, n);
    for j in 0..n {
        let mx = (0..c).map(|i| logits[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for i in 0..c {
            let e = (logits[(i, j)] - mx).exp();
            out[(i, j)] = e;
            s += e;
        }
        for i in 0..c {
            out[(i, j)] /= s;
        }
    }
    out
}

pub fn cross_entropy(probs: &Matrix, y: &[usize], reduction: Reduction) -> Result<f64> {
    if probs.cols() != y.len() || y.is_empty() {
        return Err(Error::invalid("cross_entropy: label count mismatch"));
    }
    let mut total = 0.0;
    for (j, &c) in y.iter().enumerate() {
        let p = probs[(c, j)];
        if !(p > 0.0) {
            return Err(Error::NumericalDomain(format!(
                "log of non-positive probability {p} at sample {j}"
            )));
        }
        total -= p.ln();
    }
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / y.len() as f64,
    })
}

/// Cross-entropy from logits via log-sum-exp, which stays finite where the
/// softmax probability underflows.
fn cross_entropy_logits(logits: &Matrix, y: &[usize], reduction: Reduction) -> f64 {
    let c = logits.rows();
    let mut total = 0.0;
    for (j, &label) in y.iter().enumerate() {
        let mx = (0..c).map(|i| logits[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + (0..c).map(|i| (logits[(i, j)] - mx).exp()).sum::<f64>().ln();
        total += lse - logits[(label, j)];
    }
    match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / y.len() as f64,
    }
}

/// Options shared by [`objective`], [`backward`] and [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    pub beta: f64,
    pub prox: Option<Prox<'a>>,
    pub reduction: Reduction,
    pub eps: f64,
}

impl Default for LossSpec<'_> {
    fn default() -> Self {
        LossSpec {
            beta: 0.0,
            prox: None,
            reduction: Reduction::Mean,
            eps: decorr::DEFAULT_EPS,
        }
    }
}

/// Components of the local objective `ℓ + β·L_decorr + (μ/2)‖w − w_anchor‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub ce: f64,
    pub decorr: f64,
    pub prox: f64,
}

impl Objective {
    pub fn total(&self, beta: f64) -> f64 {
        self.ce + beta * self.decorr + self.prox
    }
}

fn prox_value(model: &Model, prox: &Prox<'_>) -> Result<f64> {
    if !model.same_shape(prox.anchor) {
        return Err(Error::invalid("proximal anchor shape mismatch"));
    }
    let sq: f64 = model
        .params()
        .zip(prox.anchor.params())
        .map(|(w, a)| (w - a) * (w - a))
        .sum();
    Ok(0.5 * prox.mu * sq)
}

/// The regularizer is skipped (contributes 0) on batches with fewer than two samples.
pub fn objective(model: &Model, batch: &Batch, spec: &LossSpec<'_>) -> Result<Objective> {
    let f = model.forward(&batch.x)?;
    let ce = cross_entropy_logits(&f.logits, &batch.y, spec.reduction);
    if !ce.is_finite() {
        return Err(Error::NumericalDomain("cross-entropy is not finite".into()));
    }
    let decorr = if spec.beta > 0.0 && batch.len() >= 2 {
        decorr::feddecorr_loss(&f.representations().transpose(), spec.eps)?
    } else {
        0.0
    };
    let prox = match &spec.prox {
        Some(p) => prox_value(model, p)?,
        None => 0.0,
    };
    Ok(Objective { ce, decorr, prox })
}

/// Gradient of the full local objective. Returns the gradients (model-shaped)
/// and the objective value at the current weights.
pub fn backward(model: &Model, batch: &Batch, spec: &LossSpec<'_>) -> Result<(Model, Objective)> {
    if spec.beta < 0.0 {
        return Err(Error::invalid("beta must be non-negative"));
    }
    if batch.classes != model.classes() {
        return Err(Error::invalid(format!(
            "batch has {} classes, model head has {}",
            batch.classes,
            model.classes()
        )));
    }
    let f = model.forward(&batch.x)?;
    let ce = cross_entropy_logits(&f.logits, &batch.y, spec.reduction);
    if !ce.is_finite() {
        return Err(Error::NumericalDomain("cross-entropy is not finite".into()));
    }
    let n = batch.len();
    let scale = match spec.reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / n as f64,
    };
    let mut delta = f.probs.clone();
    for (j, &c) in batch.y.iter().enumerate() {
        delta[(c, j)] -= 1.0;
    }
    let mut delta = delta.scale(scale);

    let depth = model.depth();
    let mut grads = model.zeros_like();
    let mut decorr_value = 0.0;
    for i in (0..=depth).rev() {
        let input = &f.inputs[i];
        grads.layers[i].weight = delta.matmul_nt(input)?;
        if let Some(b) = &mut grads.layers[i].bias {
            for (r, v) in b.iter_mut().enumerate() {
                *v = delta.row(r).iter().sum();
            }
        }
        if i == 0 {
            break;
        }
        let mut dh = model.layers[i].weight.matmul_tn(&delta)?;
        if i == depth && spec.beta > 0.0 && n >= 2 {
            let zt = input.transpose();
            decorr_value = decorr::feddecorr_loss(&zt, spec.eps)?;
            let gz = decorr::feddecorr_grad(&zt, spec.eps)?;
            dh.axpy(spec.beta, &gz.transpose())?;
        }
        if model.activation == Activation::Relu {
            let pre = &f.pre[i - 1];
            for (g, &a) in dh.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        delta = dh;
    }

    let mut prox_v = 0.0;
    if let Some(p) = &spec.prox {
        prox_v = prox_value(model, p)?;
        for ((g, w), a) in grads
            .params_mut()
            .zip(model.params())
            .zip(p.anchor.params())
        {
            *g += p.mu * (w - a);
        }
    }
    Ok((
        grads,
        Objective {
            ce,
            decorr: decorr_value,
            prox: prox_v,
        },
    ))
}

/// Max over parameters of `|analytic − FD| / max(1e-8, |analytic| + |FD|)`
/// using central differences with step `h`.
pub fn grad_check(model: &Model, batch: &Batch, spec: &LossSpec<'_>, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let (grads, _) = backward(model, batch, spec)?;
    let analytic: Vec<f64> = grads.params().copied().collect();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (idx, &a) in analytic.iter().enumerate() {
        let orig = *probe.params().nth(idx).unwrap();
        set_param(&mut probe, idx, orig + h);
        let up = objective(&probe, batch, spec)?.total(spec.beta);
        set_param(&mut probe, idx, orig - h);
        let down = objective(&probe, batch, spec)?.total(spec.beta);
        set_param(&mut probe, idx, orig);
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((a - fd).abs() / (a.abs() + fd.abs()).max(1e-8));
    }
    Ok(worst)
}

fn set_param(model: &mut Model, idx: usize, value: f64) {
    *model.params_mut().nth(idx).unwrap() = value;
}

#[derive(Debug, Clone)]
pub struct OptState {
    pub velocity: Model,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptState {
    pub fn new(model: &Model, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptState {
            velocity: model.zeros_like(),
            lr,
            momentum,
            weight_decay,
        }
    }
}

/// `v ← m·v + g + wd·w`, then `w ← w − lr·v`.
pub fn sgd_step(model: &mut Model, grads: &Model, state: &mut OptState) -> Result<()> {
    if !model.same_shape(grads) || !model.same_shape(&state.velocity) {
        return Err(Error::invalid("sgd_step: shape mismatch"));
    }
    if !grads.is_finite() {
        return Err(Error::numerical("non-finite gradient in sgd_step"));
    }
    let (lr, mom, wd) = (state.lr, state.momentum, state.weight_decay);
    for ((w, g), v) in model
        .params_mut()
        .zip(grads.params())
        .zip(state.velocity.params_mut())
    {
        *v = mom * *v + g + wd * *w;
        *w -= lr * *v;
    }
    Ok(())
}

const MAGIC: &[u8; 4] = b"FDNN";
const VERSION: u32 = 1;

impl Model {
    /// Little-endian binary layout, see the README for the field table.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        out.push(match self.activation {
            Activation::None => 0,
            Activation::Relu => 1,
        });
        for l in &self.layers {
            out.extend_from_slice(&(l.weight.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(l.weight.cols() as u32).to_le_bytes());
            out.push(l.bias.is_some() as u8);
        }
        for v in self.params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad model magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let n_layers = read_u32(&mut r)? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(Error::Format(format!("implausible layer count {n_layers}")));
        }
        let activation = match read_u8(&mut r)? {
            0 => Activation::None,
            1 => Activation::Relu,
            a => return Err(Error::Format(format!("unknown activation tag {a}"))),
        };
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let bias = match read_u8(&mut r)? {
                0 => false,
                1 => true,
                b => return Err(Error::Format(format!("bad bias flag {b}"))),
            };
            shapes.push((rows, cols, bias));
        }
        let total: usize = shapes
            .iter()
            .map(|&(r, c, b)| r * c + if b { r } else { 0 })
            .sum();
        if r.len() != 8 * total {
            return Err(Error::Format(format!(
                "expected {} parameter bytes, found {}",
                8 * total,
                r.len()
            )));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (rows, cols, bias) in shapes {
            let w: Vec<f64> = (0..rows * cols).map(|_| read_f64(&mut r)).collect::<Result<_>>()?;
            let weight = Matrix::from_vec(rows, cols, w)
                .map_err(|e| Error::Format(format!("weights: {e}")))?;
            let bias = if bias {
                Some((0..rows).map(|_| read_f64(&mut r)).collect::<Result<_>>()?)
            } else {
                None
            };
            layers.push(Layer { weight, bias });
        }
        let m = Model { layers, activation };
        m.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&buf)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated model file".into()))
}

fn read_u8(r: &mut &[u8]) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8]) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
