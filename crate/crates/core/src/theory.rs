//! Gradient-flow laboratory on deep linear networks.
//!
//! A [`LinearStack`] is a bias-free linear model `W_{L+1} W_L ⋯ W_1` whose
//! first `L` layers are square. Full-batch gradient descent with a small step
//! stands in for gradient flow, with time `t = step · lr`.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{dot, random_orthogonal, svd, Matrix, Rng, SvdResult};
use crate::nn::{backward, Activation, Batch, LossSpec, Model, OptState, Reduction, sgd_step};

/// Radicands down to this negative value are treated as round-off and clamped to zero.
const RADICAND_SLACK: f64 = -1e-10;
/// Adjacent singular values closer than this mark a record as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-9;
/// Points where both the finite difference and the prediction are below this are skipped.
pub const RESIDUAL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearStack {
    pub model: Model,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadInit {
    /// All-zero classifier.
    Zero,
    /// `scale` times `C` orthonormal rows.
    Orthogonal(f64),
}

impl LinearStack {
    pub fn new(weights: Vec<Matrix>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::invalid("a linear stack needs at least one layer and a head"));
        }
        Ok(LinearStack {
            model: Model::from_weights(weights, Activation::None)?,
        })
    }

    pub fn depth(&self) -> usize {
        self.model.depth()
    }

    pub fn layer(&self, i: usize) -> &Matrix {
        &self.model.layers[i].weight
    }

    pub fn head(&self) -> &Matrix {
        self.layer(self.depth())
    }

    /// `Π = W_L ⋯ W_1`.
    pub fn product(&self) -> Matrix {
        self.model.product().expect("validated shapes")
    }
}

/// `W_i = s·Q_i` for `i ≤ L` with independent orthogonal `Q_i`, on `dims =
/// [d, …, d, C]` (`L + 1` copies of `d`). Satisfies `W_{i+1}ᵀW_{i+1} = W_iW_iᵀ = s²I`.
pub fn balanced_init(dims: &[usize], s: f64, head: HeadInit, rng: &mut Rng) -> Result<LinearStack> {
    if dims.len() < 3 {
        return Err(Error::invalid("dims must list at least input, one hidden size and classes"));
    }
    let d = dims[0];
    let classes = *dims.last().unwrap();
    if d == 0 || classes == 0 || dims[..dims.len() - 1].iter().any(|&x| x != d) {
        return Err(Error::invalid(format!(
            "balanced init needs equal representation dims, got {dims:?}"
        )));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::invalid("scale must be non-negative"));
    }
    let depth = dims.len() - 2;
    let mut weights = Vec::with_capacity(depth + 1);
    for _ in 0..depth {
        weights.push(random_orthogonal(d, rng)?.scale(s));
    }
    let head_w = match head {
        HeadInit::Zero => Matrix::zeros(classes, d),
        HeadInit::Orthogonal(scale) => {
            let n = d.max(classes);
            let q = random_orthogonal(n, rng)?;
            Matrix::from_fn(classes, d, |r, c| scale * q[(r, c)])
        }
    };
    weights.push(head_w);
    LinearStack::new(weights)
}

/// `max_j ‖W_j W_jᵀ − W_{j+1}ᵀ W_{j+1}‖_F` over consecutive representation layers.
pub fn balancedness_gap(stack: &LinearStack) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..stack.depth().saturating_sub(1) {
        let a = stack.layer(j).matmul_nt(stack.layer(j)).expect("shape");
        let b = stack.layer(j + 1).matmul_tn(stack.layer(j + 1)).expect("shape");
        if a.shape() != b.shape() {
            return f64::INFINITY;
        }
        worst = worst.max(a.sub(&b).expect("shape").frobenius());
    }
    worst
}

/// Per-class statistics of a batch under the current model.
#[derive(Debug, Clone)]
pub struct ClassStats {
    /// `μ_c = N_c / N`.
    pub mu: Vec<f64>,
    /// `C × C`, column `c` is `γ̄_c`.
    pub gamma_bar: Matrix,
    /// `d_in × C`, column `c` is `X̄_c`.
    pub x_bar: Matrix,
}

pub fn class_stats(stack: &LinearStack, batch: &Batch) -> Result<ClassStats> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let probs = stack.model.forward(&batch.x)?.probs;
    let c = batch.classes;
    let d = batch.x.rows();
    let mut counts = vec![0usize; c];
    let mut gamma_bar = Matrix::zeros(probs.rows(), c);
    let mut x_bar = Matrix::zeros(d, c);
    for (j, &y) in batch.y.iter().enumerate() {
        counts[y] += 1;
        for r in 0..probs.rows() {
            gamma_bar[(r, y)] += probs[(r, j)];
        }
        for r in 0..d {
            x_bar[(r, y)] += batch.x[(r, j)];
        }
    }
    for (cl, &n) in counts.iter().enumerate() {
        if n > 0 {
            for r in 0..gamma_bar.rows() {
                gamma_bar[(r, cl)] /= n as f64;
            }
            for r in 0..d {
                x_bar[(r, cl)] /= n as f64;
            }
        }
    }
    let nf = batch.len() as f64;
    Ok(ClassStats {
        mu: counts.iter().map(|&n| n as f64 / nf).collect(),
        gamma_bar,
        x_bar,
    })
}

/// `G = Σ_c μ_c (e_c − γ̄_c) X̄_cᵀ`, a `C × d_in` matrix. Absent classes contribute nothing.
///
/// `N·G` equals `(Y − Γ)Xᵀ` only up to the within-class cross-covariance of
/// softmax outputs and inputs; see [`within_class_cross_covariance`].
pub fn compute_g(stack: &LinearStack, batch: &Batch) -> Result<Matrix> {
    let st = class_stats(stack, batch)?;
    let c = batch.classes;
    let mut g = Matrix::zeros(c, batch.x.rows());
    for cl in 0..c {
        if st.mu[cl] == 0.0 {
            continue;
        }
        for r in 0..c {
            let e = if r == cl { 1.0 } else { 0.0 };
            let coef = st.mu[cl] * (e - st.gamma_bar[(r, cl)]);
            if coef == 0.0 {
                continue;
            }
            for s in 0..g.cols() {
                g[(r, s)] += coef * st.x_bar[(s, cl)];
            }
        }
    }
    Ok(g)
}

/// `(Y − Γ) Xᵀ` evaluated directly from the per-sample softmax outputs.
pub fn residual_times_inputs(stack: &LinearStack, batch: &Batch) -> Result<Matrix> {
    let probs = stack.model.forward(&batch.x)?.probs;
    let resid = batch.one_hot().sub(&probs)?;
    resid.matmul_nt(&batch.x)
}

/// `Σ_c Σ_{i∈c} (γ_i − γ̄_c)(X_i − X̄_c)ᵀ`, so that `(Y − Γ)Xᵀ = N·G − this`.
/// It vanishes when the softmax output or the input is constant within each class.
pub fn within_class_cross_covariance(stack: &LinearStack, batch: &Batch) -> Result<Matrix> {
    let st = class_stats(stack, batch)?;
    let probs = stack.model.forward(&batch.x)?.probs;
    let (c, d) = (probs.rows(), batch.x.rows());
    let mut out = Matrix::zeros(c, d);
    for (j, &y) in batch.y.iter().enumerate() {
        for r in 0..c {
            let dg = probs[(r, j)] - st.gamma_bar[(r, y)];
            for s in 0..d {
                out[(r, s)] += dg * (batch.x[(s, j)] - st.x_bar[(s, y)]);
            }
        }
    }
    Ok(out)
}

/// Singular structure of a stack with the sign choices used by [`theorem1_rhs`].
#[derive(Debug, Clone)]
pub struct Spectra {
    pub pi: SvdResult,
    /// Head SVD with each pair flipped so that `u_k(Π) · v_{L+1,k} ≥ 0`.
    pub head: SvdResult,
}

impl Spectra {
    pub fn of(stack: &LinearStack) -> Result<Self> {
        let pi = svd(&stack.product())?;
        let mut head = svd(stack.head())?;
        for k in 0..head.s.len().min(pi.s.len()) {
            let vk = head.v.col(k);
            if dot(&pi.u.col(k), &vk) < 0.0 {
                let nv: Vec<f64> = vk.iter().map(|x| -x).collect();
                head.v.set_col(k, &nv);
                let nu: Vec<f64> = head.u.col(k).iter().map(|x| -x).collect();
                head.u.set_col(k, &nu);
            }
        }
        Ok(Spectra { pi, head })
    }

    /// Singular value `k` of the head, 0 beyond its rank count.
    pub fn head_sigma(&self, k: usize) -> f64 {
        self.head.s.get(k).copied().unwrap_or(0.0)
    }
}

/// `M_k = σ_{L+1,k}² − σ_k(Π)^{2/L}` for every `k` of `Π`. Head values beyond its
/// length count as zero.
pub fn conserved_m(stack: &LinearStack) -> Result<Vec<f64>> {
    let sp = Spectra::of(stack)?;
    Ok(m_from_spectra(&sp, stack.depth()))
}

fn m_from_spectra(sp: &Spectra, depth: usize) -> Vec<f64> {
    let p = 2.0 / depth as f64;
    sp.pi
        .s
        .iter()
        .enumerate()
        .map(|(k, &s)| sp.head_sigma(k).powi(2) - s.powf(p))
        .collect()
}

/// `N·L·σ_k^{2−2/L}·√(σ_k^{2/L} + M_k)·u_{L+1,k}ᵀ G v_k`.
///
/// Returns 0 for `k` at or beyond the head's singular-value count, where no
/// `u_{L+1,k}` exists.
pub fn theorem1_rhs(stack: &LinearStack, batch: &Batch, m: &[f64], k: usize) -> Result<f64> {
    let sp = Spectra::of(stack)?;
    let g = compute_g(stack, batch)?;
    rhs_from_parts(&sp, &g, stack.depth(), batch.len(), m, k)
}

fn rhs_from_parts(sp: &Spectra, g: &Matrix, depth: usize, n: usize, m: &[f64], k: usize) -> Result<f64> {
    if k >= sp.pi.s.len() || k >= m.len() {
        return Err(Error::invalid(format!("singular index {k} out of range")));
    }
    if k >= sp.head.s.len() {
        return Ok(0.0);
    }
    let l = depth as f64;
    let sigma = sp.pi.s[k];
    let mut radicand = sigma.powf(2.0 / l) + m[k];
    if radicand < 0.0 {
        if radicand < RADICAND_SLACK {
            return Err(Error::NumericalFailure {
                context: format!("negative radicand for k={k}"),
                residual: Some(radicand),
            });
        }
        radicand = 0.0;
    }
    let gv = g.matmul(&Matrix::from_vec(g.cols(), 1, sp.pi.v.col(k))?)?;
    let proj = dot(&sp.head.u.col(k), gv.as_slice());
    Ok(n as f64 * l * sigma.powf(2.0 - 2.0 / l) * radicand.sqrt() * proj)
}

/// `|u_k(Π)ᵀ v_{L+1,k′}|` at row `k′`, column `k`.
pub fn alignment_matrix(stack: &LinearStack) -> Result<Matrix> {
    let sp = Spectra::of(stack)?;
    let rows = sp.head.v.cols();
    let cols = sp.pi.u.cols();
    Ok(Matrix::from_fn(rows, cols, |kp, k| {
        dot(&sp.pi.u.col(k), &sp.head.v.col(kp)).abs()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub lr: f64,
    pub steps: usize,
    pub record_every: usize,
    pub reduction: Reduction,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            lr: 1e-4,
            steps: 5000,
            record_every: 10,
            reduction: Reduction::Sum,
        }
    }
}

/// One snapshot of the trajectory.
#[derive(Debug, Clone)]
pub struct FlowRecord {
    pub step: usize,
    pub time: f64,
    pub loss: f64,
    pub sigma: Vec<f64>,
    pub head_sigma: Vec<f64>,
    pub m: Vec<f64>,
    pub rhs: Vec<f64>,
    pub gap: f64,
}

/// Per `(record, k)` comparison of the finite-difference rate with the prediction.
#[derive(Debug, Clone, Serialize)]
pub struct TracePoint {
    pub step: usize,
    pub time: f64,
    pub k: usize,
    pub sigma: f64,
    pub fd: Option<f64>,
    pub rhs: f64,
    pub residual: Option<f64>,
    pub degenerate: bool,
    pub gap: f64,
    pub m: f64,
}

#[derive(Debug, Clone)]
pub struct TheoryTrace {
    pub config: FlowConfig,
    pub depth: usize,
    pub n: usize,
    pub records: Vec<FlowRecord>,
    pub points: Vec<TracePoint>,
    /// The final stack.
    pub stack: LinearStack,
    /// Alignment matrix at the final step.
    pub alignment: Matrix,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

impl TheoryTrace {
    /// Residuals of points that are interior, non-degenerate and above the floor.
    pub fn valid_residuals(&self) -> Vec<f64> {
        self.points.iter().filter_map(|p| p.residual).collect()
    }

    pub fn median_residual(&self) -> Option<f64> {
        median(&mut self.valid_residuals())
    }

    /// `max_t` balancedness gap.
    pub fn max_gap(&self) -> f64 {
        self.records.iter().map(|r| r.gap).fold(0.0, f64::max)
    }

    /// Per-k `max_t |M_k(t) − M_k(0)|`.
    pub fn m_drift(&self) -> Vec<f64> {
        let m0 = &self.records[0].m;
        let mut drift = vec![0.0f64; m0.len()];
        for r in &self.records {
            for (k, (a, b)) in r.m.iter().zip(m0).enumerate() {
                drift[k] = drift[k].max((a - b).abs());
            }
        }
        drift
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn summary_json(&self) -> Value {
        json!({
            "records": self.records.len(),
            "valid_points": self.valid_residuals().len(),
            "median_residual": self.median_residual(),
            "max_gap": self.max_gap(),
            "m_drift": self.m_drift(),
            "final_loss": self.final_loss(),
        })
    }

    /// CSV with columns `step,time,k,sigma_k,fd,rhs,residual,gap,M_k`; `fd` and
    /// `residual` are empty where unavailable or excluded.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::analysis::csv_err(path, e))?;
        w.write_record(["step", "time", "k", "sigma_k", "fd", "rhs", "residual", "gap", "M_k"])
            .map_err(|e| crate::analysis::csv_err(path, e))?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for p in &self.points {
            w.write_record([
                p.step.to_string(),
                format!("{:e}", p.time),
                p.k.to_string(),
                format!("{:e}", p.sigma),
                opt(p.fd),
                format!("{:e}", p.rhs),
                opt(p.residual),
                format!("{:e}", p.gap),
                format!("{:e}", p.m),
            ])
            .map_err(|e| crate::analysis::csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn snapshot(stack: &LinearStack, batch: &Batch, step: usize, lr: f64, m0: Option<&[f64]>, reduction: Reduction) -> Result<FlowRecord> {
    let sp = Spectra::of(stack)?;
    let depth = stack.depth();
    let m = m_from_spectra(&sp, depth);
    let m_ref = m0.unwrap_or(&m).to_vec();
    let g = compute_g(stack, batch)?;
    let rhs = (0..sp.pi.s.len())
        .map(|k| rhs_from_parts(&sp, &g, depth, batch.len(), &m_ref, k))
        .collect::<Result<Vec<_>>>()?;
    let f = stack.model.forward(&batch.x)?;
    let loss = crate::nn::cross_entropy(&f.probs, &batch.y, reduction)?;
    Ok(FlowRecord {
        step,
        time: step as f64 * lr,
        loss,
        sigma: sp.pi.s.clone(),
        head_sigma: sp.head.s.clone(),
        m,
        rhs,
        gap: balancedness_gap(stack),
    })
}

/// Full-batch GD on cross-entropy, recording spectra, predicted rates and
/// conservation diagnostics every `record_every` steps. The prediction uses
/// `M_k` from the initial record.
pub fn run_gradient_flow(stack: LinearStack, batch: &Batch, cfg: &FlowConfig) -> Result<TheoryTrace> {
    if !(cfg.lr > 0.0) || cfg.record_every == 0 {
        return Err(Error::invalid("lr must be positive and record_every >= 1"));
    }
    if stack.model.input_dim() != batch.x.rows() || stack.model.classes() != batch.classes {
        return Err(Error::invalid("stack does not match batch dimensions"));
    }
    let spec = LossSpec {
        reduction: cfg.reduction,
        ..LossSpec::default()
    };
    let mut stack = stack;
    let mut opt = OptState::new(&stack.model, cfg.lr, 0.0, 0.0);
    let first = snapshot(&stack, batch, 0, cfg.lr, None, cfg.reduction)?;
    let m0 = first.m.clone();
    let mut records = vec![first];
    for step in 1..=cfg.steps {
        let (g, obj) = backward(&stack.model, batch, &spec)?;
        if !obj.ce.is_finite() {
            return Err(Error::NumericalFailure {
                context: format!("loss diverged at step {step}"),
                residual: None,
            });
        }
        sgd_step(&mut stack.model, &g, &mut opt).map_err(|_| Error::NumericalFailure {
            context: format!("non-finite gradient at step {step}"),
            residual: None,
        })?;
        if !stack.model.is_finite() {
            return Err(Error::NumericalFailure {
                context: format!("weights diverged at step {step}"),
                residual: None,
            });
        }
        if step % cfg.record_every == 0 {
            records.push(snapshot(&stack, batch, step, cfg.lr, Some(&m0), cfg.reduction)?);
        }
    }

    let h = cfg.record_every as f64 * cfg.lr;
    let mut points = Vec::new();
    for (i, r) in records.iter().enumerate() {
        for k in 0..r.sigma.len() {
            let fd = (i > 0 && i + 1 < records.len())
                .then(|| (records[i + 1].sigma[k] - records[i - 1].sigma[k]) / (2.0 * h));
            let degenerate = [i.checked_sub(1), Some(i), Some(i + 1)]
                .into_iter()
                .flatten()
                .filter_map(|j| records.get(j))
                .any(|rec| {
                    (k > 0 && (rec.sigma[k - 1] - rec.sigma[k]).abs() < DEGENERACY_GAP)
                        || (k + 1 < rec.sigma.len() && (rec.sigma[k] - rec.sigma[k + 1]).abs() < DEGENERACY_GAP)
                });
            let rhs = r.rhs[k];
            let residual = fd.and_then(|fd| {
                if degenerate || (fd.abs() < RESIDUAL_FLOOR && rhs.abs() < RESIDUAL_FLOOR) {
                    None
                } else {
                    Some((fd - rhs).abs() / fd.abs().max(rhs.abs()).max(RESIDUAL_FLOOR))
                }
            });
            points.push(TracePoint {
                step: r.step,
                time: r.time,
                k,
                sigma: r.sigma[k],
                fd,
                rhs,
                residual,
                degenerate,
                gap: r.gap,
                m: r.m[k],
            });
        }
    }
    let alignment = alignment_matrix(&stack)?;
    Ok(TheoryTrace {
        config: *cfg,
        depth: stack.depth(),
        n: batch.len(),
        records,
        points,
        stack,
        alignment,
    })
}

/// GD until the loss drops below `target` or `max_steps` is reached. Returns the
/// number of steps taken and the final loss.
pub fn train_until(stack: &mut LinearStack, batch: &Batch, lr: f64, reduction: Reduction, target: f64, max_steps: usize) -> Result<(usize, f64)> {
    let spec = LossSpec {
        reduction,
        ..LossSpec::default()
    };
    let mut opt = OptState::new(&stack.model, lr, 0.0, 0.0);
    for step in 0..max_steps {
        let (g, obj) = backward(&stack.model, batch, &spec)?;
        if obj.ce < target {
            return Ok((step, obj.ce));
        }
        sgd_step(&mut stack.model, &g, &mut opt)?;
    }
    let f = stack.model.forward(&batch.x)?;
    Ok((max_steps, crate::nn::cross_entropy(&f.probs, &batch.y, reduction)?))
}
