//! Correlation statistics of representation batches and the regularizers built on them.
//!
//! Batches here are `N × d` with samples as rows. Statistics are population
//! statistics (divide by `N`), so correlation diagonals are exactly one.
//! Columns whose population std falls below the guard `eps` are zeroed and
//! receive no gradient.

use crate::error::{Error, Result};
use crate::linalg::{sym_eigh, Matrix};

pub const DEFAULT_EPS: f64 = 1e-8;

/// Z-scored batch plus the statistics needed to differentiate through it.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub zhat: Matrix,
    pub std: Vec<f64>,
    /// `false` for guarded (near-constant) columns.
    pub active: Vec<bool>,
}

fn require_batch(z: &Matrix) -> Result<()> {
    if z.rows() < 2 {
        return Err(Error::invalid(format!(
            "correlation statistics need at least 2 samples, got {}",
            z.rows()
        )));
    }
    if z.cols() == 0 {
        return Err(Error::invalid("representation dimension is zero"));
    }
    Ok(())
}

pub fn standardize(z: &Matrix, eps: f64) -> Result<Standardized> {
    require_batch(z)?;
    if !(eps >= 0.0) {
        return Err(Error::invalid("z-score guard must be non-negative"));
    }
    let (n, d) = z.shape();
    let nf = n as f64;
    let mut zhat = Matrix::zeros(n, d);
    let mut std = vec![0.0; d];
    let mut active = vec![false; d];
    for j in 0..d {
        let mean = (0..n).map(|i| z[(i, j)]).sum::<f64>() / nf;
        let var = (0..n).map(|i| (z[(i, j)] - mean).powi(2)).sum::<f64>() / nf;
        let s = var.sqrt();
        std[j] = s;
        if s < eps || s == 0.0 {
            continue;
        }
        active[j] = true;
        for i in 0..n {
            zhat[(i, j)] = (z[(i, j)] - mean) / s;
        }
    }
    Ok(Standardized { zhat, std, active })
}

/// Column-wise z-score with population statistics.
pub fn zscore(z: &Matrix, eps: f64) -> Result<Matrix> {
    Ok(standardize(z, eps)?.zhat)
}

/// `K = ẐᵀẐ / N` on the z-scored batch.
pub fn correlation_matrix(z: &Matrix, eps: f64) -> Result<Matrix> {
    let s = standardize(z, eps)?;
    Ok(corr_from_zhat(&s.zhat))
}

fn corr_from_zhat(zhat: &Matrix) -> Matrix {
    let n = zhat.rows() as f64;
    let mut k = zhat.matmul_tn(zhat).expect("shape").scale(1.0 / n);
    // Force exact symmetry.
    let d = k.rows();
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `‖K‖²_F / d²`.
pub fn feddecorr_loss(z: &Matrix, eps: f64) -> Result<f64> {
    let k = correlation_matrix(z, eps)?;
    let d = k.rows() as f64;
    Ok(k.frobenius_sq() / (d * d))
}

/// Exact gradient of [`feddecorr_loss`] with respect to the raw batch, including
/// the dependence of the column means and stds on `Z`.
pub fn feddecorr_grad(z: &Matrix, eps: f64) -> Result<Matrix> {
    let s = standardize(z, eps)?;
    let (n, d) = z.shape();
    let k = corr_from_zhat(&s.zhat);
    let coef = 4.0 / (n as f64 * (d * d) as f64);
    let g_hat = s.zhat.matmul(&k)?.scale(coef);
    let nf = n as f64;
    let mut grad = Matrix::zeros(n, d);
    for j in 0..d {
        if !s.active[j] {
            continue;
        }
        let mut mg = 0.0;
        let mut mgz = 0.0;
        for i in 0..n {
            mg += g_hat[(i, j)];
            mgz += g_hat[(i, j)] * s.zhat[(i, j)];
        }
        mg /= nf;
        mgz /= nf;
        let inv = 1.0 / s.std[j];
        for i in 0..n {
            grad[(i, j)] = inv * (g_hat[(i, j)] - mg - s.zhat[(i, j)] * mgz);
        }
    }
    Ok(grad)
}

fn require_symmetric(a: &Matrix, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::invalid(format!("{what} must be square")));
    }
    if a.asymmetry() > 1e-9 * a.max_abs().max(1.0) {
        return Err(Error::invalid(format!("{what} must be symmetric")));
    }
    Ok(())
}

/// `(1/d) Σ (λ_i − λ̄)²` over the eigenvalues of a symmetric `Σ`.
pub fn l_singular(sigma: &Matrix) -> Result<f64> {
    require_symmetric(sigma, "covariance")?;
    let lam = sym_eigh(sigma)?.eigenvalues;
    let d = lam.len() as f64;
    let mean = lam.iter().sum::<f64>() / d;
    Ok(lam.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / d)
}

/// `|Σ(λ_i − λ̄)² − (‖K‖²_F − d)|` with the left side from the eigensolver and
/// the right side from the entries directly.
pub fn prop1_residual(k: &Matrix) -> Result<f64> {
    require_symmetric(k, "correlation matrix")?;
    if k.diagonal().iter().any(|&v| (v - 1.0).abs() > 1e-10) {
        return Err(Error::invalid("correlation matrix diagonal must be 1"));
    }
    if k.as_slice().iter().any(|&v| v.abs() > 1.0 + 1e-9) {
        return Err(Error::invalid("correlation entries must lie in [-1, 1]"));
    }
    let lam = sym_eigh(k)?.eigenvalues;
    let d = lam.len() as f64;
    let mean = lam.iter().sum::<f64>() / d;
    let lhs: f64 = lam.iter().map(|l| (l - mean).powi(2)).sum();
    let rhs = k.frobenius_sq() - d;
    Ok((lhs - rhs).abs())
}

/// Population covariance of the batch columns.
pub fn batch_covariance(z: &Matrix) -> Result<Matrix> {
    require_batch(z)?;
    let (n, d) = z.shape();
    let nf = n as f64;
    let means: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| z[(i, j)]).sum::<f64>() / nf)
        .collect();
    let centered = Matrix::from_fn(n, d, |i, j| z[(i, j)] - means[j]);
    Ok(centered.matmul_tn(&centered)?.scale(1.0 / nf))
}

/// `½(‖Σ‖²_F − ‖diag Σ‖²)`: half the squared off-diagonal covariance mass.
pub fn decov_loss(z: &Matrix) -> Result<f64> {
    let c = batch_covariance(z)?;
    let diag: f64 = c.diagonal().iter().map(|v| v * v).sum();
    Ok(0.5 * (c.frobenius_sq() - diag))
}
