use super::{dot, norm, orient, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows × r` with `r = min(rows, cols)`.
    pub u: Matrix,
    /// Non-increasing, non-negative, length `r`.
    pub s: Vec<f64>,
    /// `cols × r`.
    pub v: Matrix,
}

/// Thin SVD by one-sided (Hestenes) Jacobi.
///
/// Works on the tall orientation; wide inputs are transposed first. Singular
/// vectors tied to zero singular values are completed to an orthonormal set by
/// Gram-Schmidt against the canonical basis.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::invalid("svd of an empty matrix"));
    }
    if !a.is_finite() {
        return Err(Error::invalid("svd: non-finite entries"));
    }
    if a.rows() < a.cols() {
        let t = svd(&a.transpose())?;
        return Ok(finish(t.v, t.s, t.u));
    }
    let (m, n) = a.shape();
    // Work column-wise: store columns contiguously.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let eps = 1e-15;
    // Columns this small relative to ‖A‖_F are rounding residue of a zero
    // singular value; their direction is noise and need not be orthogonalised.
    let negligible = (1e-15 * a.frobenius()).powi(2);
    let mut converged = false;
    let mut worst = 0.0;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        worst = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(rel);
                if rel <= eps {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure {
            context: format!("one-sided Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"),
            residual: Some(worst),
        });
    }

    let s: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut sv = Vec::with_capacity(n);
    let mut null = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let sig = s[src];
        v.set_col(dst, &vcols[src]);
        if sig > smax * 1e-14 && sig * sig > negligible {
            let ucol: Vec<f64> = cols[src].iter().map(|x| x / sig).collect();
            u.set_col(dst, &ucol);
            sv.push(sig);
        } else {
            sv.push(0.0);
            null.push(dst);
        }
    }
    complete_basis(&mut u, &null);
    Ok(finish(u, sv, v))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every other column.
fn complete_basis(u: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = u.rows();
    let mut filled: Vec<usize> = (0..u.cols()).filter(|c| !missing.contains(c)).collect();
    let mut e = 0;
    for &dst in missing {
        loop {
            let mut cand = vec![0.0; m];
            cand[e % m] = 1.0;
            e += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let col = u.col(f);
                    let d = dot(&cand, &col);
                    for (x, y) in cand.iter_mut().zip(&col) {
                        *x -= d * y;
                    }
                }
            }
            let nn = norm(&cand);
            if nn > 1e-6 {
                cand.iter_mut().for_each(|x| *x /= nn);
                u.set_col(dst, &cand);
                filled.push(dst);
                break;
            }
        }
    }
}

/// Applies the sign convention to the right vectors and carries the sign to the left ones.
fn finish(mut u: Matrix, s: Vec<f64>, mut v: Matrix) -> SvdResult {
    for k in 0..s.len() {
        let mut vk = v.col(k);
        let sign = orient(&mut vk);
        v.set_col(k, &vk);
        if sign < 0.0 {
            let uk: Vec<f64> = u.col(k).iter().map(|x| -x).collect();
            u.set_col(k, &uk);
        }
    }
    SvdResult { u, s, v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_orthogonal, sym_eigh, Rng};
    use proptest::prelude::*;

    fn check_contract(a: &Matrix, r: &SvdResult) {
        let k = a.rows().min(a.cols());
        assert_eq!(r.s.len(), k);
        for w in r.s.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(r.s.iter().all(|&x| x >= 0.0));
        let ik = Matrix::identity(k);
        assert!(r.u.matmul_tn(&r.u).unwrap().max_abs_diff(&ik) < 1e-10);
        assert!(r.v.matmul_tn(&r.v).unwrap().max_abs_diff(&ik) < 1e-10);
        let recon = r.u.matmul(&Matrix::diag(&r.s)).unwrap().matmul_nt(&r.v).unwrap();
        assert!(recon.max_abs_diff(a) < 1e-8 * a.max_abs().max(1.0));
    }

    #[test]
    fn diagonal_rectangular() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let r = svd(&a).unwrap();
        assert_eq!(r.s, vec![3.0, 2.0]);
        check_contract(&a, &r);
    }

    #[test]
    fn orthogonal_has_unit_spectrum() {
        let q = random_orthogonal(7, &mut Rng::new(11, 0)).unwrap();
        let r = svd(&q).unwrap();
        assert!(r.s.iter().all(|&x| (x - 1.0).abs() < 1e-10));
    }

    #[test]
    fn rank_one_hand_solved() {
        // AᵀA = [[2,2],[2,2]] has eigenvalues {4, 0}
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let r = svd(&a).unwrap();
        assert!((r.s[0] - 2.0).abs() < 1e-14);
        assert!(r.s[1].abs() < 1e-14);
        check_contract(&a, &r);
    }

    #[test]
    fn zero_and_wide() {
        let z = Matrix::zeros(3, 5);
        let r = svd(&z).unwrap();
        assert_eq!(r.s, vec![0.0; 3]);
        check_contract(&z, &r);
        assert!(svd(&Matrix::zeros(0, 3)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_contract(seed in any::<u64>(), m in 1usize..20, n in 1usize..20, rank in 1usize..20) {
            let mut rng = Rng::new(seed, 0);
            let k = rank.min(m).min(n);
            let a = rng.gaussian_matrix(m, k).matmul(&rng.gaussian_matrix(k, n)).unwrap();
            let r = svd(&a).unwrap();
            check_contract(&a, &r);
            let ss: f64 = r.s.iter().map(|x| x * x).sum();
            prop_assert!((ss - a.frobenius_sq()).abs() <= 1e-8 * a.frobenius_sq());
        }

        #[test]
        fn agrees_with_eigh_on_psd(seed in any::<u64>(), n in 1usize..16) {
            let mut rng = Rng::new(seed, 2);
            let g = rng.gaussian_matrix(n + 3, n);
            let a = g.matmul_tn(&g).unwrap();
            let s = svd(&a).unwrap().s;
            let l = sym_eigh(&a).unwrap().eigenvalues;
            for (x, y) in s.iter().zip(&l) {
                prop_assert!((x - y).abs() <= 1e-8 * s[0]);
            }
        }
    }
}
