use super::{orient, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct EighResult {
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

fn off_diag_frobenius(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigh(a: &Matrix) -> Result<EighResult> {
    if !a.is_square() {
        return Err(Error::invalid(format!(
            "sym_eigh needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    if !a.is_finite() {
        return Err(Error::invalid("sym_eigh: non-finite entries"));
    }
    let scale = a.max_abs().max(1.0);
    if a.asymmetry() >= 1e-9 * scale {
        return Err(Error::invalid(format!(
            "sym_eigh: asymmetry {:.3e} exceeds tolerance",
            a.asymmetry()
        )));
    }
    let n = a.rows();
    // Symmetrise so tiny input asymmetry cannot bias the rotations.
    let mut m = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let threshold = REL_TOL * m.frobenius();

    let mut converged = off_diag_frobenius(&m) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_diag_frobenius(&m) <= threshold;
    }
    if !converged {
        return Err(Error::NumericalFailure {
            context: format!("Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"),
            residual: Some(off_diag_frobenius(&m)),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.col(src);
        orient(&mut col);
        eigenvectors.set_col(dst, &col);
    }
    Ok(EighResult {
        eigenvalues,
        eigenvectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use proptest::prelude::*;

    fn check_contract(a: &Matrix, r: &EighResult) {
        let n = a.rows();
        for w in r.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let v = &r.eigenvectors;
        let vtv = v.matmul_tn(v).unwrap();
        assert!(vtv.max_abs_diff(&Matrix::identity(n)) < 1e-10);
        let recon = v
            .matmul(&Matrix::diag(&r.eigenvalues))
            .unwrap()
            .matmul_nt(v)
            .unwrap();
        assert!(recon.max_abs_diff(a) < 1e-8 * a.max_abs().max(1e-300) + 1e-300);
    }

    #[test]
    fn diagonal_input() {
        let a = Matrix::diag(&[1.0, 2.0]);
        let r = sym_eigh(&a).unwrap();
        assert_eq!(r.eigenvalues, vec![2.0, 1.0]);
    }

    #[test]
    fn zero_matrix() {
        let r = sym_eigh(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(r.eigenvalues, vec![0.0; 3]);
    }

    #[test]
    fn two_by_two_hand_solved() {
        // characteristic polynomial (2-λ)² − 1 = 0 → λ ∈ {3, 1}
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let r = sym_eigh(&a).unwrap();
        assert!((r.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((r.eigenvalues[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = r.eigenvectors.col(0);
        assert!((v0[0] - h).abs() < 1e-14 && (v0[1] - h).abs() < 1e-14);
        let v1 = r.eigenvectors.col(1);
        assert!((v1[0].abs() - h).abs() < 1e-14 && (v1[0] + v1[1]).abs() < 1e-14);
        check_contract(&a, &r);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            sym_eigh(&Matrix::zeros(2, 3)),
            Err(Error::InvalidArgument(_))
        ));
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigh(&a), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sign_convention() {
        let mut rng = Rng::new(3, 0);
        let g = rng.gaussian_matrix(6, 6);
        let a = g.matmul_tn(&g).unwrap();
        let r = sym_eigh(&a).unwrap();
        for c in 0..6 {
            let col = r.eigenvectors.col(c);
            let big = col.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn psd_properties(seed in any::<u64>(), n in 1usize..24, k in 1usize..30) {
            let mut rng = Rng::new(seed, 0);
            let g = rng.gaussian_matrix(k, n);
            let a = g.matmul_tn(&g).unwrap();
            let r = sym_eigh(&a).unwrap();
            check_contract(&a, &r);
            let amax = a.max_abs();
            for &l in &r.eigenvalues {
                prop_assert!(l >= -1e-10 * amax);
            }
            let tr: f64 = r.eigenvalues.iter().sum();
            prop_assert!((tr - a.trace()).abs() <= 1e-9 * a.trace().abs().max(1e-300));
        }

        #[test]
        fn indefinite_symmetric(seed in any::<u64>(), n in 1usize..16) {
            let mut rng = Rng::new(seed, 1);
            let g = rng.gaussian_matrix(n, n);
            let a = g.add(&g.transpose()).unwrap();
            let r = sym_eigh(&a).unwrap();
            check_contract(&a, &r);
            let tr: f64 = r.eigenvalues.iter().sum();
            prop_assert!((tr - a.trace()).abs() <= 1e-9 * a.frobenius().max(1.0));
        }
    }
}
