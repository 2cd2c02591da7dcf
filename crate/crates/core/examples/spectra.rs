//! Dense symmetric eigendecomposition and SVD on a few small matrices.
//!
//! cargo run --example spectra

use feddecorr::linalg::{svd, sym_eigh, Matrix, Rng};

fn main() -> feddecorr::Result<()> {
    let a = Matrix::from_rows(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]])?;
    let e = sym_eigh(&a)?;
    println!("eigenvalues of A: {:?}", e.eigenvalues);
    let rebuilt = e
        .eigenvectors
        .matmul(&Matrix::diag(&e.eigenvalues))?
        .matmul(&e.eigenvectors.transpose())?;
    println!("max |V diag(λ) Vᵀ − A| = {:.2e}", rebuilt.max_abs_diff(&a));

    // A rank-2 product: the third singular value is zero up to round-off.
    let mut rng = Rng::new(7, 0);
    let b = rng.gaussian_matrix(5, 2).matmul(&rng.gaussian_matrix(2, 4))?;
    let s = svd(&b)?;
    println!("singular values of a rank-2 5x4 matrix: {:?}", s.s);
    let us = Matrix::from_fn(s.u.rows(), s.s.len(), |i, k| s.u[(i, k)] * s.s[k]);
    println!("max |U S Vᵀ − B| = {:.2e}", us.matmul_nt(&s.v)?.max_abs_diff(&b));
    Ok(())
}
