//! The decorrelation penalty on a batch whose features share one latent factor,
//! next to the covariance-spectrum variance it stands in for.
//!
//! cargo run --example decorrelation

use feddecorr::decorr::{
    batch_covariance, correlation_matrix, decov_loss, feddecorr_loss, l_singular, prop1_residual, DEFAULT_EPS,
};
use feddecorr::linalg::{Matrix, Rng};

fn batch(shared: f64, rng: &mut Rng) -> Matrix {
    let (n, d) = (256, 8);
    let latent: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
    Matrix::from_fn(n, d, |i, _| shared * latent[i] + (1.0 - shared) * rng.gaussian())
}

fn main() -> feddecorr::Result<()> {
    let mut rng = Rng::new(3, 0);
    println!("shared  decorr    L_singular(K)  decov");
    for shared in [0.0, 0.25, 0.5, 0.75, 0.95] {
        let z = batch(shared, &mut rng);
        let k = correlation_matrix(&z, DEFAULT_EPS)?;
        println!(
            "{shared:>6}  {:.5}   {:.5}        {:.5}",
            feddecorr_loss(&z, DEFAULT_EPS)?,
            l_singular(&k)?,
            decov_loss(&z)?
        );
        assert!(prop1_residual(&k)? < 1e-9);
    }

    // Rescaling one feature leaves the correlation penalty alone but not DeCov.
    let z = batch(0.5, &mut rng);
    let stretched = Matrix::from_fn(z.rows(), z.cols(), |i, j| if j == 0 { 100.0 * z[(i, j)] } else { z[(i, j)] });
    println!(
        "\nfeature 0 scaled by 100: decorr {:.6} -> {:.6}, decov {:.4} -> {:.4}",
        feddecorr_loss(&z, DEFAULT_EPS)?,
        feddecorr_loss(&stretched, DEFAULT_EPS)?,
        decov_loss(&z)?,
        decov_loss(&stretched)?
    );
    println!("trace of the raw covariance: {:.3}", batch_covariance(&z)?.trace());
    Ok(())
}
