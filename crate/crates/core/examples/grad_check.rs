//! Finite-difference check of the hand-written backward pass, with and without
//! the decorrelation and proximal terms.
//!
//! cargo run --example grad_check

use feddecorr::decorr::DEFAULT_EPS;
use feddecorr::linalg::Rng;
use feddecorr::nn::{backward, grad_check, Activation, Batch, LossSpec, Model, Prox, Reduction};

fn main() -> feddecorr::Result<()> {
    let mut rng = Rng::new(1, 0);
    let model = Model::mlp(&[6, 10, 8, 3], Activation::Relu, true, &mut rng)?;
    let x = rng.gaussian_matrix(6, 24);
    let y = (0..24).map(|i| i % 3).collect();
    let batch = Batch::new(x, y, 3)?;
    let anchor = Model::mlp(&[6, 10, 8, 3], Activation::Relu, true, &mut rng)?;

    let specs = [
        ("cross-entropy", LossSpec::default()),
        (
            "+ decorrelation (β = 0.1)",
            LossSpec {
                beta: 0.1,
                ..LossSpec::default()
            },
        ),
        (
            "+ proximal term (μ = 0.01)",
            LossSpec {
                beta: 0.1,
                prox: Some(Prox {
                    mu: 0.01,
                    anchor: &anchor,
                }),
                reduction: Reduction::Mean,
                eps: DEFAULT_EPS,
            },
        ),
    ];
    for (name, spec) in &specs {
        let (_, obj) = backward(&model, &batch, spec)?;
        let err = grad_check(&model, &batch, spec, 1e-5)?;
        println!("{name:<28} objective {:.5}  max relative error {err:.2e}", obj.total(spec.beta));
    }
    Ok(())
}
