//! Trains a depth-3 linear network to low loss and prints how well the classifier's
//! right singular vectors line up with those of the feature product.
//!
//! cargo run --release --example alignment

use feddecorr::data::GaussianMixture;
use feddecorr::linalg::{Rng, Stream};
use feddecorr::nn::Reduction;
use feddecorr::theory::{alignment_matrix, balanced_init, train_until, HeadInit};

fn main() -> feddecorr::Result<()> {
    let (d, c) = (16, 10);
    let data = GaussianMixture::new(c, d, 5.0, &mut Rng::for_purpose(7, Stream::Data, 0, 0))?
        .sample(50, &mut Rng::for_purpose(7, Stream::Data, 1, 0), "separable")?;
    let batch = data.batch()?;
    let mut stack = balanced_init(&[d, d, d, d, c], 0.5, HeadInit::Orthogonal(0.1), &mut Rng::for_purpose(7, Stream::Theory, 0, 0))?;

    println!("before training:");
    show(&alignment_matrix(&stack)?);
    let (steps, loss) = train_until(&mut stack, &batch, 0.05, Reduction::Mean, 0.1, 200_000)?;
    println!("\nafter {steps} steps (loss {loss:.4}):");
    show(&alignment_matrix(&stack)?);
    Ok(())
}

fn show(a: &feddecorr::Matrix) {
    for r in 0..6 {
        let row: Vec<String> = (0..8).map(|k| format!("{:.2}", a[(r, k)])).collect();
        println!("  {}", row.join(" "));
    }
}
