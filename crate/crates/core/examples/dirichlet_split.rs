//! Label skew across clients for a range of Dirichlet concentrations.
//!
//! cargo run --example dirichlet_split

use feddecorr::data::{dirichlet_partition, synth_dataset, Concentration};
use feddecorr::linalg::Rng;

fn main() -> feddecorr::Result<()> {
    let data = synth_dataset(10, 16, 100, 3.0, &mut Rng::new(0, 0))?;
    for alpha in ["0.05", "0.5", "5", "inf"] {
        let alpha = Concentration::parse(alpha)?;
        let p = dirichlet_partition(&data.labels, data.classes, 5, alpha, 42, 2)?;
        let props = p.empirical_proportions(&data.labels, data.classes);
        println!("alpha = {alpha}  (redraws: {})", p.redraws);
        for k in 0..p.clients() {
            let counts: Vec<usize> = (0..data.classes)
                .map(|c| p.assignment[k].iter().filter(|&&i| data.labels[i] == c).count())
                .collect();
            let top = (0..data.classes).map(|c| props[(c, k)]).fold(0.0, f64::max);
            println!("  client {k}: {:>4} samples  per class {counts:?}  largest share {top:.2}", p.assignment[k].len());
        }
    }
    Ok(())
}
