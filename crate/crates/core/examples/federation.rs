//! FedAvg, FedProx and FedAvgM on a heterogeneous split, each with and without
//! the decorrelation term.
//!
//! cargo run --release --example federation

use feddecorr::cli::{self, parse_config};
use feddecorr::fed::Method;

fn main() -> feddecorr::Result<()> {
    let mut cfg = parse_config(include_str!("../configs/collapse.toml"))?;
    cfg.fed.rounds = 15;
    cfg.fed.local_epochs = 5;
    cfg.partition.alpha = feddecorr::data::Concentration::Finite(0.1);
    println!("method    beta  accuracy  effective rank");
    for method in [Method::FedAvg, Method::FedProx, Method::FedAvgM] {
        for beta in [0.0, 0.1] {
            let mut c = cfg.clone();
            c.fed.method = method;
            c.fed.beta = beta;
            let out = cli::train(&c)?;
            println!(
                "{:<9} {beta:<5} {:.4}    {:.3}",
                format!("{method:?}").to_lowercase(),
                out.final_accuracy(),
                out.global.effective_rank
            );
        }
    }
    Ok(())
}
