//! Global and local representation spectra as the client split grows more skewed.
//! Writes spectrum CSV/JSON files under `target/collapse/`.
//!
//! cargo run --release --example dimensional_collapse [seeds]

use std::path::Path;

use feddecorr::analysis::emit_reports;
use feddecorr::cli::{self, parse_config, sweep_job};

fn main() -> feddecorr::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = parse_config(include_str!("../configs/collapse.toml"))?;
    let out = Path::new("target/collapse");
    std::fs::create_dir_all(out).map_err(|e| feddecorr::Error::Io {
        path: out.into(),
        source: e,
    })?;
    let mut reports = Vec::new();
    println!("alpha  beta  accuracy  erank(global)  erank(local)  significant(global)");
    for &alpha in &cfg.sweep.alphas {
        for &beta in &cfg.sweep.betas {
            let (mut acc, mut g, mut l, mut n) = (0.0, 0.0, 0.0, 0.0);
            for seed in 0..seeds {
                let o = cli::train(&sweep_job(&cfg, alpha, beta, seed))?;
                acc += o.final_accuracy();
                g += o.global.effective_rank;
                l += o.local.as_ref().map_or(f64::NAN, |r| r.effective_rank);
                n += o.global.n_significant as f64;
                if seed == 0 {
                    let mut r = o.global.clone();
                    r.model_tag = format!("global_alpha{alpha}_beta{beta}");
                    reports.push(r);
                }
            }
            let s = seeds as f64;
            println!(
                "{:<6} {beta:<5} {:.4}    {:>8.3}       {:>8.3}      {:.1}",
                alpha.to_string(),
                acc / s,
                g / s,
                l / s,
                n / s
            );
        }
    }
    emit_reports(&reports, &out.join("spectra.csv"), &out.join("spectra.json"))?;
    println!("spectra written to {}", out.display());
    Ok(())
}
