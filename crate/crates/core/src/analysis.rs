//! Representation spectra and collapse metrics.

use std::path::Path;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sym_eigh, Matrix};
use crate::nn::Model;

/// Default significance threshold on `λ / λ_max` (log10 τ = −2).
pub const DEFAULT_TAU: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Descending eigenvalues of the covariance, clamped at zero.
    pub values: Vec<f64>,
    pub log10: Vec<f64>,
    /// Count of `λ / λ_max > τ`.
    pub n_significant: usize,
    /// 0 for an all-zero spectrum.
    pub effective_rank: f64,
    pub tau: f64,
    pub model_tag: String,
    pub dataset_tag: String,
}

/// `(1/N) Σ (z_i − z̄)(z_i − z̄)ᵀ` over the model's representations of `data`.
pub fn representation_covariance(model: &Model, data: &Dataset) -> Result<Matrix> {
    if data.is_empty() {
        return Err(Error::invalid("covariance of an empty dataset"));
    }
    let z = model.represent(&data.features)?;
    covariance_columns(&z)
}

/// Covariance of the columns of `z` (`d × N`) around their mean.
pub fn covariance_columns(z: &Matrix) -> Result<Matrix> {
    let (d, n) = z.shape();
    if n == 0 {
        return Err(Error::invalid("covariance of zero samples"));
    }
    let nf = n as f64;
    let mut centered = z.clone();
    for r in 0..d {
        let row = centered.row_mut(r);
        let mean = row.iter().sum::<f64>() / nf;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    let mut s = centered.matmul_nt(&centered)?.scale(1.0 / nf);
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// `exp(−Σ p_i ln p_i)` with `p_i = λ_i / Σλ`.
pub fn effective_rank(values: &[f64]) -> Result<f64> {
    if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("spectrum must be finite and non-negative"));
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("effective rank of an all-zero spectrum"));
    }
    let h: f64 = values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    Ok(h.exp())
}

pub fn spectrum(sigma: &Matrix, tau: f64, model_tag: &str, dataset_tag: &str) -> Result<SpectrumReport> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau must be positive"));
    }
    let values: Vec<f64> = sym_eigh(sigma)?
        .eigenvalues
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let top = values.first().copied().unwrap_or(0.0);
    let n_significant = if top > 0.0 {
        values.iter().filter(|&&v| v / top > tau).count()
    } else {
        0
    };
    let effective_rank = if top > 0.0 { effective_rank(&values)? } else { 0.0 };
    Ok(SpectrumReport {
        log10: values.iter().map(|v| v.log10()).collect(),
        values,
        n_significant,
        effective_rank,
        tau,
        model_tag: model_tag.into(),
        dataset_tag: dataset_tag.into(),
    })
}

/// Spectrum of the representation covariance of `model` on `data`.
pub fn model_spectrum(model: &Model, data: &Dataset, tau: f64, tag: &str) -> Result<SpectrumReport> {
    spectrum(&representation_covariance(model, data)?, tau, tag, &data.name)
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    tag: &'a str,
    dataset: &'a str,
    d: usize,
    tau: f64,
    n_significant: usize,
    effective_rank: f64,
}

/// Writes one CSV row per `(report, k)` as `tag,k,sigma,log10_sigma` and a JSON
/// array of per-report summaries.
pub fn emit_reports(reports: &[SpectrumReport], csv_path: &Path, json_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| csv_err(csv_path, e))?;
    w.write_record(["tag", "k", "sigma", "log10_sigma"])
        .map_err(|e| csv_err(csv_path, e))?;
    for r in reports {
        for (k, (v, l)) in r.values.iter().zip(&r.log10).enumerate() {
            w.write_record([
                r.model_tag.clone(),
                k.to_string(),
                format!("{v:e}"),
                format!("{l}"),
            ])
            .map_err(|e| csv_err(csv_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;

    let rows: Vec<SummaryRow> = reports
        .iter()
        .map(|r| SummaryRow {
            tag: &r.model_tag,
            dataset: &r.dataset_tag,
            d: r.values.len(),
            tau: r.tau,
            n_significant: r.n_significant,
            effective_rank: r.effective_rank,
        })
        .collect();
    let text = serde_json::to_string_pretty(&rows).expect("summary serializes");
    std::fs::write(json_path, text + "\n").map_err(|e| Error::io(json_path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GaussianMixture;
    use crate::linalg::Rng;
    use crate::nn::{Activation, Layer};
    use proptest::prelude::*;

    fn linear(ws: Vec<Matrix>) -> Model {
        Model::from_weights(ws, Activation::None).unwrap()
    }

    #[test]
    fn constant_map_has_zero_covariance() {
        let mut m = linear(vec![Matrix::zeros(3, 4), Matrix::zeros(2, 3)]);
        m.layers[0].bias = Some(vec![1.0, -2.0, 0.5]);
        let data = GaussianMixture::new(2, 4, 1.0, &mut Rng::new(0, 0))
            .unwrap()
            .sample(10, &mut Rng::new(0, 1), "t")
            .unwrap();
        let s = representation_covariance(&m, &data).unwrap();
        assert_eq!(s.max_abs(), 0.0);
        let r = spectrum(&s, DEFAULT_TAU, "m", "t").unwrap();
        assert_eq!((r.n_significant, r.effective_rank), (0, 0.0));
    }

    #[test]
    fn linear_covariance_factorizes() {
        let mut rng = Rng::new(1, 0);
        let w1 = rng.gaussian_matrix(5, 6);
        let w2 = rng.gaussian_matrix(4, 5);
        let m = linear(vec![w1.clone(), w2.clone(), rng.gaussian_matrix(3, 4)]);
        let data = GaussianMixture::new(3, 6, 2.0, &mut rng).unwrap().sample(30, &mut rng, "t").unwrap();
        let pi = w2.matmul(&w1).unwrap();
        let sx = covariance_columns(&data.features).unwrap();
        let want = pi.matmul(&sx).unwrap().matmul_nt(&pi).unwrap();
        let got = representation_covariance(&m, &data).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-9 * want.max_abs().max(1.0));

        // rank(Σ) ≤ rank(Π) for a rank-2 product
        let low = rng.gaussian_matrix(5, 2).matmul(&rng.gaussian_matrix(2, 6)).unwrap();
        let m = linear(vec![low, rng.gaussian_matrix(3, 5)]);
        let s = representation_covariance(&m, &data).unwrap();
        let top = sym_eigh(&s).unwrap().eigenvalues[0];
        let r = spectrum(&s, 1e-9, "m", "t").unwrap();
        assert!(r.n_significant <= 2, "{r:?} {top}");
    }

    #[test]
    fn identity_on_whitened_inputs() {
        let mut rng = Rng::new(2, 0);
        let x = rng.gaussian_matrix(4, 20000);
        let data = Dataset::new(x, vec![0; 20000], 2, "w").unwrap();
        let m = linear(vec![Matrix::identity(4), Matrix::zeros(2, 4)]);
        let s = representation_covariance(&m, &data).unwrap();
        assert!(s.max_abs_diff(&Matrix::identity(4)) < 0.05);
    }

    #[test]
    fn spectrum_examples() {
        let r = spectrum(&Matrix::identity(10), 0.01, "i", "-").unwrap();
        assert_eq!(r.n_significant, 10);
        assert!((r.effective_rank - 10.0).abs() < 1e-12);
        let r = spectrum(&Matrix::diag(&[1.0, 1e-5, 0.0]), 0.01, "d", "-").unwrap();
        assert_eq!(r.n_significant, 1);
    }

    #[test]
    fn effective_rank_examples() {
        assert!((effective_rank(&[2.0; 7]).unwrap() - 7.0).abs() < 1e-12);
        assert!((effective_rank(&[3.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        let v = [5.0, 2.0, 0.5, 0.1];
        let s: Vec<f64> = v.iter().map(|x| 7.0 * x).collect();
        assert!((effective_rank(&v).unwrap() - effective_rank(&s).unwrap()).abs() < 1e-12);
        assert!(effective_rank(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn emit_and_reparse() {
        let dir = tempfile::tempdir().unwrap();
        let (c, j) = (dir.path().join("s.csv"), dir.path().join("s.json"));
        emit_reports(&[], &c, &j).unwrap();
        assert_eq!(std::fs::read_to_string(&c).unwrap(), "tag,k,sigma,log10_sigma\n");

        let r = spectrum(&Matrix::diag(&[3.0, 0.02, 0.001]), DEFAULT_TAU, "m", "t").unwrap();
        emit_reports(std::slice::from_ref(&r), &c, &j).unwrap();
        let mut rd = csv::Reader::from_path(&c).unwrap();
        let sig: Vec<f64> = rd
            .records()
            .map(|rec| rec.unwrap()[2].parse::<f64>().unwrap())
            .collect();
        assert_eq!(sig.len(), 3);
        let top = sig[0];
        let n = sig.iter().filter(|&&v| v / top > DEFAULT_TAU).count();
        let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
        assert_eq!(summary[0]["n_significant"].as_u64().unwrap() as usize, n);
    }

    #[test]
    fn relu_rep_is_post_activation() {
        let m = Model {
            layers: vec![
                Layer {
                    weight: Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
                    bias: None,
                },
                Layer {
                    weight: Matrix::zeros(2, 2),
                    bias: None,
                },
            ],
            activation: Activation::Relu,
        };
        let z = m.represent(&Matrix::from_rows(&[vec![2.0, -3.0]]).unwrap()).unwrap();
        assert_eq!(z.as_slice(), &[2.0, 0.0, 0.0, 3.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn covariance_properties(seed in any::<u64>(), n in 3usize..60) {
            let mut rng = Rng::new(seed, 0);
            let m = Model::mlp(&[5, 7, 6, 3], Activation::Relu, true, &mut rng).unwrap();
            let data = GaussianMixture::new(3, 5, 2.0, &mut rng).unwrap().sample(n, &mut rng, "p").unwrap();
            let s = representation_covariance(&m, &data).unwrap();
            let d = s.rows() as f64;
            let lam = sym_eigh(&s).unwrap().eigenvalues;
            prop_assert!(*lam.last().unwrap() >= -1e-8 * s.trace() / d);

            let z = m.represent(&data.features).unwrap();
            let zc = covariance_columns(&z).unwrap();
            let nn = z.cols() as f64;
            let mut msq = 0.0;
            for j in 0..z.cols() {
                for r in 0..z.rows() {
                    let mean = z.row(r).iter().sum::<f64>() / nn;
                    msq += (z[(r, j)] - mean).powi(2);
                }
            }
            msq /= nn;
            prop_assert!((zc.trace() - msq).abs() <= 1e-9 * msq.max(1e-300));

            let mut perm: Vec<usize> = (0..data.len()).collect();
            rng.shuffle(&mut perm);
            let shuffled = data.subset(&perm);
            let a = spectrum(&s, DEFAULT_TAU, "a", "-").unwrap();
            let b = spectrum(&representation_covariance(&m, &shuffled).unwrap(), DEFAULT_TAU, "b", "-").unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-10 * a.values[0].max(1e-300));
            }
        }
    }
}
