//! Federated training: client sampling, local SGD, and server aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::linalg::{Rng, Stream};
use crate::nn::{backward, objective, sgd_step, LossSpec, Model, OptState, Prox, Reduction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    FedAvg,
    FedProx,
    FedAvgM,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(Method::FedAvg),
            "fedprox" => Ok(Method::FedProx),
            "fedavgm" => Ok(Method::FedAvgM),
            _ => Err(Error::invalid(format!(
                "unknown method {s:?} (expected fedavg, fedprox or fedavgm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta: f64,
    pub method: Method,
    pub mu_prox: f64,
    pub rho_server: f64,
    pub sample_fraction: f64,
    pub seed: u64,
    /// z-score guard for the decorrelation term.
    pub eps: f64,
    /// Global-model spectrum cadence in rounds; the final round is always included. 0 means final only.
    pub spectrum_every: usize,
    /// Significance threshold on `λ/λ_max` for spectrum summaries.
    pub tau: f64,
    /// Train sampled clients on the rayon pool. Results do not depend on this flag.
    pub parallel: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 30,
            local_epochs: 10,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            beta: 0.1,
            method: Method::FedAvg,
            mu_prox: 1e-3,
            rho_server: 0.5,
            sample_fraction: 1.0,
            seed: 0,
            eps: crate::decorr::DEFAULT_EPS,
            spectrum_every: 10,
            tau: analysis::DEFAULT_TAU,
            parallel: false,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("fed.{field}"), msg));
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta", "must be non-negative");
        }
        if self.method == Method::FedProx && !(self.mu_prox > 0.0) {
            return bad("mu_prox", "must be positive for fedprox");
        }
        if self.method == Method::FedAvgM && !(0.0..1.0).contains(&self.rho_server) {
            return bad("rho_server", "must lie in [0, 1) for fedavgm");
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad("sample_fraction", "must lie in (0, 1]");
        }
        if !(self.eps >= 0.0) {
            return bad("eps", "must be non-negative");
        }
        if !(self.tau > 0.0) {
            return bad("tau", "must be positive");
        }
        Ok(())
    }
}

/// `⌈fraction·K⌉` distinct clients, ascending.
pub fn sample_clients(k: usize, fraction: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("sample fraction {fraction} not in (0, 1]")));
    }
    if k == 0 {
        return Err(Error::invalid("no clients to sample from"));
    }
    // 0.2 · 50 evaluates to 10.000000000000002; drop that round-off before the ceiling.
    let m = ((fraction * k as f64) - 1e-9).ceil().clamp(1.0, k as f64) as usize;
    if m == k {
        return Ok((0..k).collect());
    }
    let mut ids: Vec<usize> = (0..k).collect();
    rng.shuffle(&mut ids);
    let mut chosen = ids[..m].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

#[derive(Debug, Clone)]
pub struct LocalResult {
    pub model: Model,
    /// Mean objective over all minibatch steps, evaluated before each step.
    pub mean_loss: f64,
    pub steps: usize,
}

/// Local training on the samples `shard` of `data`, starting from a copy of `global`.
/// The optimizer's momentum buffer starts at zero.
pub fn local_train(global: &Model, data: &Dataset, shard: &[usize], cfg: &FedConfig, rng: &mut Rng) -> Result<LocalResult> {
    if shard.is_empty() {
        return Err(Error::invalid("empty client shard"));
    }
    if cfg.beta > 0.0 && shard.len() < 2 {
        return Err(Error::config(
            "fed.beta",
            format!("decorrelation needs >= 2 samples per client, shard has {}", shard.len()),
        ));
    }
    let prox = match cfg.method {
        Method::FedProx => Some(Prox {
            mu: cfg.mu_prox,
            anchor: global,
        }),
        _ => None,
    };
    let spec = LossSpec {
        beta: cfg.beta,
        prox,
        reduction: Reduction::Mean,
        eps: cfg.eps,
    };
    let mut model = global.clone();
    let mut opt = OptState::new(&model, cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut order = shard.to_vec();
    let mut loss_sum = 0.0;
    let mut steps = 0;
    for _ in 0..cfg.local_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch_of(chunk)?;
            let (g, obj) = backward(&model, &batch, &spec)?;
            sgd_step(&mut model, &g, &mut opt)?;
            loss_sum += obj.total(spec.beta);
            steps += 1;
        }
    }
    let mean_loss = if steps == 0 {
        objective(&model, &data.batch_of(shard)?, &spec)?.total(spec.beta)
    } else {
        loss_sum / steps as f64
    };
    Ok(LocalResult {
        model,
        mean_loss,
        steps,
    })
}

/// Weighted average of client models. Computed as a running weighted mean so
/// that identical inputs, and a single input, come back bitwise unchanged.
pub fn aggregate_fedavg(models: &[&Model], weights: &[f64]) -> Result<Model> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(Error::invalid("aggregate_fedavg: need one weight per model"));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("aggregation weights must be finite and >= 0"));
    }
    if models.iter().any(|m| !m.same_shape(models[0])) {
        return Err(Error::invalid("aggregate_fedavg: model shape mismatch"));
    }
    let first = weights
        .iter()
        .position(|&w| w > 0.0)
        .ok_or_else(|| Error::invalid("aggregation weights are all zero"))?;
    let mut acc = models[first].clone();
    let mut total = weights[first];
    for (m, &w) in models.iter().zip(weights).skip(first + 1) {
        if w == 0.0 {
            continue;
        }
        total += w;
        let f = w / total;
        for (a, &x) in acc.params_mut().zip(m.params()) {
            *a += f * (x - *a);
        }
    }
    Ok(acc)
}

/// Server momentum: `v ← ρ·v + (prev − agg)`, `new = prev − v`, evaluated as
/// `agg − ρ·v_old` so that `ρ = 0` or a zero buffer return `agg` exactly.
pub fn server_momentum_step(prev: &Model, agg: &Model, rho: f64, buffer: &Model) -> Result<(Model, Model)> {
    if !prev.same_shape(agg) || !prev.same_shape(buffer) {
        return Err(Error::invalid("server_momentum_step: shape mismatch"));
    }
    let mut new = agg.clone();
    let mut v = buffer.clone();
    for (((n, vb), &p), &a) in new
        .params_mut()
        .zip(v.params_mut())
        .zip(prev.params())
        .zip(agg.params())
    {
        let old = *vb;
        *vb = rho * old + (p - a);
        if rho != 0.0 {
            *n = a - rho * old;
        }
    }
    Ok((new, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub erank: f64,
    pub n_significant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub accuracy: f64,
    pub clients: Vec<usize>,
    pub client_samples: Vec<usize>,
    pub mean_local_loss: f64,
    pub spectrum: Option<SpectrumSummary>,
}

#[derive(Debug, Clone)]
pub struct FedRun {
    pub reports: Vec<RoundReport>,
    pub global: Model,
    /// Last round's local models, keyed by client id.
    pub locals: Vec<(usize, Model)>,
}

/// Deterministic initial model for `dims` drawn from the init substream.
pub fn init_model(dims: &[usize], activation: crate::nn::Activation, seed: u64) -> Result<Model> {
    Model::mlp(dims, activation, true, &mut Rng::for_purpose(seed, Stream::Init, 0, 0))
}

pub fn run_federation(cfg: &FedConfig, init: Model, train: &Dataset, partition: &Partition, test: &Dataset) -> Result<FedRun> {
    run_federation_with(cfg, init, train, partition, test, |_, _| Ok(()))
}

/// As [`run_federation`], calling `observe` with each report and the new global model.
pub fn run_federation_with(
    cfg: &FedConfig,
    init: Model,
    train: &Dataset,
    partition: &Partition,
    test: &Dataset,
    mut observe: impl FnMut(&RoundReport, &Model) -> Result<()>,
) -> Result<FedRun> {
    cfg.validate()?;
    if !partition.is_exact_cover(train.len()) {
        return Err(Error::Consistency(
            "partition does not cover the training set".into(),
        ));
    }
    if init.input_dim() != train.dim() || init.classes() != train.classes {
        return Err(Error::invalid("model does not match dataset dimensions"));
    }
    let test_batch = test.batch()?;
    let k = partition.clients();
    let mut global = init;
    let mut buffer = global.zeros_like();
    let mut reports = Vec::with_capacity(cfg.rounds);
    let mut locals = Vec::new();

    for round in 0..cfg.rounds {
        let mut srng = Rng::for_purpose(cfg.seed, Stream::Sampling, round as u64, 0);
        let chosen = sample_clients(k, cfg.sample_fraction, &mut srng)?;
        let train_one = |&c: &usize| -> Result<LocalResult> {
            let mut rng = Rng::for_purpose(cfg.seed, Stream::Shuffle, round as u64, c as u64);
            local_train(&global, train, &partition.assignment[c], cfg, &mut rng)
        };
        let results: Vec<LocalResult> = if cfg.parallel {
            chosen.par_iter().map(train_one).collect::<Result<_>>()?
        } else {
            chosen.iter().map(train_one).collect::<Result<_>>()?
        };
        let sizes: Vec<usize> = chosen.iter().map(|&c| partition.assignment[c].len()).collect();
        let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
        let refs: Vec<&Model> = results.iter().map(|r| &r.model).collect();
        let agg = aggregate_fedavg(&refs, &weights)?;
        let next = match cfg.method {
            Method::FedAvgM => {
                let (n, b) = server_momentum_step(&global, &agg, cfg.rho_server, &buffer)?;
                buffer = b;
                n
            }
            _ => agg,
        };
        if !next.is_finite() {
            return Err(Error::NumericalFailure {
                context: format!("global model became non-finite in round {round}"),
                residual: None,
            });
        }
        global = next;

        let mean_local_loss = results.iter().map(|r| r.mean_loss).sum::<f64>() / results.len() as f64;
        let last = round + 1 == cfg.rounds;
        let due = cfg.spectrum_every > 0 && (round + 1) % cfg.spectrum_every == 0;
        let spectrum = if last || due {
            let s = analysis::model_spectrum(&global, test, cfg.tau, "global")?;
            Some(SpectrumSummary {
                erank: s.effective_rank,
                n_significant: s.n_significant,
            })
        } else {
            None
        };
        let report = RoundReport {
            round,
            accuracy: global.accuracy(&test_batch)?,
            clients: chosen.clone(),
            client_samples: sizes,
            mean_local_loss,
            spectrum,
        };
        observe(&report, &global)?;
        reports.push(report);
        if last {
            locals = chosen.into_iter().zip(results.into_iter().map(|r| r.model)).collect();
        }
    }
    Ok(FedRun {
        reports,
        global,
        locals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dirichlet_partition, Concentration, GaussianMixture};
    use crate::linalg::{Matrix, Rng};
    use crate::nn::Activation;

    fn scalar(v: f64) -> Model {
        Model::from_weights(vec![Matrix::filled(1, 1, v)], Activation::None).unwrap()
    }

    fn w(m: &Model) -> f64 {
        m.layers[0].weight[(0, 0)]
    }

    #[test]
    fn sampling_counts() {
        let mut rng = Rng::new(0, 0);
        assert_eq!(sample_clients(10, 1.0, &mut rng).unwrap(), (0..10).collect::<Vec<_>>());
        let s = sample_clients(50, 0.2, &mut rng).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_clients(7, 0.3, &mut rng).unwrap().len(), 3);
        assert!(sample_clients(5, 0.0, &mut rng).is_err());
        let a = sample_clients(50, 0.2, &mut Rng::new(5, 1)).unwrap();
        let b = sample_clients(50, 0.2, &mut Rng::new(5, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregation_examples() {
        let m = scalar(0.3);
        let agg = aggregate_fedavg(&[&m, &m, &m], &[1.0, 7.0, 3.0]).unwrap();
        assert_eq!(agg, m);
        let (a, b) = (scalar(0.0), scalar(2.0));
        assert_eq!(aggregate_fedavg(&[&a, &b], &[1.0, 0.0]).unwrap(), a);
        assert_eq!(aggregate_fedavg(&[&a, &b], &[0.0, 1.0]).unwrap(), b);
        assert_eq!(w(&aggregate_fedavg(&[&a, &b], &[1.0, 1.0]).unwrap()), 1.0);
        assert!(aggregate_fedavg(&[&a, &b], &[0.0, 0.0]).is_err());
        let wide = Model::from_weights(vec![Matrix::zeros(2, 1)], Activation::None).unwrap();
        assert!(aggregate_fedavg(&[&a, &wide], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn server_momentum_examples() {
        let (prev, agg) = (scalar(1.0), scalar(0.25));
        let zero = prev.zeros_like();
        let (n, _) = server_momentum_step(&prev, &agg, 0.0, &scalar(3.0)).unwrap();
        assert_eq!(n, agg);
        let (n, v) = server_momentum_step(&prev, &agg, 0.5, &zero).unwrap();
        assert_eq!(n, agg);
        assert_eq!(w(&v), 0.75);

        // prev₀ = 1, agg₀ = 0, agg₁ = 0, ρ = 0.5
        let (g1, v1) = server_momentum_step(&scalar(1.0), &scalar(0.0), 0.5, &zero).unwrap();
        assert_eq!((w(&g1), w(&v1)), (0.0, 1.0));
        let (g2, v2) = server_momentum_step(&g1, &scalar(0.0), 0.5, &v1).unwrap();
        assert_eq!((w(&g2), w(&v2)), (-0.5, 0.5));
    }

    fn toy() -> (Dataset, Dataset) {
        let mix = GaussianMixture::new(3, 6, 3.0, &mut Rng::new(1, 0)).unwrap();
        (
            mix.sample(20, &mut Rng::new(1, 1), "train").unwrap(),
            mix.sample(10, &mut Rng::new(1, 2), "test").unwrap(),
        )
    }

    #[test]
    fn zero_epochs_returns_global() {
        let (train, _) = toy();
        let m = init_model(&[6, 8, 3], Activation::Relu, 0).unwrap();
        let cfg = FedConfig {
            local_epochs: 0,
            ..FedConfig::default()
        };
        let idx: Vec<usize> = (0..train.len()).collect();
        let r = local_train(&m, &train, &idx, &cfg, &mut Rng::new(0, 0)).unwrap();
        assert_eq!(r.model, m);
    }

    #[test]
    fn local_training_descends_and_isolates() {
        let mix = GaussianMixture::new(2, 4, 4.0, &mut Rng::new(2, 0)).unwrap();
        let shard = mix.sample(16, &mut Rng::new(2, 1), "s").unwrap();
        let m = init_model(&[4, 8, 2], Activation::Relu, 2).unwrap();
        let before_bytes = m.to_bytes();
        let cfg = FedConfig {
            beta: 0.0,
            ..FedConfig::default()
        };
        let idx: Vec<usize> = (0..shard.len()).collect();
        let spec = LossSpec::default();
        let initial = objective(&m, &shard.batch().unwrap(), &spec).unwrap().ce;
        let r = local_train(&m, &shard, &idx, &cfg, &mut Rng::new(0, 0)).unwrap();
        let fin = objective(&r.model, &shard.batch().unwrap(), &spec).unwrap().ce;
        assert!(fin < initial);
        assert_eq!(m.to_bytes(), before_bytes);
    }

    #[test]
    fn tiny_shard_with_decorrelation_is_config_error() {
        let (train, _) = toy();
        let m = init_model(&[6, 8, 3], Activation::Relu, 0).unwrap();
        let err = local_train(&m, &train, &[0], &FedConfig::default(), &mut Rng::new(0, 0)).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn ragged_final_batch_of_one() {
        let (train, _) = toy();
        let m = init_model(&[6, 8, 3], Activation::Relu, 0).unwrap();
        let cfg = FedConfig {
            batch_size: 4,
            local_epochs: 1,
            ..FedConfig::default()
        };
        let r = local_train(&m, &train, &[0, 1, 2, 3, 4], &cfg, &mut Rng::new(0, 0)).unwrap();
        assert_eq!(r.steps, 2);
        assert!(r.model.is_finite());
    }

    #[test]
    fn zero_rounds_and_determinism() {
        let (train, test) = toy();
        let p = dirichlet_partition(&train.labels, 3, 3, Concentration::Finite(0.5), 0, 2).unwrap();
        let m = init_model(&[6, 8, 3], Activation::Relu, 0).unwrap();
        let cfg0 = FedConfig {
            rounds: 0,
            ..FedConfig::default()
        };
        let r = run_federation(&cfg0, m.clone(), &train, &p, &test).unwrap();
        assert!(r.reports.is_empty());
        assert_eq!(r.global, m);

        for method in [Method::FedAvg, Method::FedProx, Method::FedAvgM] {
            let cfg = FedConfig {
                rounds: 3,
                local_epochs: 2,
                batch_size: 8,
                method,
                spectrum_every: 2,
                ..FedConfig::default()
            };
            let a = run_federation(&cfg, m.clone(), &train, &p, &test).unwrap();
            let b = run_federation(&cfg, m.clone(), &train, &p, &test).unwrap();
            assert_eq!(a.reports, b.reports);
            assert_eq!(a.global, b.global);
            assert!(a.reports[0].spectrum.is_none());
            assert!(a.reports[1].spectrum.is_some() && a.reports[2].spectrum.is_some());
            let par = FedConfig {
                parallel: true,
                ..cfg.clone()
            };
            let c = run_federation(&par, m.clone(), &train, &p, &test).unwrap();
            assert_eq!(a.global, c.global);
        }
    }

    #[test]
    fn config_validation() {
        let ok = FedConfig::default();
        assert!(ok.validate().is_ok());
        let bad = FedConfig {
            method: Method::FedProx,
            mu_prox: 0.0,
            ..ok.clone()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { ref path, .. }) if path == "fed.mu_prox"));
        let bad = FedConfig {
            method: Method::FedAvgM,
            rho_server: 1.0,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = FedConfig {
            beta: -0.1,
            ..ok
        };
        assert!(bad.validate().is_err());
    }
}
