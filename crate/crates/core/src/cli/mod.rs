//! Config-driven frontend: experiment builders, artifact writers and the
//! `feddecorr` command line.
//!
//! The builders ([`build_data`], [`train`], [`build_theory`], ...) are the same code
//! paths the binary uses, so library callers and tests reproduce CLI runs exactly.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value as Json};

pub use config::{
    apply_override, parse_config, parse_config_bytes, parse_config_with, DatasetSection, DatasetSource,
    ExperimentConfig, ModelSection, PartitionSection, SweepSection, TheorySection, OUT_ENV,
};

use crate::analysis::{self, SpectrumReport};
use crate::data::{dirichlet_partition, load_idx, Concentration, Dataset, GaussianMixture, Partition};
use crate::error::{Error, Result};
use crate::fed::{self, FedRun, RoundReport};
use crate::linalg::{Rng, Stream};
use crate::nn::{Batch, Model};
use crate::theory::{self, LinearStack, TheoryTrace};

/// Train and test sets described by the `[dataset]` section.
pub fn build_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset.source {
        DatasetSource::Synthetic {
            dim,
            train_per_class,
            test_per_class,
            spread,
            noise,
            subclusters,
        } => {
            let mut rng = Rng::for_purpose(cfg.dataset.seed, Stream::Data, 0, 0);
            let mix = GaussianMixture::with_subclusters(cfg.dataset.classes, *subclusters, *dim, *spread, &mut rng)?
                .with_noise(*noise);
            let train = mix.sample(*train_per_class, &mut rng, "synthetic-train")?;
            let test = mix.sample(*test_per_class, &mut rng, "synthetic-test")?;
            Ok((train, test))
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            if train.dim() != test.dim() {
                return Err(Error::Consistency(format!(
                    "train images have {} pixels but test images have {}",
                    train.dim(),
                    test.dim()
                )));
            }
            let classes = train.classes.max(test.classes);
            let relabel = |d: Dataset| Dataset::new(d.features, d.labels, classes, d.name);
            Ok((relabel(train)?, relabel(test)?))
        }
    }
}

pub fn build_partition(cfg: &ExperimentConfig, train: &Dataset) -> Result<Partition> {
    let p = &cfg.partition;
    dirichlet_partition(&train.labels, train.classes, p.clients, p.alpha, p.seed, p.min_size)
}

/// Layer widths `[d_in, hidden.., classes]`.
pub fn model_dims(cfg: &ExperimentConfig, train: &Dataset) -> Vec<usize> {
    let mut dims = vec![train.dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(train.classes);
    dims
}

pub fn build_model(cfg: &ExperimentConfig, train: &Dataset) -> Result<Model> {
    fed::init_model(&model_dims(cfg, train), cfg.model.activation, cfg.fed.seed)
}

/// Everything a `train` run produces, before it is written anywhere.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run: FedRun,
    pub partition: Partition,
    /// Test-set spectrum of the final global model.
    pub global: SpectrumReport,
    /// Test-set spectrum of the lowest-numbered client's last local model.
    pub local: Option<SpectrumReport>,
}

impl TrainOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.run.reports.last().map_or(f64::NAN, |r| r.accuracy)
    }
}

pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    train_observed(cfg, |_, _| Ok(()))
}

fn train_observed(
    cfg: &ExperimentConfig,
    observe: impl FnMut(&RoundReport, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    let (train_set, test_set) = build_data(cfg)?;
    let partition = build_partition(cfg, &train_set)?;
    let init = build_model(cfg, &train_set)?;
    let run = fed::run_federation_with(&cfg.fed, init, &train_set, &partition, &test_set, observe)?;
    let global = analysis::model_spectrum(&run.global, &test_set, cfg.fed.tau, "global")?;
    let local = match run.locals.first() {
        Some((c, m)) => Some(analysis::model_spectrum(m, &test_set, cfg.fed.tau, &format!("local_client{c}"))?),
        None => None,
    };
    Ok(TrainOutcome {
        run,
        partition,
        global,
        local,
    })
}

/// The deep linear stack and full batch described by the `[theory]` section.
pub fn build_theory(cfg: &ExperimentConfig) -> Result<(LinearStack, Batch)> {
    let t = &cfg.theory;
    let mut rng = Rng::for_purpose(t.seed, Stream::Data, 0, 0);
    let data = GaussianMixture::new(t.classes, t.width, t.spread, &mut rng)?
        .with_noise(t.noise)
        .sample(t.per_class, &mut rng, "theory")?;
    let mut dims = vec![t.width; t.depth + 1];
    dims.push(t.classes);
    let stack = theory::balanced_init(
        &dims,
        t.init_scale,
        t.head,
        &mut Rng::for_purpose(t.seed, Stream::Theory, 0, 0),
    )?;
    Ok((stack, data.batch()?))
}

pub fn run_theory(cfg: &ExperimentConfig) -> Result<TheoryTrace> {
    let (stack, batch) = build_theory(cfg)?;
    theory::run_gradient_flow(stack, &batch, &cfg.theory.flow)
}

/// One cell of a sweep, averaged over the configured seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: Concentration,
    pub beta: f64,
    pub seeds: usize,
    pub accuracy: f64,
    pub erank_global: f64,
    pub erank_local: f64,
    pub n_significant_global: f64,
}

/// Config for one sweep job: `alpha`, `beta`, and `seed` applied to the dataset,
/// partition and federation seeds alike.
pub fn sweep_job(cfg: &ExperimentConfig, alpha: Concentration, beta: f64, seed: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.partition.alpha = alpha;
    c.fed.beta = beta;
    c.dataset.seed = seed;
    c.partition.seed = seed;
    c.fed.seed = seed;
    c
}

fn job_dir(alpha: Concentration, beta: f64, seed: u64) -> String {
    format!("alpha_{alpha}_beta_{beta}_seed_{seed}")
}

/// Runs the sweep grid. With `out`, each job writes a full train directory under it.
pub fn sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<SweepRow>> {
    let s = &cfg.sweep;
    let mut jobs = Vec::new();
    for &alpha in &s.alphas {
        for &beta in &s.betas {
            for &seed in &s.seeds {
                jobs.push((alpha, beta, seed));
            }
        }
    }
    let one = |&(alpha, beta, seed): &(Concentration, f64, u64)| -> Result<TrainOutcome> {
        let job = sweep_job(cfg, alpha, beta, seed);
        match out {
            Some(root) => train_to_dir(&job, &root.join(job_dir(alpha, beta, seed)), "sweep"),
            None => train(&job),
        }
    };
    let outcomes: Vec<TrainOutcome> = if s.parallel {
        jobs.par_iter().map(one).collect::<Result<_>>()?
    } else {
        jobs.iter().map(one).collect::<Result<_>>()?
    };
    let n = s.seeds.len();
    Ok(outcomes
        .chunks(n)
        .zip(jobs.chunks(n))
        .map(|(outs, js)| {
            let mean = |f: &dyn Fn(&TrainOutcome) -> f64| outs.iter().map(f).sum::<f64>() / n as f64;
            SweepRow {
                alpha: js[0].0,
                beta: js[0].1,
                seeds: n,
                accuracy: mean(&|o| o.final_accuracy()),
                erank_global: mean(&|o| o.global.effective_rank),
                erank_local: mean(&|o| o.local.as_ref().map_or(f64::NAN, |l| l.effective_rank)),
                n_significant_global: mean(&|o| o.global.n_significant as f64),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// artifact writers

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &Json) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| analysis::csv_err(path, e))
}

/// Manifest written next to every run's artifacts. `created_unix` and `host` are
/// the only non-reproducible fields anywhere in a run directory.
pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, artifacts: &[&str]) -> Result<()> {
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let host = std::env::var("HOSTNAME").unwrap_or_default();
    let seeds = json!({
        "dataset": cfg.dataset.seed,
        "partition": cfg.partition.seed,
        "fed": cfg.fed.seed,
        "theory": cfg.theory.seed,
    });
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "tool": "feddecorr",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": seeds,
            "config": cfg.to_json(),
            "artifacts": artifacts,
            "created_unix": created,
            "host": host,
        }),
    )
}

/// Loads the config stored in a manifest, together with its command name.
pub fn read_manifest(path: &Path) -> Result<(String, ExperimentConfig)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Json = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let command = v
        .get("command")
        .and_then(Json::as_str)
        .ok_or_else(|| Error::config("manifest.command", "missing"))?
        .to_string();
    let cfg = v
        .get("config")
        .ok_or_else(|| Error::config("manifest.config", "missing"))?;
    Ok((command, ExperimentConfig::from_json(cfg)?))
}

/// `partition.json` and its manifest.
pub fn partition_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Partition> {
    create_dir(dir)?;
    let (train_set, _) = build_data(cfg)?;
    let p = build_partition(cfg, &train_set)?;
    write_json(&dir.join("partition.json"), &p.to_json())?;
    write_manifest(dir, "partition", cfg, &["partition.json"])?;
    Ok(p)
}

const ROUND_HEADER: [&str; 7] = [
    "round", "accuracy", "mean_local_loss", "clients", "samples", "effective_rank", "n_significant",
];

fn round_row(r: &RoundReport) -> Vec<String> {
    let (erank, nsig) = match &r.spectrum {
        Some(s) => (s.erank.to_string(), s.n_significant.to_string()),
        None => (String::new(), String::new()),
    };
    vec![
        r.round.to_string(),
        r.accuracy.to_string(),
        r.mean_local_loss.to_string(),
        r.clients.len().to_string(),
        r.client_samples.iter().sum::<usize>().to_string(),
        erank,
        nsig,
    ]
}

/// Full `train` artifact set:
///
/// - `partition.json`
/// - `rounds.ndjson` and `rounds.csv`, one record per round
/// - `checkpoints/round_NNNN.fdnn` at the spectrum cadence and the final round
/// - `global.fdnn` and `local_client<c>.fdnn`
/// - `spectrum.csv` / `spectrum.json` for the final global and local models
/// - `manifest.json`
pub fn train_to_dir(cfg: &ExperimentConfig, dir: &Path, command: &str) -> Result<TrainOutcome> {
    let ckpt = dir.join("checkpoints");
    create_dir(&ckpt)?;
    let nd_path = dir.join("rounds.ndjson");
    let mut ndjson = fs::File::create(&nd_path).map_err(|e| Error::io(&nd_path, e))?;
    let csv_path = dir.join("rounds.csv");
    let mut rounds = csv_writer(&csv_path)?;
    rounds
        .write_record(ROUND_HEADER)
        .map_err(|e| analysis::csv_err(&csv_path, e))?;
    let total = cfg.fed.rounds;

    let outcome = train_observed(cfg, |report, global| {
        let line = serde_json::to_string(report).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(ndjson, "{line}").map_err(|e| Error::io(&nd_path, e))?;
        rounds
            .write_record(round_row(report))
            .map_err(|e| analysis::csv_err(&csv_path, e))?;
        if report.spectrum.is_some() {
            global.save(&ckpt.join(format!("round_{:04}.fdnn", report.round)))?;
        }
        eprintln!(
            "round {}/{total}: accuracy {:.4}, local loss {:.4}",
            report.round + 1,
            report.accuracy,
            report.mean_local_loss
        );
        Ok(())
    })?;
    rounds.flush().map_err(|e| Error::io(&csv_path, e))?;

    write_json(&dir.join("partition.json"), &outcome.partition.to_json())?;
    outcome.run.global.save(&dir.join("global.fdnn"))?;
    let mut reports = vec![outcome.global.clone()];
    if let (Some((c, m)), Some(local)) = (outcome.run.locals.first(), &outcome.local) {
        m.save(&dir.join(format!("local_client{c}.fdnn")))?;
        reports.push(local.clone());
    }
    analysis::emit_reports(&reports, &dir.join("spectrum.csv"), &dir.join("spectrum.json"))?;
    write_manifest(
        dir,
        command,
        cfg,
        &[
            "partition.json", "rounds.ndjson", "rounds.csv", "checkpoints/", "global.fdnn", "spectrum.csv",
            "spectrum.json",
        ],
    )?;
    Ok(outcome)
}

/// `spectrum.csv` / `spectrum.json` for a checkpoint evaluated on the config's test set.
pub fn spectrum_to_dir(cfg: &ExperimentConfig, checkpoint: &Path, dir: &Path) -> Result<SpectrumReport> {
    create_dir(dir)?;
    let model = Model::load(checkpoint)?;
    let (_, test_set) = build_data(cfg)?;
    if model.input_dim() != test_set.dim() {
        return Err(Error::Consistency(format!(
            "checkpoint expects {} inputs but the dataset has {}",
            model.input_dim(),
            test_set.dim()
        )));
    }
    let tag = checkpoint
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    let report = analysis::model_spectrum(&model, &test_set, cfg.fed.tau, &tag)?;
    analysis::emit_reports(
        std::slice::from_ref(&report),
        &dir.join("spectrum.csv"),
        &dir.join("spectrum.json"),
    )?;
    write_manifest(dir, "spectrum", cfg, &["spectrum.csv", "spectrum.json"])?;
    Ok(report)
}

/// `trace.csv`, `summary.json` (including the final alignment matrix) and the manifest.
pub fn theory_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<TheoryTrace> {
    create_dir(dir)?;
    let trace = run_theory(cfg)?;
    trace.write_csv(&dir.join("trace.csv"))?;
    let a = &trace.alignment;
    let rows: Vec<Vec<f64>> = (0..a.rows()).map(|r| a.row(r).to_vec()).collect();
    let mut summary = trace.summary_json();
    if let Json::Object(m) = &mut summary {
        m.insert("alignment".into(), json!(rows));
    }
    write_json(&dir.join("summary.json"), &summary)?;
    write_manifest(dir, "theory", cfg, &["trace.csv", "summary.json"])?;
    Ok(trace)
}

pub const SWEEP_HEADER: [&str; 7] = [
    "alpha", "beta", "seeds", "accuracy", "effective_rank_global", "effective_rank_local", "n_significant_global",
];

/// Sweep jobs under `dir/<job>/` plus `comparison.csv`.
pub fn sweep_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<SweepRow>> {
    create_dir(dir)?;
    let rows = sweep(cfg, Some(dir))?;
    let path = dir.join("comparison.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(SWEEP_HEADER).map_err(|e| analysis::csv_err(&path, e))?;
    for r in &rows {
        w.write_record([
            r.alpha.to_string(),
            r.beta.to_string(),
            r.seeds.to_string(),
            r.accuracy.to_string(),
            r.erank_global.to_string(),
            r.erank_local.to_string(),
            r.n_significant_global.to_string(),
        ])
        .map_err(|e| analysis::csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_manifest(dir, "sweep", cfg, &["comparison.csv"])?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// command line

#[derive(Debug, Parser)]
#[command(name = "feddecorr", version, about = "Dimensional collapse and decorrelation in federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Omitted sections take their defaults.
    #[arg(short, long, conflicts_with = "from_manifest")]
    config: Option<PathBuf>,
    /// Re-run with the resolved config stored in a manifest.json.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Override a config key, e.g. `--set fed.lr=0.02`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; takes precedence over `[output] dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the Dirichlet client partition as JSON.
    Partition(Common),
    /// Run federated training; writes round reports, checkpoints and spectra.
    Train(Common),
    /// Covariance spectrum of a checkpoint on the configured test set.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Gradient-descent trace of a deep linear network.
    Theory(Common),
    /// Train across the `[sweep]` alpha and beta lists; writes comparison.csv.
    Sweep(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    if let Some(m) = &common.from_manifest {
        let (_, cfg) = read_manifest(m)?;
        if common.overrides.is_empty() {
            return Ok(cfg);
        }
        return parse_config_with(&cfg.to_toml(), &common.overrides);
    }
    let text = match &common.config {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            String::from_utf8(bytes).map_err(|e| Error::ConfigSyntax {
                line: e.as_bytes()[..e.utf8_error().valid_up_to()]
                    .iter()
                    .filter(|&&b| b == b'\n')
                    .count()
                    + 1,
                message: "invalid UTF-8".into(),
            })?
        }
        None => String::new(),
    };
    parse_config_with(&text, &common.overrides)
}

/// `--out`, then `[output] dir`, then `$FEDDECORR_OUT/<command>`, then `runs/<command>`.
fn resolve_out(common: &Common, cfg: &ExperimentConfig, command: &str) -> PathBuf {
    if let Some(o) = &common.out {
        return o.clone();
    }
    if let Some(o) = &cfg.output {
        return o.clone();
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
        _ => PathBuf::from("runs").join(command),
    }
}

fn dispatch(cli: Cli) -> Result<PathBuf> {
    let (name, common) = match &cli.command {
        Command::Partition(c) => ("partition", c),
        Command::Train(c) => ("train", c),
        Command::Spectrum { common, .. } => ("spectrum", common),
        Command::Theory(c) => ("theory", c),
        Command::Sweep(c) => ("sweep", c),
    };
    let mut cfg = load(common)?;
    let out = resolve_out(common, &cfg, name);
    cfg.output = Some(out.clone());
    match &cli.command {
        Command::Partition(_) => {
            let p = partition_to_dir(&cfg, &out)?;
            eprintln!("partition: {} clients, sizes {:?}", p.clients(), p.sizes());
        }
        Command::Train(_) => {
            let o = train_to_dir(&cfg, &out, "train")?;
            eprintln!(
                "final accuracy {:.4}, global effective rank {:.3}",
                o.final_accuracy(),
                o.global.effective_rank
            );
        }
        Command::Spectrum { checkpoint, .. } => {
            let r = spectrum_to_dir(&cfg, checkpoint, &out)?;
            eprintln!(
                "effective rank {:.3}, {} significant of {}",
                r.effective_rank,
                r.n_significant,
                r.values.len()
            );
        }
        Command::Theory(_) => {
            let t = theory_to_dir(&cfg, &out)?;
            eprintln!(
                "final loss {:.6e}, median residual {}",
                t.final_loss(),
                t.median_residual().map_or("n/a".into(), |m| format!("{m:.3e}"))
            );
        }
        Command::Sweep(_) => {
            for r in sweep_to_dir(&cfg, &out)? {
                eprintln!(
                    "alpha {} beta {}: accuracy {:.4}, effective rank {:.3}",
                    r.alpha, r.beta, r.accuracy, r.erank_global
                );
            }
        }
    }
    Ok(out)
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(out) => {
            eprintln!("wrote {}", out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}
