//! Experiment configuration: a TOML document of flat sections.
//!
//! Every section is optional. Unknown sections and keys are rejected with their
//! dotted path; syntax errors carry a 1-based line number.

use std::path::PathBuf;

use serde_json::Value as Json;
use toml::{Table, Value};

use crate::data::Concentration;
use crate::error::{Error, Result};
use crate::fed::{FedConfig, Method};
use crate::nn::{Activation, Reduction};
use crate::theory::{FlowConfig, HeadInit};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FEDDECORR_OUT";

const SECTIONS: [&str; 8] = [
    "dataset", "partition", "model", "fed", "analysis", "theory", "sweep", "output",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
        noise: f64,
        /// Gaussian blobs per class; 1 is a single isotropic Gaussian per class.
        subclusters: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSection {
    pub source: DatasetSource,
    /// Ignored for IDX data, where the class count comes from the labels.
    pub classes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSection {
    pub clients: usize,
    pub alpha: Concentration,
    pub seed: u64,
    pub min_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheorySection {
    pub depth: usize,
    pub width: usize,
    pub classes: usize,
    pub per_class: usize,
    pub spread: f64,
    pub noise: f64,
    pub init_scale: f64,
    pub head: HeadInit,
    pub flow: FlowConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub alphas: Vec<Concentration>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    pub model: ModelSection,
    /// Carries the `[analysis]` keys too (`tau`, `spectrum_every`).
    pub fed: FedConfig,
    pub theory: TheorySection,
    pub sweep: SweepSection,
    /// `None` defers to `--out`, then `$FEDDECORR_OUT/<command>`, then `runs/<command>`.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        parse_table(Table::new()).expect("empty config is valid")
    }
}

/// Parses and validates a config document, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, &[])
}

/// As [`parse_config`], applying `key.path=value` overrides before validation.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = parse_document(text)?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    parse_table(table)
}

/// Byte-level entry point; invalid UTF-8 is a syntax error on the offending line.
pub fn parse_config_bytes(bytes: &[u8]) -> Result<ExperimentConfig> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_config(text),
        Err(e) => Err(Error::ConfigSyntax {
            line: line_of(bytes, e.valid_up_to()),
            message: "invalid UTF-8".into(),
        }),
    }
}

fn line_of(bytes: &[u8], offset: usize) -> usize {
    bytes[..offset.min(bytes.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

fn parse_document(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| Error::ConfigSyntax {
        line: e.span().map_or(1, |s| line_of(text.as_bytes(), s.start)),
        message: e.message().trim().to_string(),
    })
}

/// Sets `section.key` from `section.key=value`. The value is read as a TOML value,
/// falling back to a bare string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like section.key=value"))?;
    let path = path.trim();
    let (section, key) = path
        .split_once('.')
        .filter(|(s, k)| !s.is_empty() && !k.is_empty() && !k.contains('.'))
        .ok_or_else(|| Error::config(path, "override key must be section.key"))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    match entry {
        Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => Err(Error::config(section, "expected a table")),
    }
}

/// Reads and removes keys of one section; leftovers are unknown keys.
struct Reader {
    section: &'static str,
    table: Table,
}

impl Reader {
    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.section)
    }

    fn err(&self, key: &str, msg: impl Into<String>) -> Error {
        Error::config(self.path(key), msg)
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Float(f)) => Ok(f),
            Some(Value::Integer(i)) => Ok(i as f64),
            Some(v) => Err(self.err(key, format!("expected a number, found {}", v.type_str()))),
        }
    }

    fn int(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if i >= 0 => Ok(i as u64),
            Some(Value::Integer(_)) => Err(self.err(key, "must be non-negative")),
            Some(v) => Err(self.err(key, format!("expected an integer, found {}", v.type_str()))),
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = self.int(key, default as u64)?;
        usize::try_from(v).map_err(|_| self.err(key, "out of range"))
    }

    fn positive(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = self.usize(key, default)?;
        if v == 0 {
            return Err(self.err(key, "must be >= 1"));
        }
        Ok(v)
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(b),
            Some(v) => Err(self.err(key, format!("expected a boolean, found {}", v.type_str()))),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(self.err(key, format!("expected a string, found {}", v.type_str()))),
        }
    }

    fn array(&mut self, key: &str) -> Result<Option<Vec<Value>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(a)) => Ok(Some(a)),
            Some(v) => Err(self.err(key, format!("expected an array, found {}", v.type_str()))),
        }
    }

    fn alpha(&self, key: &str, v: &Value) -> Result<Concentration> {
        let parsed = match v {
            Value::String(s) => Concentration::parse(s),
            Value::Float(f) => Concentration::from_f64(*f),
            Value::Integer(i) => Concentration::from_f64(*i as f64),
            other => return Err(self.err(key, format!("expected a number or \"inf\", found {}", other.type_str()))),
        };
        parsed.map_err(|e| self.err(key, strip(e)))
    }

    fn finish(self) -> Result<()> {
        match self.table.keys().next() {
            Some(k) => Err(self.err(k, "unknown key")),
            None => Ok(()),
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

fn check(ok: bool, path: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(path, msg))
    }
}

fn parse_table(mut table: Table) -> Result<ExperimentConfig> {
    let mut sections = std::collections::BTreeMap::new();
    for (name, value) in std::mem::take(&mut table) {
        let Some(&known) = SECTIONS.iter().find(|s| **s == name) else {
            return Err(Error::config(name, "unknown section"));
        };
        match value {
            Value::Table(t) => {
                sections.insert(known, t);
            }
            _ => return Err(Error::config(name, "expected a [section] table")),
        }
    }
    let mut reader = |name: &'static str| Reader {
        section: name,
        table: sections.remove(name).unwrap_or_default(),
    };

    let dataset = parse_dataset(reader("dataset"))?;
    let partition = parse_partition(reader("partition"))?;
    let model = parse_model(reader("model"))?;
    let mut fed = parse_fed(reader("fed"))?;
    parse_analysis(reader("analysis"), &mut fed)?;
    let theory = parse_theory(reader("theory"))?;
    let sweep = parse_sweep(reader("sweep"))?;
    let mut out = reader("output");
    let output = out.string("dir")?.map(PathBuf::from);
    out.finish()?;

    let cfg = ExperimentConfig {
        dataset,
        partition,
        model,
        fed,
        theory,
        sweep,
        output,
    };
    cross_check(&cfg)?;
    Ok(cfg)
}

fn parse_dataset(mut r: Reader) -> Result<DatasetSection> {
    let kind = r.string("kind")?.unwrap_or_else(|| "synthetic".into());
    let classes = r.usize("classes", 10)?;
    let seed = r.int("seed", 0)?;
    let source = match kind.as_str() {
        "synthetic" => {
            let s = DatasetSource::Synthetic {
                dim: r.positive("dim", 32)?,
                train_per_class: r.positive("train_per_class", 200)?,
                test_per_class: r.positive("test_per_class", 100)?,
                spread: r.f64("spread", 4.0)?,
                noise: r.f64("noise", 1.0)?,
                subclusters: r.positive("subclusters", 1)?,
            };
            if let DatasetSource::Synthetic { spread, noise, .. } = &s {
                check(spread.is_finite() && *spread >= 0.0, "dataset.spread", "must be finite and non-negative")?;
                check(noise.is_finite() && *noise >= 0.0, "dataset.noise", "must be finite and non-negative")?;
            }
            check(classes >= 2, "dataset.classes", "must be >= 2")?;
            s
        }
        "idx" => {
            let mut path = |key: &str| -> Result<PathBuf> {
                r.string(key)?
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::config(format!("dataset.{key}"), "required for kind = \"idx\""))
            };
            DatasetSource::Idx {
                train_images: path("train_images")?,
                train_labels: path("train_labels")?,
                test_images: path("test_images")?,
                test_labels: path("test_labels")?,
            }
        }
        other => {
            return Err(Error::config(
                "dataset.kind",
                format!("unknown kind {other:?} (expected \"synthetic\" or \"idx\")"),
            ))
        }
    };
    r.finish()?;
    Ok(DatasetSection { source, classes, seed })
}

fn parse_partition(mut r: Reader) -> Result<PartitionSection> {
    let clients = r.positive("clients", 10)?;
    let alpha = match r.take("alpha") {
        None => Concentration::Infinite,
        Some(v) => r.alpha("alpha", &v)?,
    };
    let seed = r.int("seed", 0)?;
    let min_size = r.positive("min_size", 2)?;
    r.finish()?;
    Ok(PartitionSection {
        clients,
        alpha,
        seed,
        min_size,
    })
}

fn parse_activation(r: &Reader, key: &str, s: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "none" | "linear" => Ok(Activation::None),
        other => Err(r.err(key, format!("unknown activation {other:?} (expected \"relu\" or \"none\")"))),
    }
}

fn parse_model(mut r: Reader) -> Result<ModelSection> {
    let hidden = match r.array("hidden")? {
        None => vec![64, 64],
        Some(items) => {
            let mut out = Vec::with_capacity(items.len());
            for v in items {
                match v {
                    Value::Integer(i) if i >= 1 => out.push(i as usize),
                    _ => return Err(r.err("hidden", "entries must be positive integers")),
                }
            }
            out
        }
    };
    check(!hidden.is_empty(), "model.hidden", "needs at least one hidden layer")?;
    let activation = match r.string("activation")? {
        None => Activation::Relu,
        Some(s) => parse_activation(&r, "activation", &s)?,
    };
    r.finish()?;
    Ok(ModelSection { hidden, activation })
}

fn parse_fed(mut r: Reader) -> Result<FedConfig> {
    let d = FedConfig::default();
    let method = match r.string("method")? {
        None => d.method,
        Some(s) => Method::parse(&s).map_err(|e| r.err("method", strip(e)))?,
    };
    let cfg = FedConfig {
        rounds: r.positive("rounds", d.rounds)?,
        local_epochs: r.positive("local_epochs", d.local_epochs)?,
        batch_size: r.positive("batch_size", d.batch_size)?,
        lr: r.f64("lr", d.lr)?,
        momentum: r.f64("momentum", d.momentum)?,
        weight_decay: r.f64("weight_decay", d.weight_decay)?,
        beta: r.f64("beta", d.beta)?,
        method,
        mu_prox: r.f64("mu_prox", d.mu_prox)?,
        rho_server: r.f64("rho_server", d.rho_server)?,
        sample_fraction: r.f64("sample_fraction", d.sample_fraction)?,
        seed: r.int("seed", d.seed)?,
        eps: r.f64("eps", d.eps)?,
        parallel: r.bool("parallel", d.parallel)?,
        ..d
    };
    r.finish()?;
    Ok(cfg)
}

fn parse_analysis(mut r: Reader, fed: &mut FedConfig) -> Result<()> {
    fed.tau = r.f64("tau", fed.tau)?;
    check(fed.tau > 0.0 && fed.tau.is_finite(), "analysis.tau", "must be positive")?;
    fed.spectrum_every = r.usize("spectrum_every", fed.spectrum_every)?;
    r.finish()
}

fn parse_theory(mut r: Reader) -> Result<TheorySection> {
    let depth = r.positive("depth", 2)?;
    let width = r.positive("width", 8)?;
    let classes = r.usize("classes", 4)?;
    check(classes >= 2, "theory.classes", "must be >= 2")?;
    let per_class = r.positive("per_class", 16)?;
    let spread = r.f64("spread", 0.05)?;
    let noise = r.f64("noise", 0.02)?;
    let init_scale = r.f64("init_scale", 0.5)?;
    check(init_scale.is_finite() && init_scale > 0.0, "theory.init_scale", "must be positive")?;
    let head_scale = r.f64("head_scale", 0.1)?;
    let head = match r.string("head")?.as_deref() {
        None | Some("zero") => HeadInit::Zero,
        Some("orthogonal") => HeadInit::Orthogonal(head_scale),
        Some(other) => {
            return Err(r.err("head", format!("unknown head init {other:?} (expected \"zero\" or \"orthogonal\")")))
        }
    };
    let d = FlowConfig::default();
    let reduction = match r.string("reduction")?.as_deref() {
        None | Some("sum") => Reduction::Sum,
        Some("mean") => Reduction::Mean,
        Some(other) => return Err(r.err("reduction", format!("unknown reduction {other:?}"))),
    };
    let flow = FlowConfig {
        lr: r.f64("lr", d.lr)?,
        steps: r.positive("steps", d.steps)?,
        record_every: r.positive("record_every", d.record_every)?,
        reduction,
    };
    check(flow.lr > 0.0 && flow.lr.is_finite(), "theory.lr", "must be positive")?;
    check(spread.is_finite() && spread >= 0.0, "theory.spread", "must be finite and non-negative")?;
    check(noise.is_finite() && noise >= 0.0, "theory.noise", "must be finite and non-negative")?;
    let seed = r.int("seed", 0)?;
    r.finish()?;
    Ok(TheorySection {
        depth,
        width,
        classes,
        per_class,
        spread,
        noise,
        init_scale,
        head,
        flow,
        seed,
    })
}

fn parse_sweep(mut r: Reader) -> Result<SweepSection> {
    let alphas = match r.array("alphas")? {
        None => vec![
            Concentration::Finite(0.05),
            Concentration::Finite(0.1),
            Concentration::Finite(0.5),
            Concentration::Infinite,
        ],
        Some(items) => items
            .iter()
            .map(|v| r.alpha("alphas", v))
            .collect::<Result<_>>()?,
    };
    let betas = match r.array("betas")? {
        None => vec![0.0, 0.1],
        Some(items) => items
            .iter()
            .map(|v| match v {
                Value::Float(f) if *f >= 0.0 && f.is_finite() => Ok(*f),
                Value::Integer(i) if *i >= 0 => Ok(*i as f64),
                _ => Err(r.err("betas", "entries must be non-negative numbers")),
            })
            .collect::<Result<_>>()?,
    };
    let seeds = match r.array("seeds")? {
        None => vec![0],
        Some(items) => items
            .iter()
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                _ => Err(r.err("seeds", "entries must be non-negative integers")),
            })
            .collect::<Result<_>>()?,
    };
    check(!alphas.is_empty(), "sweep.alphas", "must not be empty")?;
    check(!betas.is_empty(), "sweep.betas", "must not be empty")?;
    check(!seeds.is_empty(), "sweep.seeds", "must not be empty")?;
    let parallel = r.bool("parallel", false)?;
    r.finish()?;
    Ok(SweepSection {
        alphas,
        betas,
        seeds,
        parallel,
    })
}

fn cross_check(cfg: &ExperimentConfig) -> Result<()> {
    cfg.fed.validate()?;
    if cfg.fed.beta > 0.0 {
        check(
            cfg.partition.min_size >= 2,
            "partition.min_size",
            "must be >= 2 when fed.beta > 0 (the decorrelation term needs two samples)",
        )?;
    }
    if let DatasetSource::Synthetic { train_per_class, .. } = cfg.dataset.source {
        check(
            cfg.partition.clients * cfg.partition.min_size <= cfg.dataset.classes * train_per_class,
            "partition.clients",
            "clients * min_size exceeds the training set size",
        )?;
    }
    Ok(())
}

fn alpha_value(a: Concentration) -> Value {
    match a {
        Concentration::Finite(v) => Value::Float(v),
        Concentration::Infinite => Value::String("inf".into()),
    }
}

fn int(v: impl TryInto<i64>) -> Value {
    Value::Integer(v.try_into().unwrap_or(i64::MAX))
}

impl ExperimentConfig {
    /// The fully resolved document; parsing it yields `self` again.
    pub fn to_table(&self) -> Table {
        let mut root = Table::new();
        let mut t = Table::new();
        match &self.dataset.source {
            DatasetSource::Synthetic {
                dim,
                train_per_class,
                test_per_class,
                spread,
                noise,
                subclusters,
            } => {
                t.insert("kind".into(), Value::String("synthetic".into()));
                t.insert("dim".into(), int(*dim));
                t.insert("train_per_class".into(), int(*train_per_class));
                t.insert("test_per_class".into(), int(*test_per_class));
                t.insert("spread".into(), Value::Float(*spread));
                t.insert("noise".into(), Value::Float(*noise));
                t.insert("subclusters".into(), int(*subclusters));
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                t.insert("kind".into(), Value::String("idx".into()));
                for (k, p) in [
                    ("train_images", train_images),
                    ("train_labels", train_labels),
                    ("test_images", test_images),
                    ("test_labels", test_labels),
                ] {
                    t.insert(k.into(), Value::String(p.to_string_lossy().into_owned()));
                }
            }
        }
        t.insert("classes".into(), int(self.dataset.classes));
        t.insert("seed".into(), int(self.dataset.seed));
        root.insert("dataset".into(), Value::Table(t));

        let p = &self.partition;
        let mut t = Table::new();
        t.insert("clients".into(), int(p.clients));
        t.insert("alpha".into(), alpha_value(p.alpha));
        t.insert("seed".into(), int(p.seed));
        t.insert("min_size".into(), int(p.min_size));
        root.insert("partition".into(), Value::Table(t));

        let mut t = Table::new();
        t.insert(
            "hidden".into(),
            Value::Array(self.model.hidden.iter().map(|&h| int(h)).collect()),
        );
        let act = match self.model.activation {
            Activation::Relu => "relu",
            Activation::None => "none",
        };
        t.insert("activation".into(), Value::String(act.into()));
        root.insert("model".into(), Value::Table(t));

        let f = &self.fed;
        let mut t = Table::new();
        t.insert("rounds".into(), int(f.rounds));
        t.insert("local_epochs".into(), int(f.local_epochs));
        t.insert("batch_size".into(), int(f.batch_size));
        t.insert("lr".into(), Value::Float(f.lr));
        t.insert("momentum".into(), Value::Float(f.momentum));
        t.insert("weight_decay".into(), Value::Float(f.weight_decay));
        t.insert("beta".into(), Value::Float(f.beta));
        let method = match f.method {
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::FedAvgM => "fedavgm",
        };
        t.insert("method".into(), Value::String(method.into()));
        t.insert("mu_prox".into(), Value::Float(f.mu_prox));
        t.insert("rho_server".into(), Value::Float(f.rho_server));
        t.insert("sample_fraction".into(), Value::Float(f.sample_fraction));
        t.insert("seed".into(), int(f.seed));
        t.insert("eps".into(), Value::Float(f.eps));
        t.insert("parallel".into(), Value::Boolean(f.parallel));
        root.insert("fed".into(), Value::Table(t));

        let mut t = Table::new();
        t.insert("tau".into(), Value::Float(f.tau));
        t.insert("spectrum_every".into(), int(f.spectrum_every));
        root.insert("analysis".into(), Value::Table(t));

        let th = &self.theory;
        let mut t = Table::new();
        t.insert("depth".into(), int(th.depth));
        t.insert("width".into(), int(th.width));
        t.insert("classes".into(), int(th.classes));
        t.insert("per_class".into(), int(th.per_class));
        t.insert("spread".into(), Value::Float(th.spread));
        t.insert("noise".into(), Value::Float(th.noise));
        t.insert("init_scale".into(), Value::Float(th.init_scale));
        match th.head {
            HeadInit::Zero => {
                t.insert("head".into(), Value::String("zero".into()));
            }
            HeadInit::Orthogonal(s) => {
                t.insert("head".into(), Value::String("orthogonal".into()));
                t.insert("head_scale".into(), Value::Float(s));
            }
        }
        t.insert("lr".into(), Value::Float(th.flow.lr));
        t.insert("steps".into(), int(th.flow.steps));
        t.insert("record_every".into(), int(th.flow.record_every));
        let red = match th.flow.reduction {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        };
        t.insert("reduction".into(), Value::String(red.into()));
        t.insert("seed".into(), int(th.seed));
        root.insert("theory".into(), Value::Table(t));

        let s = &self.sweep;
        let mut t = Table::new();
        t.insert(
            "alphas".into(),
            Value::Array(s.alphas.iter().map(|&a| alpha_value(a)).collect()),
        );
        t.insert(
            "betas".into(),
            Value::Array(s.betas.iter().map(|&b| Value::Float(b)).collect()),
        );
        t.insert(
            "seeds".into(),
            Value::Array(s.seeds.iter().map(|&x| int(x)).collect()),
        );
        t.insert("parallel".into(), Value::Boolean(s.parallel));
        root.insert("sweep".into(), Value::Table(t));

        if let Some(dir) = &self.output {
            let mut t = Table::new();
            t.insert("dir".into(), Value::String(dir.to_string_lossy().into_owned()));
            root.insert("output".into(), Value::Table(t));
        }
        root
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("config tables always serialize")
    }

    /// JSON form used inside manifests.
    pub fn to_json(&self) -> Json {
        serde_json::to_value(self.to_table()).expect("config tables always serialize")
    }

    /// Inverse of [`ExperimentConfig::to_json`].
    pub fn from_json(v: &Json) -> Result<Self> {
        let table: Table = serde_json::from_value(v.clone())
            .map_err(|e| Error::config("manifest.config", e.to_string()))?;
        parse_table(table)
    }
}
