//! Datasets, IDX ingestion and Dirichlet label partitioning.

use std::fmt;
use std::io::Read;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{random_orthogonal, Matrix, Rng, Stream};
use crate::nn::Batch;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `d_in × N`, samples as columns.
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize, name: impl Into<String>) -> Result<Self> {
        if features.cols() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature columns but {} labels",
                features.cols(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Dataset {
            features,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }

    /// Samples at `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_cols(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            name: self.name.clone(),
        }
    }

    pub fn batch(&self) -> Result<Batch> {
        Batch::new(self.features.clone(), self.labels.clone(), self.classes)
    }

    pub fn batch_of(&self, idx: &[usize]) -> Result<Batch> {
        Batch::new(
            self.features.select_cols(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.classes,
        )
    }

    /// Multiplies every feature by `factor`.
    pub fn scaled(mut self, factor: f64) -> Dataset {
        self.features = self.features.scale(factor);
        self
    }
}

/// Isotropic Gaussian classes centred at `spread · m_c` with unit-norm, mutually
/// orthogonal directions `m_c` (orthogonal whenever `dim ≥ classes`).
///
/// With `subclusters = S > 1` each class is instead an equal-weight union of `S`
/// Gaussians around independent random unit directions, which gives every class
/// internal structure beyond its mean.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    /// `dim × (classes · S)`; column `c·S + s` is the centre direction of subcluster `s` of class `c`.
    pub directions: Matrix,
    pub classes: usize,
    pub subclusters: usize,
    pub spread: f64,
    /// Per-coordinate noise std; 1 gives identity covariance.
    pub noise: f64,
}

impl GaussianMixture {
    pub fn new(classes: usize, dim: usize, spread: f64, rng: &mut Rng) -> Result<Self> {
        Self::with_subclusters(classes, 1, dim, spread, rng)
    }

    pub fn with_subclusters(classes: usize, subclusters: usize, dim: usize, spread: f64, rng: &mut Rng) -> Result<Self> {
        if classes < 2 || dim == 0 || subclusters == 0 {
            return Err(Error::invalid(format!(
                "mixture needs >= 2 classes, dim >= 1 and >= 1 subcluster, got C={classes}, d={dim}, S={subclusters}"
            )));
        }
        if !spread.is_finite() || spread < 0.0 {
            return Err(Error::invalid("spread must be finite and non-negative"));
        }
        let k = classes * subclusters;
        let directions = if subclusters == 1 && dim >= classes {
            let q = random_orthogonal(dim, rng)?;
            q.select_cols(&(0..classes).collect::<Vec<_>>())
        } else {
            let mut m = rng.gaussian_matrix(dim, k);
            for c in 0..k {
                let col = m.col(c);
                let n = crate::linalg::norm(&col);
                m.set_col(c, &col.iter().map(|v| v / n).collect::<Vec<_>>());
            }
            m
        };
        Ok(GaussianMixture {
            directions,
            classes,
            subclusters,
            spread,
            noise: 1.0,
        })
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.directions.rows()
    }

    /// Draws `n_per_class` samples of each class, grouped by class.
    pub fn sample(&self, n_per_class: usize, rng: &mut Rng, name: &str) -> Result<Dataset> {
        if n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be >= 1"));
        }
        let (d, c, sub) = (self.dim(), self.classes, self.subclusters);
        let n = c * n_per_class;
        let mut x = Matrix::zeros(d, n);
        let mut labels = Vec::with_capacity(n);
        for class in 0..c {
            for s in 0..n_per_class {
                let j = class * n_per_class + s;
                let centre = class * sub + if sub > 1 { rng.below(sub) } else { 0 };
                for r in 0..d {
                    x[(r, j)] = self.spread * self.directions[(r, centre)] + self.noise * rng.gaussian();
                }
                labels.push(class);
            }
        }
        Dataset::new(x, labels, c, name)
    }
}

pub fn synth_dataset(classes: usize, dim: usize, n_per_class: usize, spread: f64, rng: &mut Rng) -> Result<Dataset> {
    GaussianMixture::new(classes, dim, spread, rng)?.sample(n_per_class, rng, "synthetic")
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated(path))
}

fn truncated(path: &Path) -> Error {
    Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated IDX file"),
    )
}

/// Reads an IDX image/label pair. Pixels are scaled to `[0, 1]` by `1/255`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_file(images)?;
    let lab = read_file(labels)?;

    let magic = be_u32(&img, 0, images)?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!(
            "{}: expected image magic 0x{IDX_IMAGES:08x}, found 0x{magic:08x}",
            images.display()
        )));
    }
    let magic = be_u32(&lab, 0, labels)?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!(
            "{}: expected label magic 0x{IDX_LABELS:08x}, found 0x{magic:08x}",
            labels.display()
        )));
    }
    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let n_labels = be_u32(&lab, 4, labels)? as usize;
    if n != n_labels {
        return Err(Error::Consistency(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    let d = rows * cols;
    let pixels = img.get(16..16 + n * d).ok_or_else(|| truncated(images))?;
    let ys = lab.get(8..8 + n).ok_or_else(|| truncated(labels))?;

    let mut x = Matrix::zeros(d, n);
    for j in 0..n {
        for r in 0..d {
            x[(r, j)] = pixels[j * d + r] as f64 / 255.0;
        }
    }
    let labels_v: Vec<usize> = ys.iter().map(|&b| b as usize).collect();
    let classes = labels_v.iter().max().map_or(0, |m| m + 1);
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(x, labels_v, classes, name)
}

/// Writes an IDX pair. `images` holds one `rows·cols` byte vector per sample.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    images: &[Vec<u8>],
    labels: &[u8],
    rows: usize,
    cols: usize,
) -> Result<()> {
    if images.len() != labels.len() || images.iter().any(|im| im.len() != rows * cols) {
        return Err(Error::invalid("inconsistent IDX payload"));
    }
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend_from_slice(&IDX_IMAGES.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    images.iter().for_each(|im| img.extend_from_slice(im));
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// Dirichlet concentration. `Infinite` means exactly uniform proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Concentration {
    Finite(f64),
    Infinite,
}

impl Concentration {
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Concentration::Infinite);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::invalid(format!("alpha must be a positive number or \"inf\", got {s:?}")))?;
        Concentration::from_f64(v)
    }

    pub fn from_f64(v: f64) -> Result<Self> {
        if v == f64::INFINITY {
            Ok(Concentration::Infinite)
        } else if v.is_finite() && v > 0.0 {
            Ok(Concentration::Finite(v))
        } else {
            Err(Error::invalid(format!("alpha must be > 0, got {v}")))
        }
    }

    pub fn to_json(self) -> Value {
        match self {
            Concentration::Finite(a) => json!(a),
            Concentration::Infinite => json!("inf"),
        }
    }
}

impl fmt::Display for Concentration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Concentration::Finite(a) => write!(f, "{a}"),
            Concentration::Infinite => write!(f, "inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Per-client sample indices, ascending.
    pub assignment: Vec<Vec<usize>>,
    /// `C × K`, row `c` is the drawn `p_c`.
    pub proportions: Matrix,
    pub alpha: Concentration,
    pub seed: u64,
    /// Number of redraws needed to satisfy `min_size`.
    pub redraws: usize,
}

const MAX_REDRAWS: usize = 100;

impl Partition {
    pub fn clients(&self) -> usize {
        self.assignment.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignment.iter().map(Vec::len).collect()
    }

    /// `C × K`, fraction of class `c` that landed on client `k`.
    pub fn empirical_proportions(&self, labels: &[usize], classes: usize) -> Matrix {
        let k = self.clients();
        let mut counts = Matrix::zeros(classes, k);
        for (client, idx) in self.assignment.iter().enumerate() {
            for &i in idx {
                counts[(labels[i], client)] += 1.0;
            }
        }
        for c in 0..classes {
            let total: f64 = counts.row(c).iter().sum();
            if total > 0.0 {
                counts.row_mut(c).iter_mut().for_each(|v| *v /= total);
            }
        }
        counts
    }

    /// Checks that the client lists exactly cover `0..n`.
    pub fn is_exact_cover(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.assignment.iter().flatten() {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.iter().all(|&s| s)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "alpha": self.alpha.to_json(),
            "K": self.clients(),
            "seed": self.seed,
            "assignment": self.assignment,
        })
    }

    /// Inverse of [`Partition::to_json`]. Proportions are not stored in the
    /// document; the empirical ones are used instead.
    pub fn from_json(v: &Value, labels: &[usize], classes: usize) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("partition document: {m}"));
        let alpha = match &v["alpha"] {
            Value::String(s) => Concentration::parse(s).map_err(|e| bad(&e.to_string()))?,
            Value::Number(n) => Concentration::from_f64(n.as_f64().unwrap_or(f64::NAN))
                .map_err(|e| bad(&e.to_string()))?,
            _ => return Err(bad("missing alpha")),
        };
        let seed = v["seed"].as_u64().ok_or_else(|| bad("missing seed"))?;
        let assignment: Vec<Vec<usize>> = serde_json::from_value(v["assignment"].clone())
            .map_err(|e| bad(&e.to_string()))?;
        if v["K"].as_u64() != Some(assignment.len() as u64) {
            return Err(bad("K does not match assignment length"));
        }
        let mut p = Partition {
            assignment,
            proportions: Matrix::zeros(0, 0),
            alpha,
            seed,
            redraws: 0,
        };
        if !p.is_exact_cover(labels.len()) {
            return Err(Error::Consistency(
                "partition does not cover the dataset exactly".into(),
            ));
        }
        p.proportions = p.empirical_proportions(labels, classes);
        Ok(p)
    }
}

fn dirichlet(k: usize, alpha: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    for _ in 0..MAX_REDRAWS {
        let g: Vec<f64> = (0..k).map(|_| rng.gamma(alpha)).collect::<Result<_>>()?;
        let s: f64 = g.iter().sum();
        if s > 0.0 && s.is_finite() {
            return Ok(g.iter().map(|v| v / s).collect());
        }
    }
    Err(Error::numerical(format!(
        "Gamma({alpha}) draws underflowed {MAX_REDRAWS} times"
    )))
}

fn categorical(p: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Round-off left u above the final cumulative sum: take the last client with mass.
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

fn draw_once(labels: &[usize], classes: usize, k: usize, alpha: Concentration, rng: &mut Rng) -> Result<(Vec<Vec<usize>>, Matrix)> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut assignment = vec![Vec::new(); k];
    let mut props = Matrix::zeros(classes, k);
    match alpha {
        Concentration::Infinite => {
            // Deal each class round-robin from a running offset, so both the
            // per-class and the total counts differ by at most one.
            let mut next = 0;
            for (c, members) in by_class.iter_mut().enumerate() {
                props.row_mut(c).iter_mut().for_each(|v| *v = 1.0 / k as f64);
                rng.shuffle(members);
                for &i in members.iter() {
                    assignment[next % k].push(i);
                    next += 1;
                }
            }
        }
        Concentration::Finite(a) => {
            for (c, members) in by_class.iter().enumerate() {
                let p = dirichlet(k, a, rng)?;
                for &i in members {
                    assignment[categorical(&p, rng)].push(i);
                }
                props.row_mut(c).copy_from_slice(&p);
            }
        }
    }
    assignment.iter_mut().for_each(|a| a.sort_unstable());
    Ok((assignment, props))
}

/// Splits sample indices across `k` clients with per-class proportions
/// `p_c ~ Dir_K(α)` and a categorical client draw per sample. A draw leaving any
/// client with fewer than `min_size` samples is discarded and redrawn from the
/// next substream, up to 100 times.
pub fn dirichlet_partition(
    labels: &[usize],
    classes: usize,
    k: usize,
    alpha: Concentration,
    seed: u64,
    min_size: usize,
) -> Result<Partition> {
    if k == 0 {
        return Err(Error::invalid("client count must be >= 1"));
    }
    if min_size == 0 {
        return Err(Error::invalid("min_size must be >= 1"));
    }
    if min_size.saturating_mul(k) > labels.len() {
        return Err(Error::invalid(format!(
            "cannot give {k} clients {min_size} samples each from {} samples",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
    }
    for attempt in 0..MAX_REDRAWS {
        let mut rng = Rng::for_purpose(seed, Stream::Partition, attempt as u64, 0);
        let (assignment, proportions) = draw_once(labels, classes, k, alpha, &mut rng)?;
        if assignment.iter().all(|a| a.len() >= min_size) {
            return Ok(Partition {
                assignment,
                proportions,
                alpha,
                seed,
                redraws: attempt,
            });
        }
    }
    Err(Error::numerical(format!(
        "no partition with >= {min_size} samples per client after {MAX_REDRAWS} draws"
    )))
}
