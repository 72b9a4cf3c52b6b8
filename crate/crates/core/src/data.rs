//! Labeled datasets, synthetic generation, CSV ingestion and 7:1:2 splits.
//!
//! Every [`Dataset`] carries an access counter that is bumped whenever sample
//! features are handed to a model (`batch`/`all`). Federation code reads the
//! counter before and after a phase to prove that an excluded client's data
//! was never consumed.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic,
    File,
}

#[derive(Debug)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
    provenance: Provenance,
    reads: AtomicU64,
}

impl Dataset {
    pub fn new(
        dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset("no samples".into()));
        }
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature values for {} samples of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} not below class count {classes}"
            )));
        }
        Ok(Self {
            dim,
            features,
            labels,
            classes,
            provenance,
            reads: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Features of one sample without touching the access counter; for
    /// construction and inspection, not for feeding models.
    pub fn peek(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Number of sample reads served so far.
    pub fn access_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    /// Gathers the given samples as a `[len, dim]` batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        self.reads.fetch_add(idx.len() as u64, Ordering::Relaxed);
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.peek(i));
            y.push(self.labels[i]);
        }
        (
            Tensor::new(vec![idx.len(), self.dim], x).expect("non-empty batch"),
            y,
        )
    }

    pub fn all(&self) -> (Tensor, Vec<usize>) {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }

    /// New dataset holding copies of the selected samples (fresh counter).
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(self.peek(i));
        }
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(self.dim, x, y, self.classes, self.provenance)
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyDataset("nothing to concatenate".into()))?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for p in parts {
            if p.dim != first.dim || p.classes != first.classes {
                return Err(Error::InvalidArgument(
                    "concatenating datasets of different shape".into(),
                ));
            }
            x.extend_from_slice(&p.features);
            y.extend_from_slice(&p.labels);
        }
        Dataset::new(first.dim, x, y, first.classes, first.provenance)
    }

    /// Adds `b * (2y/(C-1) - 1)` to every sample: a label-dependent shift
    /// that only this dataset carries.
    pub fn with_label_bias(&self, bias: &[f64]) -> Result<Dataset> {
        if bias.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "bias of length {} for features of width {}",
                bias.len(),
                self.dim
            )));
        }
        let denom = (self.classes.max(2) - 1) as f64;
        let mut x = self.features.clone();
        for (row, &y) in x.chunks_mut(self.dim).zip(&self.labels) {
            let s = 2.0 * y as f64 / denom - 1.0;
            row.iter_mut().zip(bias).for_each(|(v, b)| *v += s * b);
        }
        Dataset::new(self.dim, x, self.labels.clone(), self.classes, self.provenance)
    }
}

/// Client-specific label-dependent shift applied after partitioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientBias {
    pub client: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub features: usize,
    pub samples_per_class: usize,
    /// Distance between class means.
    pub separation: f64,
    /// Per-feature Gaussian noise standard deviation.
    pub noise: f64,
    pub client_bias: Vec<ClientBias>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            features: 16,
            samples_per_class: 2500,
            separation: 2.0,
            noise: 1.0,
            client_bias: Vec::new(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if self.features < self.classes {
            return Err(Error::InvalidArgument(format!(
                "{} features cannot hold {} axis-aligned class means",
                self.features, self.classes
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidArgument("samples_per_class must be positive".into()));
        }
        if !(self.separation > 0.0) || !(self.noise > 0.0) {
            return Err(Error::InvalidArgument(
                "separation and noise must be positive".into(),
            ));
        }
        for b in &self.client_bias {
            if b.vector.len() != self.features {
                return Err(Error::InvalidArgument(format!(
                    "bias for client {} has length {}, expected {}",
                    b.client,
                    b.vector.len(),
                    self.features
                )));
            }
        }
        Ok(())
    }

    pub fn bias_for(&self, client: usize) -> Option<&[f64]> {
        self.client_bias
            .iter()
            .find(|b| b.client == client)
            .map(|b| b.vector.as_slice())
    }
}

/// Gaussian class clusters with means `separation/sqrt(2) * e_c`, so any two
/// class means are exactly `separation` apart. Samples are class-major.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = spec.separation / std::f64::consts::SQRT_2;
    let n = spec.classes * spec.samples_per_class;
    let mut x = Vec::with_capacity(n * spec.features);
    let mut y = Vec::with_capacity(n);
    for c in 0..spec.classes {
        for _ in 0..spec.samples_per_class {
            for f in 0..spec.features {
                let z: f64 = StandardNormal.sample(&mut rng);
                let mean = if f == c { scale } else { 0.0 };
                x.push(mean + spec.noise * z);
            }
            y.push(c);
        }
    }
    Dataset::new(spec.features, x, y, spec.classes, Provenance::Synthetic)
}

/// Reads `label,f0,f1,...` CSV. Class count is `max label + 1`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let csv_err = |line: usize, detail: String| Error::Csv {
        path: shown.clone(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| csv_err(1, "empty file".into()))?;
    let header: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if header.first().map(|h| h.trim()) != Some("label") || header.len() < 2 {
        return Err(csv_err(1, "header must be `label,f0,f1,...`".into()));
    }
    let dim = header.len() - 1;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, raw) in lines {
        let lineno = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(csv_err(
                lineno,
                format!("expected {} fields, found {}", dim + 1, fields.len()),
            ));
        }
        let label: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| csv_err(lineno, format!("bad label `{}`", fields[0])))?;
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| csv_err(lineno, format!("non-numeric feature f{j} `{f}`")))?;
            if !v.is_finite() {
                return Err(csv_err(lineno, format!("non-finite feature f{j}")));
            }
            x.push(v);
        }
        y.push(label);
    }
    if y.is_empty() {
        return Err(csv_err(1, "no data rows".into()));
    }
    let classes = y.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(dim, x, y, classes, Provenance::File)
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("label");
    for j in 0..ds.dim {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for i in 0..ds.len() {
        let _ = write!(out, "{}", ds.labels[i]);
        for v in ds.peek(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
}

/// Largest-remainder allocation of `total` items proportionally to `sizes`,
/// capped by `caps`.
fn allocate(total: usize, sizes: &[usize], caps: &[usize], num: usize, den: usize) -> Vec<usize> {
    let mut quota: Vec<usize> = sizes
        .iter()
        .zip(caps)
        .map(|(&s, &cap)| (s * num / den).min(cap))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // largest fractional part first, lower class index on ties
    order.sort_by_key(|&c| (std::cmp::Reverse((sizes[c] * num) % den), c));
    let mut missing = total.saturating_sub(quota.iter().sum());
    for pass in 0..2 {
        for &c in &order {
            if missing == 0 {
                break;
            }
            let want_extra = pass == 1 || !(sizes[c] * num).is_multiple_of(den);
            if want_extra && quota[c] < caps[c] {
                quota[c] += 1;
                missing -= 1;
            }
        }
    }
    quota
}

/// Stratified 70/10/20 train/validation/test split.
///
/// Validation gets `floor(n/10)` items and test `floor(n/5)`, spread over
/// classes by largest remainder; everything else goes to train.
pub fn split_712(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if ds.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "split needs at least 10 samples, have {}",
            ds.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, idx) in by_class.iter_mut().enumerate() {
        if !idx.is_empty() && idx.len() < 3 {
            log::warn!("class {c} has only {} samples; split is best-effort", idx.len());
        }
        idx.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let n = ds.len();
    let val_q = allocate(n / 10, &sizes, &sizes, 1, 10);
    let room: Vec<usize> = sizes.iter().zip(&val_q).map(|(s, v)| s - v).collect();
    let test_q = allocate(2 * n / 10, &sizes, &room, 2, 10);

    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (c, idx) in by_class.iter().enumerate() {
        let (v, t) = (val_q[c], test_q[c]);
        va.extend_from_slice(&idx[..v]);
        te.extend_from_slice(&idx[v..v + t]);
        tr.extend_from_slice(&idx[v + t..]);
    }
    Ok((ds.subset(&tr)?, ds.subset(&va)?, ds.subset(&te)?))
}

/// Endless batches from sequential passes over seeded shuffles.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, batch: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyDataset("sampler over zero items".into()));
        }
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            pos: 0,
            batch: batch.min(len),
            rng,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}
