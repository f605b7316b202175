//! Labeled datasets, synthetic Gaussian mixtures with exact Bayes posteriors,
//! CSV ingestion and stratified splitting.
//!
//! Every [`Dataset`] uses contiguous 0-based ids so that per-example tables
//! (scores, embeddings, priors) can be plain vectors indexed by id.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

/// Isotropic Gaussian mixture: class `c` has mean `means[c]` and covariance
/// `variance * I`. Carried alongside synthetic datasets so that exact Bayes
/// posteriors can be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
    pub class_priors: Vec<f64>,
}

impl GaussianMixture {
    /// Draws `num_classes` means from a standard normal in `dim` dimensions.
    /// `spread` is the within-class standard deviation.
    pub fn random(num_classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(num_classes, dim, spread, &mut rng)
    }

    fn random_with(num_classes: usize, dim: usize, spread: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::param(format!("need at least 2 classes, got {num_classes}")));
        }
        if dim == 0 {
            return Err(Error::param("dimension must be at least 1"));
        }
        if !(spread.is_finite() && spread > 0.0) {
            return Err(Error::param(format!("spread must be positive and finite, got {spread}")));
        }
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let means = (0..num_classes)
            .map(|_| (0..dim).map(|_| std_normal.sample(rng)).collect())
            .collect();
        Ok(Self {
            means,
            variance: spread * spread,
            class_priors: vec![1.0 / num_classes as f64; num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Samples `n_per_class` points from every component, class-major order.
    pub fn sample(&self, n_per_class: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n_per_class, &mut rng)
    }

    fn sample_with(&self, n_per_class: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        if n_per_class == 0 {
            return Err(Error::param("n_per_class must be at least 1"));
        }
        let noise = Normal::new(0.0, self.variance.sqrt()).expect("positive variance");
        let mut examples = Vec::with_capacity(n_per_class * self.num_classes());
        for (label, mean) in self.means.iter().enumerate() {
            for _ in 0..n_per_class {
                let features = mean.iter().map(|m| m + noise.sample(rng)).collect();
                examples.push(Example {
                    id: examples.len(),
                    features,
                    label,
                });
            }
        }
        let mut ds = Dataset::new(examples, self.num_classes())?;
        ds.mixture = Some(self.clone());
        Ok(ds)
    }

    fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.class_priors)
            .map(|(mean, prior)| {
                let sq: f64 = mean.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
                prior.ln() - sq / (2.0 * self.variance)
            })
            .collect()
    }

    /// Exact posterior `P(class | x)` under the mixture.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let log_joint = self.log_joint(x);
        let max = log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = log_joint.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// `-ln P(label | x)`, computed in log space.
    pub fn neg_log_posterior(&self, x: &[f64], label: usize) -> f64 {
        let log_joint = self.log_joint(x);
        let max = log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + log_joint.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let raw = lse - log_joint[label];
        if raw < 0.0 {
            0.0
        } else {
            raw
        }
    }
}

/// Generates a synthetic classification dataset from a freshly drawn
/// isotropic mixture. The mixture is attached as Bayes metadata.
pub fn generate_gaussian_mixture(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixture = GaussianMixture::random_with(num_classes, dim, spread, &mut rng)?;
    mixture.sample_with(n_per_class, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    dim: usize,
    class_counts: Vec<usize>,
    /// `origin[id]` is the id this example had in the root dataset.
    origin: Vec<usize>,
    mixture: Option<GaussianMixture>,
}

impl Dataset {
    /// Validates and wraps a list of examples whose ids must be exactly `0..N`
    /// in order.
    pub fn new(examples: Vec<Example>, num_classes: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::param("dataset must contain at least one example"));
        }
        let dim = examples[0].features.len();
        if dim == 0 {
            return Err(Error::param("feature dimension must be at least 1"));
        }
        let mut class_counts = vec![0usize; num_classes];
        for (pos, ex) in examples.iter().enumerate() {
            if ex.id != pos {
                return Err(Error::param(format!(
                    "ids must be contiguous from 0: position {pos} holds id {}",
                    ex.id
                )));
            }
            if ex.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "example features",
                    expected: dim,
                    actual: ex.features.len(),
                });
            }
            if ex.label >= num_classes {
                return Err(Error::param(format!(
                    "example {} has label {} but only {num_classes} classes",
                    ex.id, ex.label
                )));
            }
            class_counts[ex.label] += 1;
        }
        if let Some(empty) = class_counts.iter().position(|&c| c == 0) {
            return Err(Error::param(format!("empty class {empty}")));
        }
        let origin = (0..examples.len()).collect();
        Ok(Self {
            examples,
            num_classes,
            dim,
            class_counts,
            origin,
            mixture: None,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, id: usize) -> &Example {
        &self.examples[id]
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.examples.iter().map(|e| e.label)
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn mixture(&self) -> Option<&GaussianMixture> {
        self.mixture.as_ref()
    }

    pub fn with_mixture(mut self, mixture: GaussianMixture) -> Result<Self> {
        if mixture.num_classes() != self.num_classes || mixture.dim() != self.dim {
            return Err(Error::param(format!(
                "mixture has {} classes in {} dims, dataset has {} classes in {} dims",
                mixture.num_classes(),
                mixture.dim(),
                self.num_classes,
                self.dim
            )));
        }
        self.mixture = Some(mixture);
        Ok(self)
    }

    /// Ids of every example in class `c`, ascending.
    pub fn class_members(&self, c: usize) -> Vec<usize> {
        self.examples.iter().filter(|e| e.label == c).map(|e| e.id).collect()
    }

    /// New dataset made of `ids` (kept in ascending order, renumbered from 0).
    /// Fails if the selection leaves a class empty.
    pub fn subset(&self, ids: &[usize]) -> Result<Dataset> {
        let mut sorted: Vec<usize> = ids.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(Error::param("subset ids contain duplicates"));
        }
        if let Some(&bad) = sorted.iter().find(|&&id| id >= self.len()) {
            return Err(Error::param(format!("subset id {bad} out of range")));
        }
        let examples = sorted
            .iter()
            .enumerate()
            .map(|(new_id, &old)| Example {
                id: new_id,
                features: self.examples[old].features.clone(),
                label: self.examples[old].label,
            })
            .collect();
        let mut ds = Dataset::new(examples, self.num_classes)?;
        ds.origin = sorted.iter().map(|&old| self.origin[old]).collect();
        ds.mixture = self.mixture.clone();
        Ok(ds)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.dim).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for ex in &self.examples {
            let mut row = vec![ex.id.to_string(), ex.label.to_string()];
            row.extend(ex.features.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a dataset from CSV with header `id,label,f0,...,f{d-1}`.
///
/// Rows may appear in any order; ids must be unique and cover `0..N`, labels
/// are 0-based and every class up to the largest label must be populated.
pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(Error::load(path, "header must be `id,label,f0,...`"));
    }
    for (j, name) in headers.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::load(path, format!("header column {} should be f{j}, found `{name}`", j + 2)));
        }
    }
    let dim = headers.len() - 2;

    let mut rows: Vec<Option<(usize, Vec<f64>)>> = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| Error::load(path, format!("row {line}: {e}")))?;
        if record.len() != dim + 2 {
            return Err(Error::load(
                path,
                format!("row {line}: expected {} fields, found {}", dim + 2, record.len()),
            ));
        }
        let id: usize = record[0]
            .parse()
            .map_err(|_| Error::load(path, format!("row {line}: bad id `{}`", &record[0])))?;
        let label: usize = record[1]
            .parse()
            .map_err(|_| Error::load(path, format!("row {line}: bad label `{}`", &record[1])))?;
        let features = record
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::load(path, format!("row {line}: bad feature value `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if rows.len() <= id {
            rows.resize(id + 1, None);
        }
        if rows[id].is_some() {
            return Err(Error::load(path, format!("row {line}: duplicate id {id}")));
        }
        rows[id] = Some((label, features));
    }
    if rows.is_empty() {
        return Err(Error::load(path, "no data rows"));
    }
    if let Some(missing) = rows.iter().position(Option::is_none) {
        return Err(Error::load(path, format!("ids are not contiguous: id {missing} is missing")));
    }
    let examples: Vec<Example> = rows
        .into_iter()
        .enumerate()
        .map(|(id, row)| {
            let (label, features) = row.expect("checked above");
            Example { id, features, label }
        })
        .collect();
    let num_classes = examples.iter().map(|e| e.label).max().unwrap_or(0) + 1;
    let present: BTreeSet<usize> = examples.iter().map(|e| e.label).collect();
    if let Some(empty) = (0..num_classes).find(|c| !present.contains(c)) {
        return Err(Error::load(path, format!("empty class {empty}")));
    }
    if num_classes < 2 {
        return Err(Error::load(path, "need at least 2 classes"));
    }
    Dataset::new(examples, num_classes).map_err(|e| Error::load(path, e.to_string()))
}

/// Per-example feature vectors from an external model, indexed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: Vec<Vec<f64>>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || dim == 0 {
            return Err(Error::param("embedding table must be non-empty"));
        }
        if let Some((id, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::param(format!(
                "embedding row {id} has dimension {}, expected {dim}",
                row.len()
            )));
        }
        Ok(Self { rows, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id]
    }

    pub fn check_covers(&self, ds: &Dataset) -> Result<()> {
        if self.rows.len() != ds.len() {
            return Err(Error::DimensionMismatch {
                context: "embedding rows vs dataset examples",
                expected: ds.len(),
                actual: self.rows.len(),
            });
        }
        Ok(())
    }

    /// Loads `id,e0,...,e{e-1}`; ids must be unique and contiguous from 0.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "id" {
            return Err(Error::load(path, "header must be `id,e0,...`"));
        }
        for (j, name) in headers.iter().skip(1).enumerate() {
            if name != format!("e{j}") {
                return Err(Error::load(path, format!("header column {} should be e{j}, found `{name}`", j + 1)));
            }
        }
        let dim = headers.len() - 1;
        let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
        for (row_idx, record) in rdr.records().enumerate() {
            let line = row_idx + 2;
            let record = record.map_err(|e| Error::load(path, format!("row {line}: {e}")))?;
            if record.len() != dim + 1 {
                return Err(Error::load(path, format!("row {line}: expected {} fields", dim + 1)));
            }
            let id: usize = record[0]
                .parse()
                .map_err(|_| Error::load(path, format!("row {line}: bad id `{}`", &record[0])))?;
            let values = record
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::load(path, format!("row {line}: bad value `{s}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if rows.len() <= id {
                rows.resize(id + 1, None);
            }
            if rows[id].is_some() {
                return Err(Error::load(path, format!("row {line}: duplicate id {id}")));
            }
            rows[id] = Some(values);
        }
        if let Some(missing) = rows.iter().position(Option::is_none) {
            return Err(Error::load(path, format!("ids are not contiguous: id {missing} is missing")));
        }
        Self::new(rows.into_iter().map(|r| r.expect("checked above")).collect())
            .map_err(|e| Error::load(path, e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim).map(|j| format!("e{j}")));
        w.write_record(&header)?;
        for (id, row) in self.rows.iter().enumerate() {
            let mut rec = vec![id.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Hamilton (largest remainder) apportionment of `size` slots over classes of
/// sizes `counts`: floor quotas first, leftover slots to the largest
/// fractional parts, ties to the lower class id. Exact integer arithmetic.
pub fn proportional_quotas(counts: &[usize], size: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    assert!(total > 0, "quotas over an empty population");
    assert!(size <= total, "size {size} exceeds population {total}");
    let mut quotas: Vec<usize> = counts.iter().map(|&n| size * n / total).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // stable sort keeps ascending class id among equal remainders
    order.sort_by_key(|&c| std::cmp::Reverse(size * counts[c] % total));
    for &c in order.iter().take(size - assigned) {
        quotas[c] += 1;
    }
    quotas
}

/// Splits into `(train, validation)` with `round(fraction * N)` training
/// examples apportioned per class by [`proportional_quotas`]. Membership within
/// each class is a seeded shuffle.
pub fn stratified_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param(format!("split fraction must lie in (0,1), got {fraction}")));
    }
    let target = (fraction * ds.len() as f64 + 0.5).floor() as usize;
    let target = target.min(ds.len());
    let quotas = proportional_quotas(ds.class_counts(), target);
    for (c, (&q, &n)) in quotas.iter().zip(ds.class_counts()).enumerate() {
        if q == 0 || q == n {
            return Err(Error::param(format!(
                "fraction {fraction} leaves class {c} empty on one side ({q} of {n} to train)"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = Vec::with_capacity(target);
    let mut val_ids = Vec::with_capacity(ds.len() - target);
    for (c, &q) in quotas.iter().enumerate() {
        let mut members = ds.class_members(c);
        members.shuffle(&mut rng);
        train_ids.extend_from_slice(&members[..q]);
        val_ids.extend_from_slice(&members[q..]);
    }
    Ok((ds.subset(&train_ids)?, ds.subset(&val_ids)?))
}
