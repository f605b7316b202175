//! Difficulty scores: one finite value per example id, larger is harder.
//!
//! Every construction scores an example by `-ln p(true class)` under some
//! classifier, so high confidence means easy.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, EmbeddingTable, Example};
use crate::error::{Error, Result};
use crate::model::{Architecture, Model};
use crate::sequencer::CurriculumPlan;
use crate::trainer::{train, TrainOptions};

/// Upper clamp for transfer scores; keeps saturated probes finite.
pub const MAX_TRANSFER_SCORE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    scores: Vec<f64>,
    provenance: String,
}

impl ScoreTable {
    pub fn new(scores: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(id) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::param(format!("score for id {id} is not finite")));
        }
        Ok(Self {
            scores,
            provenance: provenance.into(),
        })
    }

    /// All-zero table; sorting by it yields id order.
    pub fn constant(n: usize) -> Self {
        Self {
            scores: vec![0.0; n],
            provenance: "constant".into(),
        }
    }

    /// Scores form a seeded uniform permutation of `0..n`.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        Self {
            scores: perm.into_iter().map(|v| v as f64).collect(),
            provenance: "random".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.scores
    }

    pub fn get(&self, id: usize) -> f64 {
        self.scores[id]
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// `f' = -f`: hardest examples first.
    pub fn inverted(&self) -> Self {
        let provenance = match self.provenance.strip_prefix("anti:") {
            Some(inner) => inner.to_string(),
            None => format!("anti:{}", self.provenance),
        };
        Self {
            scores: self.scores.iter().map(|s| -s).collect(),
            provenance,
        }
    }

    /// Ids ascending by `(score, id)`.
    pub fn ascending_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.scores.len()).collect();
        ids.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]).then(a.cmp(&b)));
        ids
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "score"])?;
        for (id, s) in self.scores.iter().enumerate() {
            w.write_record([id.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `id,score`; ids must be unique and cover `0..N`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "score" {
            return Err(Error::load(path, "header must be `id,score`"));
        }
        let mut slots: Vec<Option<f64>> = Vec::new();
        for (row_idx, rec) in rdr.records().enumerate() {
            let line = row_idx + 2;
            let rec = rec.map_err(|e| Error::load(path, format!("row {line}: {e}")))?;
            let id: usize = rec[0]
                .parse()
                .map_err(|_| Error::load(path, format!("row {line}: bad id `{}`", &rec[0])))?;
            let score: f64 = rec[1]
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::load(path, format!("row {line}: bad score `{}`", &rec[1])))?;
            if slots.len() <= id {
                slots.resize(id + 1, None);
            }
            if slots[id].replace(score).is_some() {
                return Err(Error::load(path, format!("row {line}: duplicate id {id}")));
            }
        }
        if let Some(missing) = slots.iter().position(Option::is_none) {
            return Err(Error::load(path, format!("ids are not contiguous: id {missing} is missing")));
        }
        Ok(Self {
            scores: slots.into_iter().flatten().collect(),
            provenance: format!("file:{}", path.display()),
        })
    }
}

/// `-ln p(label)` of `model` on every example.
pub fn score_by_model_loss(ds: &Dataset, model: &Model) -> Result<ScoreTable> {
    model.check_input(ds)?;
    let scores = ds
        .examples()
        .iter()
        .map(|ex| model.example_loss(&ex.features, ex.label))
        .collect();
    ScoreTable::new(scores, "model_loss")
}

/// Settings for training the vanilla network whose confidence becomes the
/// self-taught score.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTaughtConfig {
    pub train: TrainOptions,
    pub batch_size: usize,
    pub iterations: usize,
}

/// Trains a vanilla model on `ds` and scores every example by that model's
/// final loss.
pub fn self_taught_score(ds: &Dataset, cfg: &SelfTaughtConfig, seed: u64) -> Result<ScoreTable> {
    let (model, _) = train_vanilla_teacher(ds, cfg, seed)?;
    Ok(score_by_model_loss(ds, &model)?.with_provenance("self_taught"))
}

pub(crate) fn train_vanilla_teacher(ds: &Dataset, cfg: &SelfTaughtConfig, seed: u64) -> Result<(Model, crate::trainer::LearningCurve)> {
    let plan = CurriculumPlan::vanilla(ds, cfg.batch_size, cfg.iterations, seed)?;
    let mut opts = cfg.train.clone();
    opts.init_seed = seed;
    opts.self_paced = false;
    train(ds, ds, &plan, &opts)
}

/// Full-batch gradient descent settings for the transfer probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub l2: f64,
    pub max_iterations: usize,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub tolerance: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iterations: 1000,
            tolerance: 1e-6,
        }
    }
}

/// Out-of-fold confidence of a linear-softmax probe trained on transferred
/// features, scored as `-ln p(true)` and clamped to `[0, 50]`.
pub fn transfer_score(ds: &Dataset, emb: &EmbeddingTable, folds: usize, seed: u64) -> Result<ScoreTable> {
    transfer_score_with(ds, emb, folds, seed, ProbeSettings::default())
}

pub fn transfer_score_with(
    ds: &Dataset,
    emb: &EmbeddingTable,
    folds: usize,
    seed: u64,
    settings: ProbeSettings,
) -> Result<ScoreTable> {
    emb.check_covers(ds)?;
    if folds < 2 {
        return Err(Error::param(format!("need at least 2 folds, got {folds}")));
    }
    let smallest = *ds.class_counts().iter().min().expect("non-empty");
    if folds > smallest {
        return Err(Error::param(format!(
            "{folds} folds exceed the smallest class count {smallest}"
        )));
    }

    // stratified fold assignment: each class shuffled, then dealt round-robin
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; ds.len()];
    for c in 0..ds.num_classes() {
        let mut members = ds.class_members(c);
        members.shuffle(&mut rng);
        for (k, id) in members.into_iter().enumerate() {
            fold_of[id] = k % folds;
        }
    }

    let embedded: Vec<Example> = ds
        .examples()
        .iter()
        .map(|ex| Example {
            id: ex.id,
            features: emb.row(ex.id).to_vec(),
            label: ex.label,
        })
        .collect();

    let mut scores = vec![0.0; ds.len()];
    for fold in 0..folds {
        let train_set: Vec<&Example> = embedded.iter().filter(|ex| fold_of[ex.id] != fold).collect();
        let probe = fit_probe(&train_set, ds.num_classes(), emb.dim(), settings)?;
        for ex in embedded.iter().filter(|ex| fold_of[ex.id] == fold) {
            scores[ex.id] = probe.example_loss(&ex.features, ex.label).clamp(0.0, MAX_TRANSFER_SCORE);
        }
    }
    ScoreTable::new(scores, "transfer")
}

/// L2-regularized multinomial logistic regression by full-batch gradient
/// descent with a step of `1 / L` for a curvature bound `L`.
fn fit_probe(examples: &[&Example], num_classes: usize, dim: usize, s: ProbeSettings) -> Result<Model> {
    let mut model = Model::zeros(Architecture::LinearSoftmax, num_classes, dim);
    let mean_sq: f64 = examples
        .iter()
        .map(|ex| 1.0 + ex.features.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / examples.len() as f64;
    let step = 1.0 / (0.5 * mean_sq + s.l2);
    let bias_start = num_classes * dim;
    for _ in 0..s.max_iterations {
        let mut grad = model.backward(examples.iter().copied())?;
        for (j, (g, p)) in grad.iter_mut().zip(model.params()).enumerate() {
            if j < bias_start {
                *g += s.l2 * p;
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < s.tolerance {
            break;
        }
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= step * g;
        }
    }
    Ok(model)
}

/// `-ln` of the exact Bayes posterior of the true class. Requires mixture
/// metadata on the dataset.
pub fn oracle_bayes_score(ds: &Dataset) -> Result<ScoreTable> {
    let mixture = ds
        .mixture()
        .ok_or_else(|| Error::param("oracle scoring needs a dataset with Gaussian mixture metadata"))?;
    let scores = ds
        .examples()
        .iter()
        .map(|ex| mixture.neg_log_posterior(&ex.features, ex.label))
        .collect();
    ScoreTable::new(scores, "oracle")
}
