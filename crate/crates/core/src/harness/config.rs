//! Experiment configuration: a JSON tree whose every key is checked.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{load_dataset_csv, Dataset, GaussianMixture};
use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::pacing::PacingSpec;
use crate::schedule::LrSchedule;
use crate::trainer::DEFAULT_RECORD_EVERY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Train and test sets drawn from one random isotropic mixture.
    Synthetic {
        classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
        seed: u64,
    },
    Files { train: PathBuf, test: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            classes: 5,
            dim: 16,
            train_per_class: 500,
            test_per_class: 100,
            spread: 3.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    /// Materializes `(train, test)`. Synthetic sets share one mixture; the
    /// test set is sampled from an independent stream.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Synthetic {
                classes,
                dim,
                train_per_class,
                test_per_class,
                spread,
                seed,
            } => {
                let mixture = GaussianMixture::random(*classes, *dim, *spread, *seed)?;
                let train = mixture.sample(*train_per_class, derive_seed(*seed, 1))?;
                let test = mixture.sample(*test_per_class, derive_seed(*seed, 2))?;
                Ok((train, test))
            }
            DatasetSpec::Files { train, test } => {
                let train = load_dataset_csv(train)?;
                let test = load_dataset_csv(test)?;
                if train.dim() != test.dim() {
                    return Err(Error::DimensionMismatch {
                        context: "test vs training features",
                        expected: train.dim(),
                        actual: test.dim(),
                    });
                }
                Ok((train, test))
            }
        }
    }
}

/// Independent 64-bit seed for `stream` under `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.random()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Easiest examples first, ranked by the configured scoring.
    #[default]
    Curriculum,
    /// Hardest first: the configured scores negated.
    Anti,
    /// Pacing over a random ranking.
    Random,
    /// Uniform sampling from the whole training set.
    Vanilla,
    /// Ranking by the current model's loss, refreshed at every pacing step.
    SelfPaced,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ScoringSpec {
    /// Exact Bayes posterior of synthetic data.
    #[default]
    Oracle,
    /// Loss of a vanilla-trained copy of the learner.
    SelfTaught,
    /// Cross-validated probe on external embeddings.
    Transfer {
        embeddings: PathBuf,
        #[serde(default = "default_folds")]
        folds: usize,
    },
    /// Precomputed `id,score` table.
    File { path: PathBuf },
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion", rename_all = "snake_case")]
pub enum Selection {
    /// Mean test accuracy over the last `window` checkpoints.
    FinalAccuracy {
        #[serde(default = "default_window")]
        window: usize,
    },
    /// Normalized area under the learning curve.
    Auc,
}

impl Default for Selection {
    fn default() -> Self {
        Selection::FinalAccuracy { window: default_window() }
    }
}

pub const DEFAULT_FINAL_WINDOW: usize = 5;

fn default_window() -> usize {
    DEFAULT_FINAL_WINDOW
}

impl Selection {
    /// Checkpoints averaged for the reported final accuracy.
    pub fn window(&self) -> usize {
        match self {
            Selection::FinalAccuracy { window } => *window,
            Selection::Auc => DEFAULT_FINAL_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub condition: Condition,
    pub scoring: ScoringSpec,
    pub pacing: PacingSpec,
    pub lr: LrSchedule,
    pub model: Architecture,
    pub batch_size: usize,
    pub iterations: usize,
    /// Number of seeds `seed, seed+1, ...` when `seeds` is not given.
    pub repetitions: Option<usize>,
    pub seed: u64,
    pub seeds: Option<Vec<u64>>,
    pub record_every: usize,
    pub selection: Selection,
    /// Share of the training set held out for model selection.
    pub validation_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            condition: Condition::default(),
            scoring: ScoringSpec::default(),
            pacing: PacingSpec::fixed_exp(0.2, 1.5, 300),
            lr: LrSchedule::Exponential {
                lr0: 0.001,
                decrease_factor: 1.5,
                lr_step_length: 600,
            },
            model: Architecture::LinearSoftmax,
            batch_size: 100,
            iterations: 3000,
            repetitions: None,
            seed: 0,
            seeds: None,
            record_every: DEFAULT_RECORD_EVERY,
            selection: Selection::default(),
            validation_fraction: 0.2,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON configuration. Every key that does not
    /// belong to the schema is reported.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = parse_checked(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Seeds of the repetitions, in run order.
    pub fn resolved_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(seeds) => seeds.clone(),
            None => (0..self.repetitions.unwrap_or(1) as u64).map(|r| self.seed + r).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(Error::config("seeds must not be empty"));
            }
            if self.repetitions.is_some_and(|r| r != seeds.len()) {
                return Err(Error::config(format!(
                    "repetitions = {} disagrees with the {} listed seeds",
                    self.repetitions.unwrap_or(0),
                    seeds.len()
                )));
            }
        }
        if self.repetitions == Some(0) {
            return Err(Error::config("repetitions must be at least 1"));
        }
        if self.selection.window() == 0 {
            return Err(Error::config("selection window must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if let Architecture::Mlp1 { hidden: 0 } = self.model {
            return Err(Error::config("hidden layer width must be at least 1"));
        }
        self.lr.validate()?;
        let mut missing = Vec::new();
        if let DatasetSpec::Files { train, test } = &self.dataset {
            missing.extend([train, test].into_iter().filter(|p| !p.exists()));
        }
        match &self.scoring {
            ScoringSpec::Transfer { embeddings, .. } if !embeddings.exists() => missing.push(embeddings),
            ScoringSpec::File { path } if !path.exists() => missing.push(path),
            _ => {}
        }
        if !missing.is_empty() {
            let names: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
            return Err(Error::config(format!("missing files: {}", names.join(", "))));
        }
        Ok(())
    }
}

/// Deserializes `text`, rejecting every key the schema does not know.
pub(crate) fn parse_checked<T: Serialize + DeserializeOwned>(text: &str) -> Result<T> {
    let raw: Value = serde_json::from_str(text).map_err(|e| Error::config(format!("malformed JSON: {e}")))?;
    let parsed: T = serde_json::from_value(raw.clone()).map_err(|e| Error::config(e.to_string()))?;
    let known = serde_json::to_value(&parsed)?;
    let mut unknown = BTreeSet::new();
    collect_unknown_keys(&raw, &known, "", &mut unknown);
    if !unknown.is_empty() {
        let keys: Vec<String> = unknown.into_iter().collect();
        return Err(Error::config(format!("unknown keys: {}", keys.join(", "))));
    }
    Ok(parsed)
}

/// Dotted paths present in `raw` but absent from the re-serialized config.
fn collect_unknown_keys(raw: &Value, known: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    match (raw, known) {
        (Value::Object(r), Value::Object(k)) => {
            for (key, value) in r {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                match k.get(key) {
                    Some(sub) => collect_unknown_keys(value, sub, &path, out),
                    None => {
                        out.insert(path);
                    }
                }
            }
        }
        (Value::Array(r), Value::Array(k)) => {
            for (i, (rv, kv)) in r.iter().zip(k).enumerate() {
                collect_unknown_keys(rv, kv, &format!("{prefix}[{i}]"), out);
            }
        }
        _ => {}
    }
}
