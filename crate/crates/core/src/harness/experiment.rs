//! Repeated runs of one experimental condition and their summary.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, EmbeddingTable};
use crate::error::{Error, Result};
use crate::gradients::{coherence_report, default_subset_size, CoherenceReport};
use crate::model::Model;
use crate::pacing::{PacingSpec, PacingVariant};
use crate::scoring::{oracle_bayes_score, score_by_model_loss, self_taught_score, transfer_score, ScoreTable, SelfTaughtConfig};
use crate::sequencer::CurriculumPlan;
use crate::stats::{mean, normalized_auc, standard_error};
use crate::trainer::{train, LearningCurve, TrainOptions};

use super::config::{Condition, ExperimentConfig, ScoringSpec};

impl ExperimentConfig {
    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            architecture: self.model,
            schedule: self.lr.clone(),
            record_every: self.record_every,
            init_seed: seed,
            self_paced: self.condition == Condition::SelfPaced,
        }
    }

    fn self_taught_config(&self) -> SelfTaughtConfig {
        let mut train = self.train_options(0);
        train.self_paced = false;
        SelfTaughtConfig {
            train,
            batch_size: self.batch_size,
            iterations: self.iterations,
        }
    }
}

/// Difficulty scores of the configured scoring method for the run `seed`.
pub fn compute_scores(cfg: &ExperimentConfig, train_ds: &Dataset, seed: u64) -> Result<ScoreTable> {
    match &cfg.scoring {
        ScoringSpec::Oracle => oracle_bayes_score(train_ds),
        ScoringSpec::SelfTaught => self_taught_score(train_ds, &cfg.self_taught_config(), seed),
        ScoringSpec::Transfer { embeddings, folds } => {
            let emb = EmbeddingTable::load_csv(embeddings)?;
            transfer_score(train_ds, &emb, *folds, seed)
        }
        ScoringSpec::File { path } => {
            let table = ScoreTable::read_csv(path)?;
            if table.len() != train_ds.len() {
                return Err(Error::DimensionMismatch {
                    context: "score file vs training set",
                    expected: train_ds.len(),
                    actual: table.len(),
                });
            }
            Ok(table)
        }
    }
}

/// The plan the configured condition trains with. `scores` overrides the
/// configured scoring method.
pub fn build_plan(cfg: &ExperimentConfig, train_ds: &Dataset, seed: u64, scores: Option<ScoreTable>) -> Result<CurriculumPlan> {
    let n = train_ds.len();
    let scores = match cfg.condition {
        Condition::Vanilla => return CurriculumPlan::vanilla(train_ds, cfg.batch_size, cfg.iterations, seed),
        Condition::Random => ScoreTable::random(n, seed),
        Condition::SelfPaced => ScoreTable::constant(n),
        Condition::Curriculum => match scores {
            Some(s) => s,
            None => compute_scores(cfg, train_ds, seed)?,
        },
        Condition::Anti => match scores {
            Some(s) => s,
            None => compute_scores(cfg, train_ds, seed)?,
        }
        .inverted(),
    };
    CurriculumPlan::build(train_ds, &scores, &cfg.pacing, cfg.batch_size, cfg.iterations, seed)
}

/// One repetition: returns the final model and its learning curve.
pub fn run_seed(
    cfg: &ExperimentConfig,
    train_ds: &Dataset,
    test_ds: &Dataset,
    seed: u64,
    scores: Option<ScoreTable>,
) -> Result<(Model, LearningCurve)> {
    let plan = build_plan(cfg, train_ds, seed, scores)?;
    train(train_ds, test_ds, &plan, &cfg.train_options(seed))
}

/// Mean test accuracy over the last `window` checkpoints.
pub fn final_accuracy(curve: &LearningCurve, window: usize) -> f64 {
    let acc: Vec<f64> = curve.accuracies().collect();
    let k = window.min(acc.len());
    mean(&acc[acc.len() - k..])
}

pub fn curve_auc(curve: &LearningCurve) -> f64 {
    let xs: Vec<f64> = curve.iterations().map(|i| i as f64).collect();
    let ys: Vec<f64> = curve.accuracies().collect();
    normalized_auc(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub final_accuracy: Option<f64>,
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve_file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanPoint {
    pub iteration: usize,
    pub test_acc: f64,
    pub test_acc_ste: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation over repetitions divided by `sqrt(R)`.
    pub ste: f64,
}

impl Estimate {
    fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            ste: standard_error(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedOutcome>,
    pub final_accuracy: Estimate,
    pub auc: Estimate,
    pub mean_curve: Vec<MeanPoint>,
    pub warnings: Vec<String>,
}

impl ExperimentSummary {
    /// Value maximized by model selection.
    pub fn selection_score(&self) -> f64 {
        match self.config.selection {
            super::config::Selection::FinalAccuracy { .. } => self.final_accuracy.mean,
            super::config::Selection::Auc => self.auc.mean,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Curves of every successful repetition alongside the summary.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub summary: ExperimentSummary,
    pub curves: Vec<(u64, LearningCurve)>,
    pub models: Vec<(u64, Model)>,
}

fn curve_file_name(seed: u64) -> String {
    format!("curve_seed{seed}.csv")
}

/// Runs every configured seed on `(train, test)`. Each seed may supply its
/// own precomputed scores.
pub fn run_on(
    cfg: &ExperimentConfig,
    train_ds: &Dataset,
    test_ds: &Dataset,
    scores: Option<&[ScoreTable]>,
) -> Result<ExperimentRun> {
    cfg.validate()?;
    let seeds = cfg.resolved_seeds();
    if let Some(s) = scores {
        if s.len() != seeds.len() {
            return Err(Error::config(format!("{} score tables for {} seeds", s.len(), seeds.len())));
        }
    }
    let results: Vec<Result<(Model, LearningCurve)>> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| run_seed(cfg, train_ds, test_ds, seed, scores.map(|s| s[r].clone())))
        .collect();

    let failures: Vec<(u64, String)> = seeds
        .iter()
        .zip(&results)
        .filter_map(|(s, r)| r.as_ref().err().map(|e| (*s, e.to_string())))
        .collect();
    // configuration problems are identical for every seed and are not run failures
    let setup_error = results.iter().position(|r| {
        matches!(
            r,
            Err(Error::Config(_) | Error::Parameter(_) | Error::DimensionMismatch { .. } | Error::Load { .. })
        )
    });
    if let Some(pos) = setup_error {
        return Err(results.into_iter().nth(pos).expect("position is in range").unwrap_err());
    }
    if !failures.is_empty() && 2 * failures.len() >= seeds.len() {
        return Err(Error::RunsFailed {
            failed: failures.len(),
            total: seeds.len(),
            first: format!("seed {}: {}", failures[0].0, failures[0].1),
        });
    }

    let window = cfg.selection.window();
    let mut outcomes = Vec::new();
    let mut curves = Vec::new();
    let mut models = Vec::new();
    for (&seed, result) in seeds.iter().zip(results) {
        match result {
            Ok((model, curve)) => {
                outcomes.push(SeedOutcome {
                    seed,
                    failed: false,
                    error: None,
                    final_accuracy: Some(final_accuracy(&curve, window)),
                    auc: Some(curve_auc(&curve)),
                    curve_file: Some(curve_file_name(seed)),
                });
                curves.push((seed, curve));
                models.push((seed, model));
            }
            Err(e) => outcomes.push(SeedOutcome {
                seed,
                failed: true,
                error: Some(e.to_string()),
                final_accuracy: None,
                auc: None,
                curve_file: None,
            }),
        }
    }

    let finals: Vec<f64> = outcomes.iter().filter_map(|o| o.final_accuracy).collect();
    let aucs: Vec<f64> = outcomes.iter().filter_map(|o| o.auc).collect();
    let mean_curve = (0..curves[0].1.points.len())
        .map(|k| {
            let acc: Vec<f64> = curves.iter().map(|(_, c)| c.points[k].test_acc).collect();
            let loss: Vec<f64> = curves.iter().map(|(_, c)| c.points[k].train_loss).collect();
            MeanPoint {
                iteration: curves[0].1.points[k].iteration,
                test_acc: mean(&acc),
                test_acc_ste: standard_error(&acc),
                train_loss: mean(&loss),
            }
        })
        .collect();

    let mut warnings = Vec::new();
    if seeds.len() == 1 {
        warnings.push("single repetition: standard errors are reported as 0".to_string());
    }
    if cfg.pacing.variant != PacingVariant::Vanilla
        && !matches!(cfg.condition, Condition::Vanilla)
        && cfg.pacing.saturation_iteration() >= cfg.iterations
    {
        warnings.push(format!(
            "pacing reaches the full training set only at iteration {}, beyond the {} iterations run",
            cfg.pacing.saturation_iteration(),
            cfg.iterations
        ));
    }
    for (seed, message) in &failures {
        warnings.push(format!("seed {seed} failed: {message}"));
    }

    Ok(ExperimentRun {
        summary: ExperimentSummary {
            config: cfg.clone(),
            seeds: outcomes,
            final_accuracy: Estimate::of(&finals),
            auc: Estimate::of(&aucs),
            mean_curve,
            warnings,
        },
        curves,
        models,
    })
}

/// Loads the configured data and runs every seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let (train_ds, test_ds) = cfg.dataset.load()?;
    run_on(cfg, &train_ds, &test_ds, None)
}

impl ExperimentRun {
    /// Writes `curve_seed{s}.csv` per successful seed and `summary.json`.
    /// Returns the written file names, relative to `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<String>> {
        self.write_with_prefix(dir, "")
    }

    pub(crate) fn write_with_prefix(&self, dir: &Path, prefix: &str) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (seed, curve) in &self.curves {
            let name = format!("{prefix}{}", curve_file_name(*seed));
            curve.write_csv(dir.join(&name))?;
            files.push(name);
        }
        let name = format!("{prefix}summary.json");
        std::fs::write(dir.join(&name), self.summary.to_json_pretty())?;
        files.push(name);
        Ok(files)
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapGeneration {
    pub generation: usize,
    pub run: ExperimentRun,
}

/// Generation 0 trains vanilla; generation `k` ranks the data by the loss
/// of the generation `k−1` model of the same seed and trains the configured
/// pacing on that ranking.
pub fn bootstrap_loop(cfg: &ExperimentConfig, generations: usize) -> Result<Vec<BootstrapGeneration>> {
    let (train_ds, test_ds) = cfg.dataset.load()?;
    let mut vanilla = cfg.clone();
    vanilla.condition = Condition::Vanilla;
    let mut out = vec![BootstrapGeneration {
        generation: 0,
        run: run_on(&vanilla, &train_ds, &test_ds, None)?,
    }];
    let mut curriculum = cfg.clone();
    curriculum.condition = Condition::Curriculum;
    curriculum.scoring = ScoringSpec::SelfTaught;
    for generation in 1..=generations {
        let prev = &out.last().expect("generation 0 exists").run;
        if prev.models.len() != cfg.resolved_seeds().len() {
            return Err(Error::config(format!(
                "generation {} lost seeds; bootstrapping needs every seed's model",
                generation - 1
            )));
        }
        let scores = prev
            .models
            .iter()
            .map(|(_, model)| score_by_model_loss(&train_ds, model).map(|s| s.with_provenance("self_taught")))
            .collect::<Result<Vec<_>>>()?;
        let run = run_on(&curriculum, &train_ds, &test_ds, Some(&scores))?;
        out.push(BootstrapGeneration { generation, run });
    }
    Ok(out)
}

/// Writes each generation under `gen{k}_` prefixes.
pub fn write_bootstrap(gens: &[BootstrapGeneration], dir: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for g in gens {
        files.extend(g.run.write_with_prefix(dir, &format!("gen{}_", g.generation))?);
    }
    Ok(files)
}

/// Gradient coherence of the first pacing subset under several rankings,
/// evaluated at the final model of a vanilla run.
#[derive(Debug, Clone, Serialize)]
pub struct GradientStudy {
    pub seed: u64,
    pub subset_size: usize,
    pub report: CoherenceReport,
}

/// Trains vanilla with `seed`, then compares per-example gradients on the
/// easiest balanced prefix of each configured ranking, on the random-score
/// prefix and on the whole training set.
pub fn gradient_study(cfg: &ExperimentConfig, seed: u64, subset_size: Option<usize>) -> Result<GradientStudy> {
    let (train_ds, test_ds) = cfg.dataset.load()?;
    let mut vanilla = cfg.clone();
    vanilla.condition = Condition::Vanilla;
    let (model, _) = run_seed(&vanilla, &train_ds, &test_ds, seed, None)?;
    gradient_study_for(cfg, &model, &train_ds, seed, subset_size)
}

pub fn gradient_study_for(
    cfg: &ExperimentConfig,
    model: &Model,
    train_ds: &Dataset,
    seed: u64,
    subset_size: Option<usize>,
) -> Result<GradientStudy> {
    let n = train_ds.len();
    let size = subset_size.unwrap_or_else(|| default_subset_size(n));
    if size == 0 || size > n {
        return Err(Error::param(format!("gradient subset size must lie in [1, {n}], got {size}")));
    }
    let prefix = |scores: &ScoreTable| -> Result<Vec<usize>> {
        let plan = CurriculumPlan::build(train_ds, scores, &PacingSpec::vanilla(), 1, 1, seed)?;
        Ok(plan.balanced_prefix(size))
    };
    let scores = compute_scores(cfg, train_ds, seed)?;
    let label = scores.provenance().to_string();
    let conditions = vec![
        (label, prefix(&scores)?),
        ("random".to_string(), prefix(&ScoreTable::random(n, seed))?),
        ("all".to_string(), (0..n).collect()),
    ];
    Ok(GradientStudy {
        seed,
        subset_size: size,
        report: coherence_report(model, train_ds, &conditions)?,
    })
}

/// Record of one CLI invocation: the resolved configuration and every file
/// it wrote, relative to the output directory.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
