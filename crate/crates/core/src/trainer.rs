//! Plain SGD over a curriculum plan, with learning curves.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Architecture, Model};
use crate::schedule::LrSchedule;
use crate::sequencer::CurriculumPlan;

pub const DEFAULT_RECORD_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub architecture: Architecture,
    pub schedule: LrSchedule,
    pub record_every: usize,
    /// Seeds parameter initialization. Batch sampling is keyed by the plan's seed.
    pub init_seed: u64,
    /// Re-rank the plan by the current model's loss at every pacing step.
    pub self_paced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    pub subset_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

pub const CURVE_HEADER: &str = "iteration,train_loss,test_acc,subset_size,lr";

impl LearningCurve {
    pub fn iterations(&self) -> impl Iterator<Item = usize> + '_ {
        self.points.iter().map(|p| p.iteration)
    }

    pub fn accuracies(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.test_acc)
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CURVE_HEADER.split(','))?;
        for p in &self.points {
            w.write_record([
                p.iteration.to_string(),
                p.train_loss.to_string(),
                p.test_acc.to_string(),
                p.subset_size.to_string(),
                p.lr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        if rdr.headers()?.iter().collect::<Vec<_>>().join(",") != CURVE_HEADER {
            return Err(Error::load(path, format!("expected header `{CURVE_HEADER}`")));
        }
        let points = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<CurvePoint>, _>>()
            .map_err(|e| Error::load(path, e.to_string()))?;
        Ok(Self { points })
    }
}

/// Fraction of examples whose argmax prediction (lowest class on ties)
/// equals the label.
pub fn evaluate(model: &Model, ds: &Dataset) -> f64 {
    let correct = ds
        .examples()
        .iter()
        .filter(|ex| model.predict(&ex.features) == ex.label)
        .count();
    correct as f64 / ds.len() as f64
}

/// Runs `plan.iterations` SGD steps `θ ← θ − lr(t)·∇L(batch_t)`.
///
/// The curve records the pre-update batch loss and the post-update test
/// accuracy every `record_every` iterations and at the final iteration.
pub fn train(train_ds: &Dataset, test_ds: &Dataset, plan: &CurriculumPlan, opts: &TrainOptions) -> Result<(Model, LearningCurve)> {
    if plan.len() != train_ds.len() {
        return Err(Error::DimensionMismatch {
            context: "plan vs training set",
            expected: train_ds.len(),
            actual: plan.len(),
        });
    }
    if test_ds.dim() != train_ds.dim() {
        return Err(Error::DimensionMismatch {
            context: "test vs training features",
            expected: train_ds.dim(),
            actual: test_ds.dim(),
        });
    }
    if opts.record_every == 0 {
        return Err(Error::config("record_every must be at least 1"));
    }
    opts.schedule.validate()?;

    let num_classes = train_ds.num_classes().max(test_ds.num_classes());
    let mut model = Model::init(opts.architecture, num_classes, train_ds.dim(), opts.init_seed);
    let mut plan = plan.clone();
    let mut curve = LearningCurve::default();
    let mut cached: Option<(usize, Vec<usize>)> = None;
    let last = plan.iterations - 1;

    for t in 0..plan.iterations {
        if opts.self_paced && plan.is_step_boundary(t) && plan.subset_size(t) < plan.len() {
            plan = plan.self_paced_rescore(train_ds, &model)?;
            cached = None;
        }
        let size = plan.subset_size(t);
        if cached.as_ref().map(|(s, _)| *s) != Some(size) {
            let mut subset = plan.balanced_prefix(size);
            subset.sort_unstable();
            cached = Some((size, subset));
        }
        let subset = &cached.as_ref().expect("filled above").1;
        let batch = plan.sample_from(subset, t);

        let (loss, grad) = model
            .loss_and_gradient(batch.iter().map(|&id| train_ds.example(id)))
            .map_err(|e| Error::Diverged {
                iteration: t,
                message: e.to_string(),
            })?;
        let lr = opts.schedule.lr(t);
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                iteration: t,
                message: "parameters became non-finite".into(),
            });
        }
        if t % opts.record_every == 0 || t == last {
            curve.points.push(CurvePoint {
                iteration: t,
                train_loss: loss,
                test_acc: evaluate(&model, test_ds),
                subset_size: size,
                lr,
            });
        }
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_gaussian_mixture;
    use crate::pacing::PacingSpec;
    use crate::scoring::ScoreTable;

    fn opts() -> TrainOptions {
        TrainOptions {
            architecture: Architecture::LinearSoftmax,
            schedule: LrSchedule::Exponential {
                lr0: 0.1,
                decrease_factor: 1.5,
                lr_step_length: 100,
            },
            record_every: 25,
            init_seed: 3,
            self_paced: false,
        }
    }

    #[test]
    fn curve_records_every_k_and_last() {
        let ds = generate_gaussian_mixture(3, 4, 40, 1.0, 1).unwrap();
        let plan = CurriculumPlan::vanilla(&ds, 10, 101, 5).unwrap();
        let (_, curve) = train(&ds, &ds, &plan, &opts()).unwrap();
        let its: Vec<usize> = curve.iterations().collect();
        assert_eq!(its, vec![0, 25, 50, 75, 100]);
        assert!(curve.accuracies().all(|a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let ds = generate_gaussian_mixture(3, 4, 40, 1.0, 1).unwrap();
        let scores = ScoreTable::random(ds.len(), 4);
        let plan = CurriculumPlan::build(&ds, &scores, &PacingSpec::fixed_exp(0.2, 2.0, 20), 10, 120, 5).unwrap();
        let (m1, c1) = train(&ds, &ds, &plan, &opts()).unwrap();
        let (m2, c2) = train(&ds, &ds, &plan, &opts()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(c1.to_csv_string(), c2.to_csv_string());
    }

    #[test]
    fn training_learns_separable_mixture() {
        let ds = generate_gaussian_mixture(3, 4, 60, 0.3, 2).unwrap();
        let plan = CurriculumPlan::vanilla(&ds, 20, 300, 1).unwrap();
        let (model, _) = train(&ds, &ds, &plan, &opts()).unwrap();
        assert!(evaluate(&model, &ds) > 0.95);
    }

    #[test]
    fn divergence_reports_iteration() {
        let ds = generate_gaussian_mixture(2, 2, 20, 1.0, 1).unwrap();
        let plan = CurriculumPlan::vanilla(&ds, 5, 50, 1).unwrap();
        let mut o = opts();
        o.schedule = LrSchedule::Exponential {
            lr0: 1e308,
            decrease_factor: 2.0,
            lr_step_length: 1000,
        };
        match train(&ds, &ds, &plan, &o) {
            Err(Error::Diverged { iteration, .. }) => assert!(iteration < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_uniform_and_permutation() {
        let ds = generate_gaussian_mixture(4, 3, 10, 1.0, 1).unwrap();
        let uniform = Model::zeros(Architecture::LinearSoftmax, 4, 3);
        assert_eq!(evaluate(&uniform, &ds), 0.25);
        let model = Model::init(Architecture::LinearSoftmax, 4, 3, 8);
        let reversed = ds
            .examples()
            .iter()
            .rev()
            .enumerate()
            .map(|(id, ex)| crate::data::Example { id, ..ex.clone() })
            .collect();
        let shuffled = Dataset::new(reversed, 4).unwrap();
        assert_eq!(evaluate(&model, &ds), evaluate(&model, &shuffled));
    }

    #[test]
    fn curve_csv_round_trip() {
        let curve = LearningCurve {
            points: vec![CurvePoint {
                iteration: 0,
                train_loss: 1.0 / 3.0,
                test_acc: 0.25,
                subset_size: 100,
                lr: 0.1,
            }],
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        curve.write_csv(f.path()).unwrap();
        assert_eq!(LearningCurve::read_csv(f.path()).unwrap(), curve);
        assert!(curve.to_csv_string().starts_with(CURVE_HEADER));
    }
}
