//! Monte-Carlo checks on the randomized pieces: random rankings, batch
//! draws and the scoring functions.

use std::collections::HashMap;

use curriculum::data::{generate_gaussian_mixture, Dataset, EmbeddingTable, Example};
use curriculum::scoring::{oracle_bayes_score, score_by_model_loss, self_taught_score, transfer_score, SelfTaughtConfig};
use curriculum::stats::{mean, spearman};
use curriculum::{train, Architecture, CurriculumPlan, LrSchedule, PacingSpec, ScoreTable, TrainOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn two_class_dataset(n: usize) -> Dataset {
    let examples = (0..n)
        .map(|id| Example {
            id,
            features: vec![id as f64],
            label: id % 2,
        })
        .collect();
    Dataset::new(examples, 2).unwrap()
}

#[test]
fn random_rankings_are_uniform_over_permutations() {
    let seeds = 10_000;
    let mut freq: HashMap<Vec<usize>, usize> = HashMap::new();
    for seed in 0..seeds {
        *freq.entry(ScoreTable::random(3, seed).ascending_ids()).or_default() += 1;
    }
    assert_eq!(freq.len(), 6);
    for (perm, count) in freq {
        let p = count as f64 / seeds as f64;
        assert!((p - 1.0 / 6.0).abs() < 0.02, "{perm:?}: {p}");
    }
}

#[test]
fn batch_membership_matches_sampling_without_replacement() {
    // subset of 2b examples: each member lands in the batch with probability 1/2
    let ds = two_class_dataset(20);
    let scores = ScoreTable::random(20, 0);
    let samples = 20_000;

    let mut hits = [0usize; 20];
    for seed in 0..samples as u64 {
        let plan = CurriculumPlan::build(&ds, &scores, &PacingSpec::vanilla(), 10, 1, seed).unwrap();
        for id in plan.minibatch_at(0) {
            hits[id] += 1;
        }
    }
    for (id, &h) in hits.iter().enumerate() {
        let p = h as f64 / samples as f64;
        assert!((p - 0.5).abs() < 0.02, "example {id}: {p}");
    }

    // same check across iterations of one plan, on a first step of size 2b
    let plan = CurriculumPlan::build(&ds, &scores, &PacingSpec::single_step(0.5, samples), 5, samples, 9).unwrap();
    assert_eq!(plan.subset_size(0), 10);
    let prefix = plan.balanced_prefix(10);
    let mut hits = [0usize; 20];
    for i in 0..samples {
        for id in plan.minibatch_at(i) {
            hits[id] += 1;
        }
    }
    for id in prefix {
        let p = hits[id] as f64 / samples as f64;
        assert!((p - 0.5).abs() < 0.02, "example {id}: {p}");
    }
}

#[test]
fn transfer_scores_on_noise_sit_near_chance_loss() {
    let ds = generate_gaussian_mixture(5, 4, 100, 3.0, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let rows = (0..ds.len())
        .map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let emb = EmbeddingTable::new(rows).unwrap();
    let scores = transfer_score(&ds, &emb, 5, 1).unwrap();
    let chance = (5f64).ln();
    let m = mean(scores.values());
    assert!((m - chance).abs() < 0.2 * chance, "mean {m} vs ln 5 = {chance}");
}

#[test]
fn transfer_scores_track_the_oracle_on_informative_features() {
    let ds = generate_gaussian_mixture(4, 6, 80, 2.0, 3).unwrap();
    let rows = ds.examples().iter().map(|e| e.features.clone()).collect();
    let emb = EmbeddingTable::new(rows).unwrap();
    let transfer = transfer_score(&ds, &emb, 5, 2).unwrap();
    let oracle = oracle_bayes_score(&ds).unwrap();
    assert!(spearman(transfer.values(), oracle.values()) > 0.5);
}

fn teacher() -> TrainOptions {
    TrainOptions {
        architecture: Architecture::LinearSoftmax,
        schedule: LrSchedule::Exponential {
            lr0: 0.01,
            decrease_factor: 1.5,
            lr_step_length: 600,
        },
        record_every: 100,
        init_seed: 0,
        self_paced: false,
    }
}

#[test]
fn trained_model_loss_correlates_with_oracle_difficulty() {
    let ds = generate_gaussian_mixture(5, 16, 200, 3.0, 4).unwrap();
    let plan = CurriculumPlan::vanilla(&ds, 100, 1500, 4).unwrap();
    let (model, _) = train(&ds, &ds, &plan, &teacher()).unwrap();
    let learned = score_by_model_loss(&ds, &model).unwrap();
    let oracle = oracle_bayes_score(&ds).unwrap();
    assert!(spearman(learned.values(), oracle.values()) > 0.0);
}

#[test]
fn self_taught_easiest_decile_is_easier_than_average() {
    let ds = generate_gaussian_mixture(5, 16, 200, 3.0, 5).unwrap();
    let cfg = SelfTaughtConfig {
        train: teacher(),
        batch_size: 100,
        iterations: 1500,
    };
    let scores = self_taught_score(&ds, &cfg, 5).unwrap();
    let oracle = oracle_bayes_score(&ds).unwrap();
    let easiest = &scores.ascending_ids()[..ds.len() / 10];
    let decile: Vec<f64> = easiest.iter().map(|&id| oracle.get(id)).collect();
    assert!(mean(&decile) < mean(oracle.values()));
}
