//! Curriculum mini-batch sequencing.
//!
//! A [`CurriculumPlan`] sorts the training set by difficulty, keeps the
//! easiest examples of each class in class proportion, and draws every
//! mini-batch uniformly from the prefix selected by the pacing function. The
//! batch at iteration `i` depends only on `(seed, i)`, so batches can be
//! regenerated in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{proportional_quotas, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::pacing::PacingSpec;
use crate::scoring::{score_by_model_loss, ScoreTable};

pub type MiniBatch = Vec<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumPlan {
    scores: ScoreTable,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
    /// Ids ascending by `(score, id)`.
    order: Vec<usize>,
    /// `rank[id]` is the position of `id` in `order`.
    rank: Vec<usize>,
    class_orders: Vec<Vec<usize>>,
    pub batch_size: usize,
    pub iterations: usize,
    pub pacing: PacingSpec,
    pub seed: u64,
}

impl CurriculumPlan {
    /// Builds a plan over `ds`. Fails when the first pacing step holds fewer
    /// examples than one batch.
    pub fn build(
        ds: &Dataset,
        scores: &ScoreTable,
        pacing: &PacingSpec,
        batch_size: usize,
        iterations: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = ds.len();
        if scores.len() != n {
            return Err(Error::DimensionMismatch {
                context: "score table vs dataset",
                expected: n,
                actual: scores.len(),
            });
        }
        if batch_size == 0 || batch_size > n {
            return Err(Error::config(format!(
                "batch_size must lie in [1, {n}], got {batch_size}"
            )));
        }
        if iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        pacing.validate(n).map_err(|e| Error::config(e.to_string()))?;
        let first = pacing.subset_size(0, n);
        if first < batch_size {
            return Err(Error::config(format!(
                "pacing starts with {first} examples, fewer than batch_size {batch_size}; \
                 starting_percent must be at least {} (batch_size / N)",
                batch_size as f64 / n as f64
            )));
        }

        let mut plan = Self {
            scores: scores.clone(),
            labels: ds.labels().collect(),
            class_counts: ds.class_counts().to_vec(),
            order: Vec::new(),
            rank: Vec::new(),
            class_orders: Vec::new(),
            batch_size,
            iterations,
            pacing: pacing.clone(),
            seed,
        };
        plan.sort();
        Ok(plan)
    }

    /// Uniform sampling over the whole dataset.
    pub fn vanilla(ds: &Dataset, batch_size: usize, iterations: usize, seed: u64) -> Result<Self> {
        Self::build(
            ds,
            &ScoreTable::constant(ds.len()),
            &PacingSpec::vanilla(),
            batch_size,
            iterations,
            seed,
        )
    }

    fn sort(&mut self) {
        let scores = self.scores.values();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let mut rank = vec![0; order.len()];
        for (pos, &id) in order.iter().enumerate() {
            rank[id] = pos;
        }
        let mut class_orders = vec![Vec::new(); self.class_counts.len()];
        for &id in &order {
            class_orders[self.labels[id]].push(id);
        }
        self.order = order;
        self.rank = rank;
        self.class_orders = class_orders;
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn scores(&self) -> &ScoreTable {
        &self.scores
    }

    /// All ids, easiest first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn class_order(&self, c: usize) -> &[usize] {
        &self.class_orders[c]
    }

    pub fn class_quotas(&self, size: usize) -> Vec<usize> {
        proportional_quotas(&self.class_counts, size)
    }

    /// Subset size at iteration `i`.
    pub fn subset_size(&self, i: usize) -> usize {
        self.pacing.subset_size(i, self.len())
    }

    /// The `size` easiest examples under class-proportional quotas, ordered
    /// by `(score, id)`.
    pub fn balanced_prefix(&self, size: usize) -> Vec<usize> {
        assert!(size >= 1 && size <= self.len(), "prefix size {size} outside [1, {}]", self.len());
        let quotas = self.class_quotas(size);
        let mut ids: Vec<usize> = quotas
            .iter()
            .enumerate()
            .flat_map(|(c, &q)| self.class_orders[c][..q].iter().copied())
            .collect();
        ids.sort_unstable_by_key(|&id| self.rank[id]);
        ids
    }

    /// Mini-batch for iteration `i`, drawn without replacement from the
    /// balanced prefix of size `g(i)`.
    pub fn minibatch_at(&self, i: usize) -> MiniBatch {
        assert!(i < self.iterations, "iteration {i} beyond plan length {}", self.iterations);
        let mut subset = self.balanced_prefix(self.subset_size(i));
        subset.sort_unstable();
        self.sample_from(&subset, i)
    }

    /// Draws the iteration-`i` batch from `subset` (ids ascending). The RNG
    /// stream is keyed by `(seed, i)`.
    pub(crate) fn sample_from(&self, subset: &[usize], i: usize) -> MiniBatch {
        let mut rng = iteration_rng(self.seed, i);
        rand::seq::index::sample(&mut rng, subset.len(), self.batch_size)
            .into_iter()
            .map(|k| subset[k])
            .collect()
    }

    /// True at iteration 0 and wherever the pacing staircase enters a new step.
    pub fn is_step_boundary(&self, i: usize) -> bool {
        i == 0 || self.pacing.step_index(i) != self.pacing.step_index(i - 1)
    }

    /// Re-ranks the plan by the loss of the current model (self-paced
    /// control). Meant to be called at pacing-step boundaries only.
    pub fn self_paced_rescore(&self, ds: &Dataset, model: &Model) -> Result<Self> {
        let scores = score_by_model_loss(ds, model)?.with_provenance("self_paced");
        self.with_scores(scores)
    }

    /// Same plan over a different difficulty ranking.
    pub fn with_scores(&self, scores: ScoreTable) -> Result<Self> {
        if scores.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "score table vs plan",
                expected: self.len(),
                actual: scores.len(),
            });
        }
        let mut plan = self.clone();
        plan.scores = scores;
        plan.sort();
        Ok(plan)
    }
}

pub(crate) fn iteration_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}
