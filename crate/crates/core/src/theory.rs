//! Finite-instance checks of the utility-landscape results for curriculum
//! priors.
//!
//! With `U_θ(x) = exp(-L_θ(x))`, the plain utility is the mean of `U_θ` and
//! the prior utility under `p` is `Σ U_θ(x_i) p_i`.
//!
//! **All covariances and variances here are sums, not averages:**
//! `Cov(u, v) = Σ_i (u_i − ū)(v_i − v̄)`. That is the form in which
//! `U_p(θ) = U(θ) + Cov(U_θ, p)` holds exactly at finite N.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sequencer::CurriculumPlan;

/// Absolute tolerance for identities and inequalities.
pub const TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    hypotheses: Vec<String>,
    /// `losses[h][i]`: loss of hypothesis `h` on example `i`.
    losses: Vec<Vec<f64>>,
}

impl LossTable {
    pub fn new(hypotheses: Vec<String>, losses: Vec<Vec<f64>>) -> Result<Self> {
        if losses.is_empty() || hypotheses.len() != losses.len() {
            return Err(Error::param("loss table needs one label per hypothesis and at least one hypothesis"));
        }
        let n = losses[0].len();
        if n == 0 {
            return Err(Error::param("loss table needs at least one example"));
        }
        for (h, row) in losses.iter().enumerate() {
            if row.len() != n {
                return Err(Error::param(format!("hypothesis {h} has {} losses, expected {n}", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::param(format!("hypothesis {h} has invalid loss {v}")));
            }
        }
        Ok(Self { hypotheses, losses })
    }

    /// Unnamed hypotheses `h0, h1, ...`.
    pub fn from_losses(losses: Vec<Vec<f64>>) -> Result<Self> {
        let names = (0..losses.len()).map(|h| format!("h{h}")).collect();
        Self::new(names, losses)
    }

    /// Table whose utilities are the given values in `(0, 1]`.
    pub fn from_utilities(utilities: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(u) = utilities.iter().flatten().find(|u| !(**u > 0.0 && **u <= 1.0)) {
            return Err(Error::param(format!("utility {u} outside (0, 1]")));
        }
        Self::from_losses(
            utilities
                .into_iter()
                .map(|row| row.into_iter().map(|u| (-u.ln()).max(0.0)).collect())
                .collect(),
        )
    }

    pub fn num_hypotheses(&self) -> usize {
        self.losses.len()
    }

    pub fn num_examples(&self) -> usize {
        self.losses[0].len()
    }

    pub fn hypotheses(&self) -> &[String] {
        &self.hypotheses
    }

    pub fn losses(&self, h: usize) -> &[f64] {
        &self.losses[h]
    }

    /// `U_θ(x_i) = exp(-L_θ(x_i))`.
    pub fn utilities(&self, h: usize) -> Vec<f64> {
        self.losses[h].iter().map(|l| (-l).exp()).collect()
    }

    /// Reads `hypothesis,l0,...,l{N-1}`: one row per hypothesis.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "hypothesis" {
            return Err(Error::load(path, "header must be `hypothesis,l0,...`"));
        }
        let mut names = Vec::new();
        let mut losses = Vec::new();
        for (row_idx, rec) in rdr.records().enumerate() {
            let line = row_idx + 2;
            let rec = rec.map_err(|e| Error::load(path, format!("row {line}: {e}")))?;
            names.push(rec[0].to_string());
            losses.push(
                rec.iter()
                    .skip(1)
                    .map(|s| s.parse::<f64>().map_err(|_| Error::load(path, format!("row {line}: bad loss `{s}`"))))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        Self::new(names, losses).map_err(|e| Error::load(path, e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["hypothesis".to_string()];
        header.extend((0..self.num_examples()).map(|i| format!("l{i}")));
        w.write_record(&header)?;
        for (name, row) in self.hypotheses.iter().zip(&self.losses) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sampling prior over examples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prior(Vec<f64>);

impl Prior {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::param("prior over zero examples"));
        }
        if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::param(format!("prior mass {v} is not a non-negative number")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > TOLERANCE {
            return Err(Error::param(format!("prior sums to {total}, not 1")));
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, j: usize) -> Self {
        let mut p = vec![0.0; n];
        p[j] = 1.0;
        Self(p)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Utility vector `U_θ` and its mean `U(θ)`.
pub fn utility(table: &LossTable, h: usize) -> (Vec<f64>, f64) {
    let u = table.utilities(h);
    let m = mean(&u);
    (u, m)
}

/// `U_p(θ) = Σ_i U_θ(x_i) p_i`.
pub fn prior_utility(table: &LossTable, h: usize, p: &Prior) -> f64 {
    table.utilities(h).iter().zip(p.values()).map(|(u, q)| u * q).sum()
}

/// Sum-form covariance `Σ_i (u_i − ū)(v_i − v̄)`.
pub fn sum_covariance(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "covariance of vectors with different lengths");
    let (mu, mv) = (mean(u), mean(v));
    u.iter().zip(v).map(|(a, b)| (a - mu) * (b - mv)).sum()
}

pub fn sum_variance(u: &[f64]) -> f64 {
    sum_covariance(u, u)
}

/// Indices whose value lies within [`TOLERANCE`] of the maximum.
fn argmax_set(values: &[f64]) -> Vec<usize> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len()).filter(|&h| values[h] >= max - TOLERANCE).collect()
}

/// Per-hypothesis quantities shared by the checks.
struct Landscape {
    utility: Vec<f64>,
    prior_utility: Vec<f64>,
    covariance: Vec<f64>,
}

impl Landscape {
    fn new(table: &LossTable, p: &Prior) -> Result<Self> {
        if p.len() != table.num_examples() {
            return Err(Error::DimensionMismatch {
                context: "prior vs loss table examples",
                expected: table.num_examples(),
                actual: p.len(),
            });
        }
        let mut out = Self {
            utility: Vec::new(),
            prior_utility: Vec::new(),
            covariance: Vec::new(),
        };
        for h in 0..table.num_hypotheses() {
            let (u, m) = utility(table, h);
            out.utility.push(m);
            out.prior_utility.push(u.iter().zip(p.values()).map(|(a, b)| a * b).sum());
            out.covariance.push(sum_covariance(&u, p.values()));
        }
        Ok(out)
    }
}

/// `max_θ |U_p(θ) − U(θ) − Cov(U_θ, p)|`.
pub fn check_prior_identity(table: &LossTable, p: &Prior) -> Result<f64> {
    let l = Landscape::new(table, p)?;
    Ok((0..table.num_hypotheses())
        .map(|h| (l.prior_utility[h] - l.utility[h] - l.covariance[h]).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alignment {
    pub holds: bool,
    pub utility_argmax: Vec<usize>,
    pub covariance_argmax: Vec<usize>,
}

/// Whether the maximizers of `U` and of `Cov(U_θ, p)` coincide as sets.
pub fn alignment_holds(table: &LossTable, p: &Prior) -> Result<Alignment> {
    let l = Landscape::new(table, p)?;
    let utility_argmax = argmax_set(&l.utility);
    let covariance_argmax = argmax_set(&l.covariance);
    Ok(Alignment {
        holds: utility_argmax == covariance_argmax,
        utility_argmax,
        covariance_argmax,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignedPriorReport {
    pub optimum: usize,
    /// argmax of `U` equals argmax of `U_p` as sets.
    pub argmax_preserved: bool,
    /// Hypotheses where `U_p(θ*) − U_p(θ) < U(θ*) − U(θ) − tol`.
    pub gap_violations: Vec<usize>,
    /// Hypotheses where a step of the chain
    /// `U_p(θ*) − U_p(θ) = U_p(θ*) − U(θ) − Cov(U_θ,p) ≥ U_p(θ*) − U(θ) − Cov(U_θ*,p) = U(θ*) − U(θ)`
    /// fails.
    pub chain_violations: Vec<usize>,
    /// `min_θ [(U_p(θ*) − U_p(θ)) − (U(θ*) − U(θ))]`.
    pub min_slack: f64,
}

impl AlignedPriorReport {
    pub fn passed(&self) -> bool {
        self.argmax_preserved && self.gap_violations.is_empty() && self.chain_violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AlignedPriorOutcome {
    PreconditionUnmet { assumption: Alignment },
    Checked(AlignedPriorReport),
}

/// Argmax preservation and gap amplification under a prior satisfying the
/// covariance-alignment assumption.
pub fn check_aligned_prior(table: &LossTable, p: &Prior) -> Result<AlignedPriorOutcome> {
    let assumption = alignment_holds(table, p)?;
    if !assumption.holds {
        return Ok(AlignedPriorOutcome::PreconditionUnmet { assumption });
    }
    let l = Landscape::new(table, p)?;
    let opt = assumption.utility_argmax[0];
    let argmax_preserved = argmax_set(&l.prior_utility) == assumption.utility_argmax;
    let mut gap_violations = Vec::new();
    let mut chain_violations = Vec::new();
    let mut min_slack = f64::INFINITY;
    for h in 0..table.num_hypotheses() {
        let gap_p = l.prior_utility[opt] - l.prior_utility[h];
        let gap = l.utility[opt] - l.utility[h];
        min_slack = min_slack.min(gap_p - gap);
        if gap_p < gap - TOLERANCE {
            gap_violations.push(h);
        }
        let step1 = l.prior_utility[opt] - l.utility[h] - l.covariance[h];
        let step2 = l.prior_utility[opt] - l.utility[h] - l.covariance[opt];
        if (gap_p - step1).abs() > TOLERANCE || step1 < step2 - TOLERANCE || (step2 - gap).abs() > TOLERANCE {
            chain_violations.push(h);
        }
    }
    Ok(AlignedPriorOutcome::Checked(AlignedPriorReport {
        optimum: opt,
        argmax_preserved,
        gap_violations,
        chain_violations,
        min_slack,
    }))
}

/// Lowest-index maximizer of `U(θ)`.
pub fn optimal_hypothesis(table: &LossTable) -> usize {
    let utilities: Vec<f64> = (0..table.num_hypotheses()).map(|h| utility(table, h).1).collect();
    let mut best = 0;
    for (h, &u) in utilities.iter().enumerate().skip(1) {
        if u > utilities[best] {
            best = h;
        }
    }
    best
}

/// Ideal curriculum for hypothesis `opt`: `p_i = U_opt(x_i) / C` with
/// `C = Σ_i U_opt(x_i)`. Returns `(p, C)`.
pub fn ideal_prior(table: &LossTable, opt: usize) -> (Prior, f64) {
    let u = table.utilities(opt);
    let c: f64 = u.iter().sum();
    (Prior(u.into_iter().map(|v| v / c).collect()), c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdealPriorReport {
    pub optimum: usize,
    pub normalizer: f64,
    /// `|U_p(θ*) − U(θ*) − Var(U_θ*)/C|`.
    pub ideal_identity_residual: f64,
    /// `max_θ |Cov(U_θ, p) − Cov(U_θ, U_θ*)/C|`.
    pub ideal_covariance_residual: f64,
    /// Hypotheses with `Cov(U_θ, U_θ*) ≤ Var(U_θ*)`.
    pub condition_holds: Vec<usize>,
    pub gap_violations: Vec<usize>,
    /// Hypotheses where `U_p(θ) > U(θ*) + sqrt(Var(U_θ) Var(U_θ*))/C + tol`.
    pub cauchy_schwarz_violations: Vec<usize>,
}

impl IdealPriorReport {
    pub fn passed(&self) -> bool {
        self.ideal_identity_residual <= TOLERANCE
            && self.ideal_covariance_residual <= TOLERANCE
            && self.gap_violations.is_empty()
            && self.cauchy_schwarz_violations.is_empty()
    }
}

/// Gap amplification under the ideal curriculum, with the optimum identity
/// and the Cauchy–Schwarz bound.
pub fn check_ideal_prior(table: &LossTable) -> IdealPriorReport {
    let opt = optimal_hypothesis(table);
    let (p, c) = ideal_prior(table, opt);
    let u_opt = table.utilities(opt);
    let var_opt = sum_variance(&u_opt);
    let l = Landscape::new(table, &p).expect("ideal prior matches table");

    let ideal_identity_residual = (l.prior_utility[opt] - l.utility[opt] - var_opt / c).abs();
    let mut ideal_covariance_residual: f64 = 0.0;
    let mut condition_holds = Vec::new();
    let mut gap_violations = Vec::new();
    let mut cauchy_schwarz_violations = Vec::new();
    for h in 0..table.num_hypotheses() {
        let u = table.utilities(h);
        let cov_opt = sum_covariance(&u, &u_opt);
        ideal_covariance_residual = ideal_covariance_residual.max((l.covariance[h] - cov_opt / c).abs());
        if cov_opt <= var_opt {
            condition_holds.push(h);
            let gap_p = l.prior_utility[opt] - l.prior_utility[h];
            let gap = l.utility[opt] - l.utility[h];
            if gap_p < gap - TOLERANCE {
                gap_violations.push(h);
            }
        }
        let bound = l.utility[opt] + (sum_variance(&u) * var_opt).sqrt() / c;
        if l.prior_utility[h] > bound + TOLERANCE {
            cauchy_schwarz_violations.push(h);
        }
    }
    IdealPriorReport {
        optimum: opt,
        normalizer: c,
        ideal_identity_residual,
        ideal_covariance_residual,
        condition_holds,
        gap_violations,
        cauchy_schwarz_violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantVarianceReport {
    pub optimum: usize,
    pub variance_spread: f64,
    /// The optimum maximizes both `U` and `Cov(U_θ, p)`.
    pub aligned_pointwise: bool,
    /// The maximizer sets of `U` and `Cov(U_θ, p)` coincide.
    pub aligned_sets: bool,
    /// The optimum also maximizes `U_p`.
    pub argmax_preserved: bool,
    pub gap_violations: Vec<usize>,
}

impl ConstantVarianceReport {
    pub fn passed(&self) -> bool {
        self.aligned_pointwise && self.argmax_preserved && self.gap_violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ConstantVarianceOutcome {
    PreconditionUnmet { variance_spread: f64 },
    Checked(ConstantVarianceReport),
}

/// When `Var(U_θ)` is constant across hypotheses (spread ≤ `tau`), the ideal
/// prior satisfies the alignment assumption and its consequences follow.
pub fn check_constant_variance(table: &LossTable, tau: f64) -> ConstantVarianceOutcome {
    let variances: Vec<f64> = (0..table.num_hypotheses()).map(|h| sum_variance(&table.utilities(h))).collect();
    let hi = variances.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = variances.iter().cloned().fold(f64::INFINITY, f64::min);
    let variance_spread = hi - lo;
    if variance_spread > tau {
        return ConstantVarianceOutcome::PreconditionUnmet { variance_spread };
    }
    let opt = optimal_hypothesis(table);
    let (p, _) = ideal_prior(table, opt);
    let l = Landscape::new(table, &p).expect("ideal prior matches table");
    let u_set = argmax_set(&l.utility);
    let cov_set = argmax_set(&l.covariance);
    let up_set = argmax_set(&l.prior_utility);
    let gap_violations = (0..table.num_hypotheses())
        .filter(|&h| {
            let gap_p = l.prior_utility[opt] - l.prior_utility[h];
            let gap = l.utility[opt] - l.utility[h];
            gap_p < gap - TOLERANCE
        })
        .collect();
    ConstantVarianceOutcome::Checked(ConstantVarianceReport {
        optimum: opt,
        variance_spread,
        aligned_pointwise: u_set.contains(&opt) && cov_set.contains(&opt),
        aligned_sets: u_set == cov_set,
        argmax_preserved: up_set.contains(&opt),
        gap_violations,
    })
}

/// Prior putting mass `1/g(i)` on each example of the iteration-`i` balanced
/// prefix and zero elsewhere.
pub fn curriculum_to_prior(plan: &CurriculumPlan, iteration: usize) -> Prior {
    let size = plan.subset_size(iteration);
    let mut p = vec![0.0; plan.len()];
    for id in plan.balanced_prefix(size) {
        p[id] = 1.0 / size as f64;
    }
    Prior(p)
}

/// Random table with `N ≤ 20` examples, `2 ≤ |Θ| ≤ 50` hypotheses and
/// losses uniform on `[0, 5)`, plus a random prior (flat Dirichlet).
pub fn random_instance(rng: &mut ChaCha8Rng) -> (LossTable, Prior) {
    let n = rng.random_range(1..=20);
    let hyps = rng.random_range(2..=50);
    let losses = (0..hyps)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..5.0)).collect())
        .collect();
    let weights: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = weights.iter().sum();
    let p = Prior(weights.into_iter().map(|w| w / total).collect());
    (LossTable::from_losses(losses).expect("valid random losses"), p)
}

/// Family whose hypotheses permute one utility vector and add a distinct
/// constant shift each: `Var(U_θ)` is the same for all hypotheses while
/// `U(θ)` differs. With `shift = false` the family is a pure permutation
/// (every `U(θ)` equal).
///
/// The permutations are distinct, so only the optimum attains the maximal
/// covariance with itself. Fails when `hyps` exceeds `n!`.
pub fn constant_variance_family(rng: &mut ChaCha8Rng, n: usize, hyps: usize, shift: bool) -> Result<LossTable> {
    let available = (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k)).unwrap_or(usize::MAX);
    if n == 0 || hyps == 0 || hyps > available {
        return Err(Error::param(format!("cannot draw {hyps} distinct permutations of {n} examples")));
    }
    let base: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.6)).collect();
    let mut shifts: Vec<f64> = (0..hyps).map(|h| 0.35 * h as f64 / hyps as f64).collect();
    shifts.shuffle(rng);
    let mut seen = std::collections::HashSet::new();
    let mut utilities = Vec::with_capacity(hyps);
    while utilities.len() < hyps {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        if !seen.insert(order.clone()) {
            continue;
        }
        let c = if shift { shifts[utilities.len()] } else { 0.0 };
        utilities.push(order.into_iter().map(|i| base[i] + c).collect());
    }
    LossTable::from_utilities(utilities)
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub seed: u64,
    pub examples: usize,
    pub hypotheses: usize,
    pub identity_residual: f64,
    /// Random prior: `None` when the alignment assumption does not hold.
    pub aligned_random_prior: Option<bool>,
    /// Ideal prior: `None` when the alignment assumption does not hold.
    pub aligned_ideal_prior: Option<bool>,
    pub ideal_passed: bool,
    pub ideal_condition_count: usize,
    pub ideal_identity_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyRecord {
    pub index: usize,
    pub seed: u64,
    pub passed: bool,
    pub aligned_sets: bool,
    pub aligned_prior_passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub seed: u64,
    pub instances: usize,
    pub families: usize,
    pub tolerance: f64,
    pub identity_max_residual: f64,
    pub identity_violations: usize,
    pub aligned_applicable: usize,
    pub aligned_violations: usize,
    pub ideal_max_identity_residual: f64,
    pub ideal_checked_hypotheses: usize,
    pub ideal_violations: usize,
    pub constant_variance_violations: usize,
    pub total_violations: usize,
    pub instance_records: Vec<InstanceRecord>,
    pub family_records: Vec<FamilyRecord>,
}

fn derived_seed(seed: u64, stream: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.random()
}

fn check_instance(index: usize, seed: u64) -> InstanceRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (table, p) = random_instance(&mut rng);
    let identity_residual = check_prior_identity(&table, &p).expect("matching sizes");
    let aligned = |prior: &Prior| match check_aligned_prior(&table, prior).expect("matching sizes") {
        AlignedPriorOutcome::PreconditionUnmet { .. } => None,
        AlignedPriorOutcome::Checked(r) => Some(r.passed()),
    };
    let (ideal, _) = ideal_prior(&table, optimal_hypothesis(&table));
    let p3 = check_ideal_prior(&table);
    InstanceRecord {
        index,
        seed,
        examples: table.num_examples(),
        hypotheses: table.num_hypotheses(),
        identity_residual,
        aligned_random_prior: aligned(&p),
        aligned_ideal_prior: aligned(&ideal),
        ideal_passed: p3.passed(),
        ideal_condition_count: p3.condition_holds.len(),
        ideal_identity_residual: p3.ideal_identity_residual,
    }
}

fn check_family(index: usize, seed: u64) -> FamilyRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(5..=20);
    let hyps = rng.random_range(2..=50);
    let table = constant_variance_family(&mut rng, n, hyps, true).expect("5! exceeds 50");
    let (constant_ok, sets) = match check_constant_variance(&table, TOLERANCE) {
        ConstantVarianceOutcome::PreconditionUnmet { .. } => (false, false),
        ConstantVarianceOutcome::Checked(r) => (r.passed(), r.aligned_sets),
    };
    let (ideal, _) = ideal_prior(&table, optimal_hypothesis(&table));
    let aligned_prior_passed = matches!(check_aligned_prior(&table, &ideal), Ok(AlignedPriorOutcome::Checked(r)) if r.passed());
    FamilyRecord {
        index,
        seed,
        passed: constant_ok && sets && aligned_prior_passed,
        aligned_sets: sets,
        aligned_prior_passed,
    }
}

/// Randomized verification of every result over `instances` random tables
/// and `families` constant-variance families, reproducible from `seed`.
pub fn verify_theory(instances: usize, families: usize, seed: u64) -> TheoryReport {
    let instance_records: Vec<InstanceRecord> = (0..instances)
        .into_par_iter()
        .map(|k| check_instance(k, derived_seed(seed, 0, k)))
        .collect();
    let family_records: Vec<FamilyRecord> = (0..families)
        .into_par_iter()
        .map(|k| check_family(k, derived_seed(seed, 1, k)))
        .collect();

    let identity_max_residual = instance_records.iter().map(|r| r.identity_residual).fold(0.0, f64::max);
    let identity_violations = instance_records.iter().filter(|r| r.identity_residual > TOLERANCE).count();
    let aligned_outcomes = instance_records
        .iter()
        .flat_map(|r| [r.aligned_random_prior, r.aligned_ideal_prior])
        .flatten();
    let (aligned_applicable, aligned_violations) =
        aligned_outcomes.fold((0, 0), |(a, v), passed| (a + 1, v + usize::from(!passed)));
    let ideal_violations = instance_records.iter().filter(|r| !r.ideal_passed).count();
    let constant_variance_violations = family_records.iter().filter(|r| !r.passed).count();
    TheoryReport {
        seed,
        instances,
        families,
        tolerance: TOLERANCE,
        identity_max_residual,
        identity_violations,
        aligned_applicable,
        aligned_violations,
        ideal_max_identity_residual: instance_records.iter().map(|r| r.ideal_identity_residual).fold(0.0, f64::max),
        ideal_checked_hypotheses: instance_records.iter().map(|r| r.ideal_condition_count).sum(),
        ideal_violations,
        constant_variance_violations,
        total_violations: identity_violations + aligned_violations + ideal_violations + constant_variance_violations,
        instance_records,
        family_records,
    }
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    // Frozen from an independent 30-digit evaluation of the utility sums
    // for losses θ1 = [0, 2], θ2 = [1, 1].
    const P_IDEAL: [f64; 2] = [0.880797077977882444, 0.119202922022117556];
    const C_IDEAL: f64 = 1.135335283236612692;
    const UP_THETA1: f64 = 0.896929439192377580;
    const UP_THETA2: f64 = 0.367879441171442322;
    const U_THETA1: f64 = 0.567667641618306346;
    const COV_THETA1_P: f64 = 0.329261797574071234;
    const VAR_THETA1: f64 = 0.373822536207754398;
    const GAP_WITH_PRIOR: f64 = 0.529049998020935258;
    const GAP_WITHOUT: f64 = 0.199788200446864024;

    fn two_by_two() -> LossTable {
        LossTable::from_losses(vec![vec![0.0, 2.0], vec![1.0, 1.0]]).unwrap()
    }

    #[test]
    fn utility_values() {
        let zero = LossTable::from_losses(vec![vec![0.0; 3], vec![1.0; 3]]).unwrap();
        let (u, m) = utility(&zero, 0);
        assert_eq!(u, vec![1.0; 3]);
        assert_eq!(m, 1.0);
        let (u, _) = utility(&two_by_two(), 0);
        assert!((u[1] - 0.13534).abs() < 1e-5);
        let perm = LossTable::from_losses(vec![vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(utility(&perm, 0).1, utility(&two_by_two(), 0).1);
    }

    #[test]
    fn ideal_prior_on_two_by_two() {
        let t = two_by_two();
        let (p, c) = ideal_prior(&t, 0);
        assert!((p.values()[0] - P_IDEAL[0]).abs() < 1e-15);
        assert!((p.values()[1] - P_IDEAL[1]).abs() < 1e-15);
        assert!((c - C_IDEAL).abs() < 1e-15);
        assert!((prior_utility(&t, 0, &p) - UP_THETA1).abs() < 1e-15);
        assert!((prior_utility(&t, 1, &p) - UP_THETA2).abs() < 1e-15);
        let (u, m) = utility(&t, 0);
        assert!((m - U_THETA1).abs() < 1e-15);
        let cov = sum_covariance(&u, p.values());
        assert!((cov - COV_THETA1_P).abs() < 1e-15);
        assert!((m + cov - UP_THETA1).abs() < 1e-15);
        assert!((sum_variance(&u) - VAR_THETA1).abs() < 1e-15);
    }

    #[test]
    fn prior_utility_limits() {
        let t = LossTable::from_losses(vec![vec![0.3, 1.2, 4.0], vec![2.0, 0.1, 0.0]]).unwrap();
        for h in 0..2 {
            assert!((prior_utility(&t, h, &Prior::uniform(3)) - utility(&t, h).1).abs() < 1e-15);
            assert_eq!(prior_utility(&t, h, &Prior::point_mass(3, 1)), (-t.losses(h)[1]).exp());
        }
    }

    #[test]
    fn covariance_degenerate_cases() {
        assert_eq!(sum_covariance(&[0.4; 5], &[0.1, 0.2, 0.3, 0.2, 0.2]), 0.0);
        assert!(sum_covariance(&[0.1, 0.9, 0.4], Prior::uniform(3).values()).abs() < 1e-16);
    }

    #[test]
    fn prior_identity_holds() {
        let t = two_by_two();
        let (p, _) = ideal_prior(&t, 0);
        assert!(check_prior_identity(&t, &p).unwrap() <= TOLERANCE);
        let single = LossTable::from_losses(vec![vec![0.7], vec![3.0]]).unwrap();
        assert_eq!(check_prior_identity(&single, &Prior::uniform(1)).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (t, p) = random_instance(&mut rng);
            assert!(check_prior_identity(&t, &p).unwrap() <= TOLERANCE);
        }
    }

    #[test]
    fn alignment_cases() {
        let t = two_by_two();
        let (p, _) = ideal_prior(&t, 0);
        let a = alignment_holds(&t, &p).unwrap();
        assert!(a.holds);
        assert_eq!(a.utility_argmax, vec![0]);

        let u = alignment_holds(&t, &Prior::uniform(2)).unwrap();
        assert_eq!(u.covariance_argmax, vec![0, 1]);
        assert!(!u.holds);
        let flat = LossTable::from_losses(vec![vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert!(alignment_holds(&flat, &Prior::uniform(2)).unwrap().holds);

        let single = LossTable::from_losses(vec![vec![0.5, 1.0]]).unwrap();
        assert!(alignment_holds(&single, &Prior::uniform(2)).unwrap().holds);
    }

    #[test]
    fn aligned_prior_on_two_by_two() {
        let t = two_by_two();
        let (p, _) = ideal_prior(&t, 0);
        let AlignedPriorOutcome::Checked(r) = check_aligned_prior(&t, &p).unwrap() else {
            panic!("assumption should hold");
        };
        assert!(r.passed());
        let gap_p = prior_utility(&t, 0, &p) - prior_utility(&t, 1, &p);
        let gap = utility(&t, 0).1 - utility(&t, 1).1;
        assert!((gap_p - GAP_WITH_PRIOR).abs() < 1e-15);
        assert!((gap - GAP_WITHOUT).abs() < 1e-15);
        assert!((gap_p - 0.52905).abs() < 1e-5 && (gap - 0.19980).abs() < 5e-5);
    }

    #[test]
    fn aligned_prior_equality_for_uniform_prior_on_flat_table() {
        let flat = LossTable::from_losses(vec![vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let AlignedPriorOutcome::Checked(r) = check_aligned_prior(&flat, &Prior::uniform(2)).unwrap() else {
            panic!("assumption should hold");
        };
        assert!(r.passed());
        assert!(r.min_slack.abs() < 1e-15);
    }

    #[test]
    fn aligned_prior_reports_unmet_precondition() {
        let t = two_by_two();
        assert!(matches!(
            check_aligned_prior(&t, &Prior::uniform(2)).unwrap(),
            AlignedPriorOutcome::PreconditionUnmet { .. }
        ));
    }

    #[test]
    fn ideal_prior_amplifies_gaps_on_two_by_two() {
        let r = check_ideal_prior(&two_by_two());
        assert_eq!(r.optimum, 0);
        assert!(r.passed());
        // θ2 has constant utility, so its covariance with the optimum is 0
        assert!(r.condition_holds.contains(&1));
        assert!((r.normalizer - C_IDEAL).abs() < 1e-15);
    }

    #[test]
    fn ideal_prior_duplicated_hypotheses_are_equalities() {
        let t = LossTable::from_losses(vec![vec![0.2, 1.5, 0.7]; 4]).unwrap();
        let r = check_ideal_prior(&t);
        assert!(r.passed());
        assert_eq!(r.condition_holds.len(), 4);
    }

    #[test]
    fn ideal_prior_normalizes() {
        let t = LossTable::from_losses(vec![vec![0.9; 4], vec![0.0, 1.0, 2.0, 3.0]]).unwrap();
        let (p, _) = ideal_prior(&t, 0);
        assert!(p.values().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (t, _) = random_instance(&mut rng);
            let (p, _) = ideal_prior(&t, optimal_hypothesis(&t));
            assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(Prior::new(p.values().to_vec()).is_ok());
        }
    }

    #[test]
    fn constant_variance_pure_permutation_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = constant_variance_family(&mut rng, 6, 10, false).unwrap();
        let ConstantVarianceOutcome::Checked(r) = check_constant_variance(&t, TOLERANCE) else {
            panic!("permutations preserve variance");
        };
        assert!(r.passed());
        // every U(θ) ties, so the maximizer sets differ even though the
        // optimum attains both maxima
        assert!(!r.aligned_sets);
    }

    #[test]
    fn constant_variance_shifted_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = constant_variance_family(&mut rng, 8, 12, true).unwrap();
        let ConstantVarianceOutcome::Checked(r) = check_constant_variance(&t, TOLERANCE) else {
            panic!("shifts preserve variance");
        };
        assert!(r.passed() && r.aligned_sets);
        assert!(constant_variance_family(&mut rng, 3, 7, true).is_err());
    }

    #[test]
    fn constant_variance_unequal_variances_unmet() {
        let t = two_by_two();
        assert!(matches!(check_constant_variance(&t, 0.0), ConstantVarianceOutcome::PreconditionUnmet { .. }));
    }

    #[test]
    fn prior_validation() {
        assert!(Prior::new(vec![0.5, 0.6]).is_err());
        assert!(Prior::new(vec![-0.5, 1.5]).is_err());
        assert!(Prior::new(vec![0.25; 4]).is_ok());
    }

    #[test]
    fn loss_table_csv_round_trip() {
        let t = two_by_two();
        let f = tempfile::NamedTempFile::new().unwrap();
        t.write_csv(f.path()).unwrap();
        assert_eq!(LossTable::read_csv(f.path()).unwrap(), t);
        assert!(LossTable::from_losses(vec![vec![-1.0]]).is_err());
    }

    #[test]
    fn small_suite_is_clean_and_reproducible() {
        let a = verify_theory(50, 20, 9);
        assert_eq!(a.total_violations, 0);
        let b = verify_theory(50, 20, 9);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
