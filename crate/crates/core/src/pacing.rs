//! Pacing functions: iteration index to the size of the easy-prefix subset
//! that mini-batches are drawn from.
//!
//! All variants are monotone staircases. Fractional sizes are rounded half
//! up and clamped to `[1, N]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacingVariant {
    FixedExp,
    VariedExp,
    SingleStep,
    Vanilla,
}

/// Pacing hyper-parameters. Which fields matter depends on `variant`:
/// fixed uses `starting_percent, increase, step_length`; varied uses
/// `starting_percent, increase, boundaries`; single step uses
/// `starting_percent, step_length`; vanilla uses none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacingSpec {
    pub variant: PacingVariant,
    #[serde(default = "one")]
    pub starting_percent: f64,
    #[serde(default = "two")]
    pub increase: f64,
    #[serde(default)]
    pub step_length: usize,
    /// Cumulative boundary iterations for the varied variant.
    #[serde(default)]
    pub boundaries: Vec<usize>,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl PacingSpec {
    pub fn fixed_exp(starting_percent: f64, increase: f64, step_length: usize) -> Self {
        Self {
            variant: PacingVariant::FixedExp,
            starting_percent,
            increase,
            step_length,
            boundaries: Vec::new(),
        }
    }

    pub fn varied_exp(starting_percent: f64, increase: f64, boundaries: Vec<usize>) -> Self {
        Self {
            variant: PacingVariant::VariedExp,
            starting_percent,
            increase,
            step_length: 0,
            boundaries,
        }
    }

    /// Varied pacing tuned through its first two boundaries only; the rest
    /// repeat the gap between them until `num_steps` boundaries exist.
    pub fn varied_from_first_two(starting_percent: f64, increase: f64, first: usize, second: usize) -> Result<Self> {
        if second <= first {
            return Err(Error::param(format!(
                "varied pacing boundaries must increase: {first} then {second}"
            )));
        }
        let steps = num_steps(starting_percent, increase)?;
        let gap = second - first;
        let boundaries = (0..steps)
            .map(|k| if k == 0 { first } else { second + (k - 1) * gap })
            .collect();
        Ok(Self::varied_exp(starting_percent, increase, boundaries))
    }

    pub fn single_step(starting_percent: f64, step_length: usize) -> Self {
        Self {
            variant: PacingVariant::SingleStep,
            starting_percent,
            increase: 2.0,
            step_length,
            boundaries: Vec::new(),
        }
    }

    pub fn vanilla() -> Self {
        Self {
            variant: PacingVariant::Vanilla,
            starting_percent: 1.0,
            increase: 2.0,
            step_length: 0,
            boundaries: Vec::new(),
        }
    }

    /// Checks the hyper-parameters against a dataset of `n` examples.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::param("pacing over an empty dataset"));
        }
        if self.variant == PacingVariant::Vanilla {
            return Ok(());
        }
        let p = self.starting_percent;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::param(format!("starting_percent must lie in (0,1], got {p}")));
        }
        if round_half_up(p * n as f64) < 1 {
            return Err(Error::param(format!(
                "starting_percent {p} selects no examples out of {n}"
            )));
        }
        match self.variant {
            PacingVariant::FixedExp => {
                check_increase(self.increase)?;
                if self.step_length == 0 {
                    return Err(Error::param("fixed exponential pacing needs step_length >= 1"));
                }
            }
            PacingVariant::VariedExp => {
                check_increase(self.increase)?;
                check_boundaries(&self.boundaries)?;
                let steps = num_steps(p, self.increase)?;
                if self.boundaries.len() != steps {
                    return Err(Error::param(format!(
                        "varied pacing needs {steps} boundaries for starting_percent {p} and increase {}, got {}",
                        self.increase,
                        self.boundaries.len()
                    )));
                }
            }
            PacingVariant::SingleStep | PacingVariant::Vanilla => {}
        }
        Ok(())
    }

    /// `g(i)` for a dataset of `n` examples.
    pub fn subset_size(&self, i: usize, n: usize) -> usize {
        match self.variant {
            PacingVariant::FixedExp => g_fixed_exp(self, n, i),
            PacingVariant::VariedExp => scaled(exp_fraction(self.starting_percent, self.increase, z(&self.boundaries, i)), n),
            PacingVariant::SingleStep => g_single_step(self, n, i),
            PacingVariant::Vanilla => n,
        }
    }

    /// Index of the staircase step containing iteration `i`.
    pub fn step_index(&self, i: usize) -> usize {
        match self.variant {
            PacingVariant::FixedExp => i / self.step_length.max(1),
            PacingVariant::VariedExp => z(&self.boundaries, i),
            PacingVariant::SingleStep => usize::from(i >= self.step_length),
            PacingVariant::Vanilla => 0,
        }
    }

    /// First iteration at which the formula's fraction reaches 1.
    pub fn saturation_iteration(&self) -> usize {
        match self.variant {
            PacingVariant::FixedExp => {
                self.step_length * num_steps(self.starting_percent, self.increase).unwrap_or(0)
            }
            PacingVariant::VariedExp => self.boundaries.last().map_or(0, |b| b + 1),
            PacingVariant::SingleStep => {
                if self.starting_percent >= 1.0 {
                    0
                } else {
                    self.step_length
                }
            }
            PacingVariant::Vanilla => 0,
        }
    }
}

fn check_increase(increase: f64) -> Result<()> {
    if increase.is_finite() && increase > 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("increase must be a finite value > 1, got {increase}")))
    }
}

fn check_boundaries(boundaries: &[usize]) -> Result<()> {
    match boundaries.windows(2).find(|w| w[1] <= w[0]) {
        Some(w) => Err(Error::param(format!(
            "varied pacing boundaries must be strictly increasing: {} then {}",
            w[0], w[1]
        ))),
        None => Ok(()),
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// `min(start * inc^k, 1)`, decided in log space so huge `k` cannot overflow.
fn exp_fraction(start: f64, increase: f64, k: usize) -> f64 {
    if start >= 1.0 || k as f64 * increase.ln() + start.ln() >= 0.0 {
        return 1.0;
    }
    let k = i32::try_from(k).unwrap_or(i32::MAX);
    (start * increase.powi(k)).min(1.0)
}

fn scaled(fraction: f64, n: usize) -> usize {
    round_half_up(fraction * n as f64).clamp(1, n)
}

/// Number of boundaries strictly below `i`.
fn z(boundaries: &[usize], i: usize) -> usize {
    boundaries.iter().filter(|&&b| i > b).count()
}

/// `g(i) = min(start * inc^floor(i / step_length), 1) * N`.
pub fn g_fixed_exp(spec: &PacingSpec, n: usize, i: usize) -> usize {
    let k = i / spec.step_length.max(1);
    scaled(exp_fraction(spec.starting_percent, spec.increase, k), n)
}

/// `g(i) = start^{1[i < step_length]} * N`.
pub fn g_single_step(spec: &PacingSpec, n: usize, i: usize) -> usize {
    if i < spec.step_length {
        scaled(spec.starting_percent.min(1.0), n)
    } else {
        n
    }
}

/// `g(i) = min(start * inc^{z(i)}, 1) * N` with `z(i) = Σ_k 1[i > boundary_k]`.
pub fn g_varied_exp(spec: &PacingSpec, n: usize, i: usize) -> Result<usize> {
    check_boundaries(&spec.boundaries)?;
    Ok(scaled(
        exp_fraction(spec.starting_percent, spec.increase, z(&spec.boundaries, i)),
        n,
    ))
}

/// `ceil(-log_increase(starting_percent))`: the number of exponential steps
/// before the subset covers the whole dataset.
pub fn num_steps(starting_percent: f64, increase: f64) -> Result<usize> {
    if !(starting_percent > 0.0 && starting_percent <= 1.0) {
        return Err(Error::param(format!(
            "starting_percent must lie in (0,1], got {starting_percent}"
        )));
    }
    check_increase(increase)?;
    if starting_percent == 1.0 {
        return Ok(0);
    }
    let mut k = (-starting_percent.ln() / increase.ln()).ceil().max(0.0) as usize;
    // keep the closed form consistent with exp_fraction when the log ratio
    // lands a rounding error away from an integer
    while k > 0 && exp_fraction(starting_percent, increase, k - 1) >= 1.0 {
        k -= 1;
    }
    while exp_fraction(starting_percent, increase, k) < 1.0 {
        k += 1;
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_exponential_values() {
        let spec = PacingSpec::fixed_exp(0.1, 2.0, 10);
        let g: Vec<usize> = [0, 9, 10, 25, 40].iter().map(|&i| g_fixed_exp(&spec, 100, i)).collect();
        assert_eq!(g, vec![10, 10, 20, 40, 100]);
    }

    #[test]
    fn fixed_saturated_start() {
        let spec = PacingSpec::fixed_exp(1.0, 1.5, 7);
        assert!((0..50).all(|i| g_fixed_exp(&spec, 37, i) == 37));
    }

    #[test]
    fn four_percent_of_2500_is_one_batch() {
        let spec = PacingSpec::fixed_exp(0.04, 1.9, 100);
        assert_eq!(g_fixed_exp(&spec, 2500, 0), 100);
    }

    #[test]
    fn single_step_values() {
        let spec = PacingSpec::single_step(0.04, 50);
        assert_eq!(g_single_step(&spec, 2500, 0), 100);
        assert_eq!(g_single_step(&spec, 2500, 49), 100);
        assert_eq!(g_single_step(&spec, 2500, 50), 2500);
        let empty_phase = PacingSpec::single_step(0.04, 0);
        assert!((0..10).all(|i| g_single_step(&empty_phase, 2500, i) == 2500));
        let full = PacingSpec::single_step(1.0, 30);
        assert!((0..60).all(|i| g_single_step(&full, 80, i) == 80));
    }

    #[test]
    fn varied_exponential_values() {
        let spec = PacingSpec::varied_exp(0.1, 2.0, vec![5, 15, 25, 35]);
        let g: Vec<usize> = [5, 6, 16, 36]
            .iter()
            .map(|&i| g_varied_exp(&spec, 100, i).unwrap())
            .collect();
        assert_eq!(g, vec![10, 20, 40, 100]);
    }

    #[test]
    fn varied_rejects_non_increasing_boundaries() {
        let spec = PacingSpec::varied_exp(0.1, 2.0, vec![5, 5, 25]);
        assert!(matches!(g_varied_exp(&spec, 100, 0), Err(Error::Parameter(_))));
        assert!(PacingSpec::varied_from_first_two(0.1, 2.0, 9, 3).is_err());
    }

    #[test]
    fn varied_from_first_two_repeats_second_gap() {
        let spec = PacingSpec::varied_from_first_two(0.04, 1.9, 30, 100).unwrap();
        assert_eq!(spec.boundaries, vec![30, 100, 170, 240, 310, 380]);
        spec.validate(2500).unwrap();
    }

    #[test]
    fn step_counts() {
        assert_eq!(num_steps(0.04, 1.9).unwrap(), 6);
        assert_eq!(num_steps(0.5, 2.0).unwrap(), 1);
        assert_eq!(num_steps(1.0, 3.0).unwrap(), 0);
        assert_eq!(num_steps(0.01, 10.0).unwrap(), 2);
        assert!(num_steps(0.0, 2.0).is_err());
        assert!(num_steps(0.5, 1.0).is_err());
    }

    #[test]
    fn validate_catches_bad_specs() {
        assert!(PacingSpec::fixed_exp(0.001, 2.0, 10).validate(100).is_err());
        assert!(PacingSpec::fixed_exp(0.1, 0.9, 10).validate(100).is_err());
        assert!(PacingSpec::fixed_exp(0.1, 2.0, 0).validate(100).is_err());
        assert!(PacingSpec::varied_exp(0.1, 2.0, vec![5, 15]).validate(100).is_err());
        PacingSpec::varied_exp(0.1, 2.0, vec![5, 15, 25, 35]).validate(100).unwrap();
        PacingSpec::vanilla().validate(3).unwrap();
    }

    #[test]
    fn huge_exponents_saturate_without_overflow() {
        let spec = PacingSpec::fixed_exp(0.01, 3.0, 1);
        assert_eq!(g_fixed_exp(&spec, 1000, usize::MAX / 2), 1000);
    }

    /// Brute-force comparison: boundaries at `kL - 1` reproduce fixed pacing.
    #[test]
    fn equal_gap_varied_matches_fixed_exhaustively() {
        for n in [10usize, 37, 100] {
            for l in 1..6usize {
                for (start, inc) in [(0.1, 2.0), (0.3, 1.5), (0.05, 3.0)] {
                    let fixed = PacingSpec::fixed_exp(start, inc, l);
                    let steps = num_steps(start, inc).unwrap();
                    let varied = PacingSpec::varied_exp(start, inc, (1..=steps).map(|k| k * l - 1).collect());
                    for i in 0..(steps + 2) * l {
                        assert_eq!(
                            g_fixed_exp(&fixed, n, i),
                            g_varied_exp(&varied, n, i).unwrap(),
                            "n={n} l={l} i={i}"
                        );
                    }
                    assert_eq!(g_fixed_exp(&fixed, n, l), g_varied_exp(&varied, n, l).unwrap());
                }
            }
        }
    }

    proptest! {
        #[test]
        fn z_is_non_decreasing(mut bs in proptest::collection::btree_set(0usize..500, 1..8), i in 0usize..600) {
            let bs: Vec<usize> = std::mem::take(&mut bs).into_iter().collect();
            prop_assert!(z(&bs, i) <= z(&bs, i + 1));
        }

        #[test]
        fn all_variants_monotone_and_bounded(
            start in 0.01f64..1.0,
            inc in 1.05f64..4.0,
            step in 1usize..40,
            n in 100usize..3000,
        ) {
            let specs = [
                PacingSpec::fixed_exp(start, inc, step),
                PacingSpec::single_step(start, step),
                PacingSpec::varied_from_first_two(start, inc, step, 2 * step + 3).unwrap(),
                PacingSpec::vanilla(),
            ];
            for spec in &specs {
                let lo = spec.subset_size(0, n);
                let mut prev = lo;
                for i in 0..400 {
                    let g = spec.subset_size(i, n);
                    prop_assert!(g >= prev && g <= n && g >= 1);
                    prev = g;
                }
            }
        }
    }
}
