//! Two-stage grid search on a validation split: pacing first, then the
//! learning rate at the winning pacing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::pacing::{PacingSpec, PacingVariant};
use crate::schedule::LrSchedule;

use super::config::{Condition, ExperimentConfig, Selection};
use super::experiment::run_on;

/// Candidate values per hyper-parameter. An absent list keeps the base
/// configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub starting_percent: Option<Vec<f64>>,
    pub increase: Option<Vec<f64>>,
    pub step_length: Option<Vec<usize>>,
    pub lr0: Option<Vec<f64>>,
    pub decrease_factor: Option<Vec<f64>>,
    pub lr_step_length: Option<Vec<usize>>,
    pub lr_min: Option<Vec<f64>>,
    pub lr_max: Option<Vec<f64>>,
    pub cycle_length: Option<Vec<usize>>,
}

/// Allowed relative deviation of the vanilla cell count from the
/// curriculum cell count.
pub const CELL_COUNT_TOLERANCE: f64 = 0.1;

impl GridSpec {
    /// Desk-scale default grid for fixed exponential pacing with an
    /// exponential learning-rate schedule.
    pub fn default_grid() -> Self {
        Self {
            starting_percent: Some(vec![0.04, 0.08, 0.15]),
            increase: Some(vec![1.1, 1.5, 2.0, 3.0]),
            step_length: Some(vec![100, 200, 300]),
            lr0: Some(vec![0.01, 0.003, 0.001]),
            decrease_factor: Some(vec![1.5, 2.0]),
            lr_step_length: Some(vec![600]),
            ..Self::default()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let grid: GridSpec = super::config::parse_checked(text)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("starting_percent", self.starting_percent.as_ref().map(Vec::len)),
            ("increase", self.increase.as_ref().map(Vec::len)),
            ("step_length", self.step_length.as_ref().map(Vec::len)),
            ("lr0", self.lr0.as_ref().map(Vec::len)),
            ("decrease_factor", self.decrease_factor.as_ref().map(Vec::len)),
            ("lr_step_length", self.lr_step_length.as_ref().map(Vec::len)),
            ("lr_min", self.lr_min.as_ref().map(Vec::len)),
            ("lr_max", self.lr_max.as_ref().map(Vec::len)),
            ("cycle_length", self.cycle_length.as_ref().map(Vec::len)),
        ];
        let empty: Vec<&str> = lists.iter().filter(|(_, n)| *n == Some(0)).map(|(k, _)| *k).collect();
        if !empty.is_empty() {
            return Err(Error::param(format!("empty grid for {}", empty.join(", "))));
        }
        Ok(())
    }

    /// Pacing candidates around `base`, varying only the parameters the
    /// variant uses.
    pub fn pacing_cells(&self, base: &PacingSpec) -> Vec<PacingSpec> {
        let sp = self.starting_percent.clone().unwrap_or_else(|| vec![base.starting_percent]);
        let inc = self.increase.clone().unwrap_or_else(|| vec![base.increase]);
        let sl = self.step_length.clone().unwrap_or_else(|| vec![base.step_length]);
        let (sp, inc, sl) = match base.variant {
            PacingVariant::FixedExp => (sp, inc, sl),
            PacingVariant::VariedExp => (sp, inc, vec![base.step_length]),
            PacingVariant::SingleStep => (sp, vec![base.increase], sl),
            PacingVariant::Vanilla => return vec![base.clone()],
        };
        let mut cells = Vec::new();
        for &s in &sp {
            for &i in &inc {
                for &l in &sl {
                    cells.push(PacingSpec {
                        starting_percent: s,
                        increase: i,
                        step_length: l,
                        ..base.clone()
                    });
                }
            }
        }
        cells
    }

    /// Number of pacing cells a fixed exponential curriculum sweeps.
    fn curriculum_pacing_count(&self, base: &PacingSpec) -> usize {
        match base.variant {
            PacingVariant::Vanilla => self.pacing_cells(&PacingSpec::fixed_exp(
                base.starting_percent,
                base.increase,
                base.step_length,
            )),
            _ => self.pacing_cells(base),
        }
        .len()
    }

    fn lr_lists(&self, base: &LrSchedule) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
        match *base {
            LrSchedule::Exponential {
                lr0,
                decrease_factor,
                lr_step_length,
            } => (
                self.lr0.clone().unwrap_or_else(|| vec![lr0]),
                self.decrease_factor.clone().unwrap_or_else(|| vec![decrease_factor]),
                self.lr_step_length.clone().unwrap_or_else(|| vec![lr_step_length]),
            ),
            LrSchedule::Cyclical {
                lr_min,
                lr_max,
                cycle_length,
            } => (
                self.lr_max.clone().unwrap_or_else(|| vec![lr_max]),
                self.lr_min.clone().unwrap_or_else(|| vec![lr_min]),
                self.cycle_length.clone().unwrap_or_else(|| vec![cycle_length]),
            ),
        }
    }

    fn lr_cells_from(base: &LrSchedule, first: &[f64], second: &[f64], third: &[usize]) -> Vec<LrSchedule> {
        let mut cells = Vec::new();
        for &a in first {
            for &b in second {
                for &c in third {
                    cells.push(match base {
                        LrSchedule::Exponential { .. } => LrSchedule::Exponential {
                            lr0: a,
                            decrease_factor: b,
                            lr_step_length: c,
                        },
                        LrSchedule::Cyclical { .. } => LrSchedule::Cyclical {
                            lr_min: b,
                            lr_max: a,
                            cycle_length: c,
                        },
                    });
                }
            }
        }
        cells
    }

    /// Learning-rate candidates around `base`.
    pub fn lr_cells(&self, base: &LrSchedule) -> Vec<LrSchedule> {
        let (a, b, c) = self.lr_lists(base);
        Self::lr_cells_from(base, &a, &b, &c)
    }

    /// Single-stage learning-rate grid for the vanilla condition. The
    /// initial (or peak) learning-rate list is refined geometrically so the
    /// total cell count matches the two-stage curriculum count.
    pub fn refined_lr_cells(&self, base_pacing: &PacingSpec, base_lr: &LrSchedule) -> Result<(Vec<LrSchedule>, usize)> {
        let target = self.curriculum_pacing_count(base_pacing) + self.lr_cells(base_lr).len();
        let (first, second, third) = self.lr_lists(base_lr);
        let others = second.len() * third.len();
        let n = ((target as f64 / others as f64).round() as usize).max(1);
        let refined = if n == first.len() {
            first
        } else {
            geometric_refinement(&first, n)
        };
        let cells = Self::lr_cells_from(base_lr, &refined, &second, &third);
        let deviation = (cells.len() as f64 - target as f64).abs() / target as f64;
        if deviation > CELL_COUNT_TOLERANCE {
            return Err(Error::config(format!(
                "vanilla grid has {} cells, more than {:.0}% away from the curriculum's {target}",
                cells.len(),
                100.0 * CELL_COUNT_TOLERANCE
            )));
        }
        Ok((cells, target))
    }
}

/// `n` geometrically spaced values spanning `values` (or `[v/2, 2v]` for a
/// single value).
fn geometric_refinement(values: &[f64], n: usize) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo == hi { (lo / 2.0, hi * 2.0) } else { (lo, hi) };
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    (0..n)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub stage: usize,
    pub pacing: PacingSpec,
    pub lr: LrSchedule,
    pub score: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchResult {
    pub criterion: Selection,
    pub best: ExperimentConfig,
    pub best_score: f64,
    pub stage1_cells: usize,
    pub stage2_cells: usize,
    /// Curriculum cell count the vanilla grid was matched to.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_cell_target: Option<usize>,
    pub audit: Vec<AuditEntry>,
}

fn evaluate_cells(
    base: &ExperimentConfig,
    cells: Vec<(PacingSpec, LrSchedule)>,
    stage: usize,
    fit: &Dataset,
    validation: &Dataset,
) -> Vec<AuditEntry> {
    cells
        .into_par_iter()
        .map(|(pacing, lr)| {
            let mut cfg = base.clone();
            cfg.pacing = pacing.clone();
            cfg.lr = lr.clone();
            match run_on(&cfg, fit, validation, None) {
                Ok(run) => AuditEntry {
                    stage,
                    pacing,
                    lr,
                    score: Some(run.summary.selection_score()),
                    final_accuracy: Some(run.summary.final_accuracy.mean),
                    auc: Some(run.summary.auc.mean),
                    error: None,
                },
                Err(e) => AuditEntry {
                    stage,
                    pacing,
                    lr,
                    score: None,
                    final_accuracy: None,
                    auc: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// First entry with the highest score.
fn winner(entries: &[AuditEntry]) -> Result<&AuditEntry> {
    let mut best: Option<&AuditEntry> = None;
    for e in entries {
        if let Some(s) = e.score {
            if best.is_none_or(|b| s > b.score.expect("scored")) {
                best = Some(e);
            }
        }
    }
    best.ok_or_else(|| {
        let first = entries.first().and_then(|e| e.error.clone()).unwrap_or_default();
        Error::config(format!("every grid cell failed; first error: {first}"))
    })
}

/// Selects hyper-parameters on a stratified validation split of the
/// training set. Curriculum conditions sweep pacing at the base learning
/// rate, then the learning rate at the winning pacing; vanilla sweeps a
/// single refined learning-rate grid of matched size.
pub fn two_stage_grid_search(base: &ExperimentConfig, grid: &GridSpec) -> Result<GridSearchResult> {
    base.validate()?;
    grid.validate()?;
    let (train_ds, _) = base.dataset.load()?;
    let (fit, validation) = stratified_split(&train_ds, 1.0 - base.validation_fraction, base.seed)?;

    if base.condition == Condition::Vanilla {
        let (lrs, target) = grid.refined_lr_cells(&base.pacing, &base.lr)?;
        let cells = lrs.into_iter().map(|lr| (base.pacing.clone(), lr)).collect();
        let audit = evaluate_cells(base, cells, 1, &fit, &validation);
        let best_entry = winner(&audit)?.clone();
        let mut best = base.clone();
        best.lr = best_entry.lr;
        return Ok(GridSearchResult {
            criterion: base.selection,
            best,
            best_score: best_entry.score.expect("winner is scored"),
            stage1_cells: audit.len(),
            stage2_cells: 0,
            matched_cell_target: Some(target),
            audit,
        });
    }

    let stage1: Vec<_> = grid
        .pacing_cells(&base.pacing)
        .into_iter()
        .map(|p| (p, base.lr.clone()))
        .collect();
    let mut audit = evaluate_cells(base, stage1, 1, &fit, &validation);
    let stage1_cells = audit.len();
    let pacing = winner(&audit)?.pacing.clone();

    let stage2: Vec<_> = grid.lr_cells(&base.lr).into_iter().map(|lr| (pacing.clone(), lr)).collect();
    let stage2_entries = evaluate_cells(base, stage2, 2, &fit, &validation);
    let stage2_cells = stage2_entries.len();
    let best_entry = winner(&stage2_entries)?.clone();
    audit.extend(stage2_entries);

    let mut best = base.clone();
    best.pacing = best_entry.pacing;
    best.lr = best_entry.lr;
    Ok(GridSearchResult {
        criterion: base.selection,
        best,
        best_score: best_entry.score.expect("winner is scored"),
        stage1_cells,
        stage2_cells,
        matched_cell_target: None,
        audit,
    })
}
