use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule as a pure function of the iteration index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `lr0 / decrease_factor^floor(t / lr_step_length)`
    Exponential {
        lr0: f64,
        decrease_factor: f64,
        lr_step_length: usize,
    },
    /// Symmetric triangular wave starting at `lr_min`, peaking at `lr_max`
    /// half way through each cycle.
    Cyclical {
        lr_min: f64,
        lr_max: f64,
        cycle_length: usize,
    },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Exponential {
                lr0,
                decrease_factor,
                lr_step_length,
            } => {
                if !(lr0.is_finite() && lr0 > 0.0) {
                    return Err(Error::param(format!("lr0 must be positive, got {lr0}")));
                }
                if !(decrease_factor.is_finite() && decrease_factor > 1.0) {
                    return Err(Error::param(format!(
                        "decrease_factor must be > 1, got {decrease_factor}"
                    )));
                }
                if lr_step_length == 0 {
                    return Err(Error::param("lr_step_length must be at least 1"));
                }
            }
            LrSchedule::Cyclical {
                lr_min,
                lr_max,
                cycle_length,
            } => {
                if !(lr_min.is_finite() && lr_min > 0.0 && lr_max.is_finite() && lr_max >= lr_min) {
                    return Err(Error::param(format!(
                        "cyclical schedule needs 0 < lr_min <= lr_max, got {lr_min}, {lr_max}"
                    )));
                }
                if cycle_length < 2 {
                    return Err(Error::param("cycle_length must be at least 2"));
                }
            }
        }
        Ok(())
    }

    pub fn lr(&self, t: usize) -> f64 {
        match *self {
            LrSchedule::Exponential {
                lr0,
                decrease_factor,
                lr_step_length,
            } => {
                let k = (t / lr_step_length.max(1)) as f64;
                lr0 / decrease_factor.powf(k)
            }
            LrSchedule::Cyclical {
                lr_min,
                lr_max,
                cycle_length,
            } => {
                let phase = (t % cycle_length) as f64 / cycle_length as f64;
                let tri = 1.0 - (2.0 * phase - 1.0).abs();
                lr_min + (lr_max - lr_min) * tri
            }
        }
    }
}
