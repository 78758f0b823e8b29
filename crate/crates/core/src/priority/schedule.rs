use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the smoothing factor `alpha(T)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaSchedule {
    /// `1 - cos(pi/2 * T / T_max)`: rises from exactly 0 to exactly 1.
    #[default]
    Scaled,
    /// `1 - cos(T / T_max)`: tops out at `1 - cos(1) ~= 0.4597`.
    Literal,
}

/// Position of the run on its global-step axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleState {
    step: u64,
    max_step: u64,
}

impl ScheduleState {
    pub fn new(step: u64, max_step: u64) -> Result<Self> {
        if max_step == 0 {
            return Err(Error::domain("max_step must be positive"));
        }
        if step > max_step {
            return Err(Error::domain(format!("step {step} exceeds max_step {max_step}")));
        }
        Ok(Self { step, max_step })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn max_step(&self) -> u64 {
        self.max_step
    }

    pub fn progress(&self) -> f64 {
        self.step as f64 / self.max_step as f64
    }
}

/// Smoothing factor applied to the confidence term of the priority.
///
/// Both shapes are monotone non-decreasing in `T` and start at exactly 0.
pub fn alpha_schedule(state: &ScheduleState, shape: AlphaSchedule) -> f64 {
    if state.step == 0 {
        return 0.0;
    }
    match shape {
        AlphaSchedule::Scaled => {
            // cos(pi/2) is 6.1e-17 in f64, which would leave us one ulp short.
            if state.step == state.max_step {
                return 1.0;
            }
            (1.0 - (FRAC_PI_2 * state.progress()).cos()).clamp(0.0, 1.0)
        }
        AlphaSchedule::Literal => 1.0 - state.progress().cos(),
    }
}
