use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight of the self-consistency term by epoch (1-based): zero through
/// `zero_until`, then a linear ramp reaching 1 at `ramp_end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupSchedule {
    pub zero_until: usize,
    pub ramp_end: usize,
}

impl WarmupSchedule {
    pub fn new(zero_until: usize, ramp_end: usize) -> Result<Self> {
        let s = WarmupSchedule {
            zero_until,
            ramp_end,
        };
        s.validate()?;
        Ok(s)
    }

    /// Full weight from the first epoch.
    pub fn immediate() -> Self {
        WarmupSchedule {
            zero_until: 0,
            ramp_end: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ramp_end < self.zero_until {
            return Err(Error::Config(format!(
                "ramp ends at epoch {} before it starts at {}",
                self.ramp_end, self.zero_until
            )));
        }
        Ok(())
    }

    pub fn lambda(&self, epoch: usize) -> f64 {
        if epoch <= self.zero_until {
            0.0
        } else if epoch >= self.ramp_end {
            1.0
        } else {
            (epoch - self.zero_until) as f64 / (self.ramp_end - self.zero_until) as f64
        }
    }
}
