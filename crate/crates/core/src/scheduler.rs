//! Adaptive meta-cycle interval: `k <- clip(k / growth, k_min, k_max)` after
//! every cycle. `k` stays real-valued; only the firing test rounds it.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    /// Current interval in steps.
    pub k: f64,
    /// Interval growth rate; `k` is divided by it after each cycle.
    pub growth: f64,
    pub k_min: u32,
    pub k_max: u32,
    pub last_fire_t: u64,
}

impl SchedulerState {
    pub fn new(k_init: f64, growth: f64, k_min: u32, k_max: u32) -> Result<Self> {
        let s = SchedulerState {
            k: k_init,
            growth,
            k_min,
            k_max,
            last_fire_t: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.growth > 0.0) || !self.growth.is_finite() {
            return Err(config_err(format!(
                "scheduler growth must be > 0, got {}",
                self.growth
            )));
        }
        if self.k_min > self.k_max {
            return Err(config_err("scheduler k_min exceeds k_max"));
        }
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(config_err("scheduler k_init must be positive"));
        }
        Ok(())
    }

    /// The interval after one update; other fields unchanged.
    pub fn next_interval(&self) -> Result<Self> {
        if !(self.growth > 0.0) {
            return Err(config_err(format!(
                "scheduler growth must be > 0, got {}",
                self.growth
            )));
        }
        let k = (self.k / self.growth).clamp(f64::from(self.k_min), f64::from(self.k_max));
        Ok(SchedulerState { k, ..self.clone() })
    }

    /// The integer firing interval, `round_half_up(k)`.
    pub fn interval(&self) -> u64 {
        round_half_up(self.k)
    }

    /// Whether a meta cycle is due at time `t`.
    pub fn due(&self, t: u64) -> Result<bool> {
        if t < self.last_fire_t {
            return Err(usage_err(format!(
                "scheduler queried at t={t} before last firing at {}",
                self.last_fire_t
            )));
        }
        Ok(t - self.last_fire_t >= self.interval())
    }

    /// Records a firing at `t`, then grows the interval.
    pub fn fire(&mut self, t: u64) -> Result<()> {
        let next = self.next_interval()?;
        *self = SchedulerState {
            last_fire_t: t,
            ..next
        };
        Ok(())
    }
}

pub fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor().max(0.0) as u64
}

/// Firing times over `1..=steps` for a fresh scheduler.
pub fn firing_times(mut s: SchedulerState, steps: u64) -> Result<Vec<u64>> {
    let mut times = Vec::new();
    for t in 1..=steps {
        if s.due(t)? {
            times.push(t);
            s.fire(t)?;
        }
    }
    Ok(times)
}
