//! Three Gaussian meal pulses per day and scenario sampling.
//!
//! Time is measured in days; a pulse of day `i` peaks at `i + center`.
//! Hourly profiles are point evaluations at `h / 24`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from, Rng};
use crate::sim::Range;

pub const HOURS_PER_DAY: usize = 24;

/// Nominal breakfast, lunch and dinner times in days.
pub const NOMINAL_CENTERS: [f64; 3] = [8.0 / 24.0, 12.0 / 24.0, 18.0 / 24.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MealPulse {
    pub amplitude: f64,
    /// Peak time within the day, in days.
    pub center: f64,
    /// Standard deviation, in days.
    pub spread: f64,
}

impl MealPulse {
    pub fn value_at(&self, day: usize, t: f64) -> f64 {
        let z = (t - (day as f64 + self.center)) / self.spread;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MealConfig {
    /// Breakfast, lunch, dinner amplitude ranges.
    pub amplitude: [Range; 3],
    pub centers: [f64; 3],
    /// Half-width of the uniform timing shift, in days.
    pub max_shift: f64,
    pub spread: Range,
}

impl Default for MealConfig {
    fn default() -> Self {
        MealConfig {
            amplitude: [Range::new(0.6, 1.2), Range::new(0.6, 1.5), Range::new(0.5, 1.8)],
            centers: NOMINAL_CENTERS,
            max_shift: 1.5 / 24.0,
            spread: Range::new(0.2 / 24.0, 1.0 / 24.0),
        }
    }
}

impl MealConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |r: &Range| r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi;
        if !self.amplitude.iter().all(|r| ok_range(r) && r.lo > 0.0) {
            return Err(Error::Config("meal amplitude ranges must be positive and ordered".into()));
        }
        if !(ok_range(&self.spread) && self.spread.lo > 0.0) {
            return Err(Error::Config("meal spread range must be positive and ordered".into()));
        }
        if !(self.max_shift >= 0.0) {
            return Err(Error::Config("meal max_shift must be >= 0".into()));
        }
        Ok(())
    }

    /// Expected daily integral of the intake profile, in meal-units x days.
    pub fn expected_daily_intake(&self) -> f64 {
        let two_pi_sqrt = (2.0 * std::f64::consts::PI).sqrt();
        self.amplitude.iter().map(|a| a.mid()).sum::<f64>() * self.spread.mid() * two_pi_sqrt
    }
}

pub fn sample_day_pulses(config: &MealConfig, rng: &mut Rng) -> [MealPulse; 3] {
    let shift = Range::new(-config.max_shift, config.max_shift);
    std::array::from_fn(|k| MealPulse {
        amplitude: config.amplitude[k].sample(rng),
        center: config.centers[k] + shift.sample(rng),
        spread: config.spread.sample(rng),
    })
}

/// All pulses of a multi-day intake profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealSchedule {
    pub days: Vec<[MealPulse; 3]>,
}

impl MealSchedule {
    pub fn sample(n_days: usize, config: &MealConfig, rng: &mut Rng) -> Self {
        MealSchedule {
            days: (0..n_days).map(|_| sample_day_pulses(config, rng)).collect(),
        }
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    /// Sum over every day and meal; pulses spill across day boundaries.
    pub fn evaluate(&self, t: f64) -> f64 {
        self.days
            .iter()
            .enumerate()
            .flat_map(|(i, day)| day.iter().map(move |p| p.value_at(i, t)))
            .sum()
    }

    pub fn hourly_profile(&self) -> Vec<f64> {
        (0..self.n_days() * HOURS_PER_DAY)
            .map(|h| self.evaluate(h as f64 / HOURS_PER_DAY as f64))
            .collect()
    }
}

/// `count` independent hourly profiles of `horizon_days` days. Scenario `j`
/// draws from its own stream keyed by `(seed, j)`.
pub fn sample_scenarios(
    count: usize,
    horizon_days: usize,
    config: &MealConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Config("scenario count J must be >= 1".into()));
    }
    Ok((0..count)
        .map(|j| {
            let mut rng = scenario_rng(seed, j);
            MealSchedule::sample(horizon_days, config, &mut rng).hourly_profile()
        })
        .collect())
}

pub fn scenario_rng(seed: u64, index: usize) -> Rng {
    rng_from(seed, "meal-scenario", index as u64)
}
