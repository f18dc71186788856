//! Chance-constrained dose scheduling by exhaustive search over daily
//! dose-adjustment sequences.
//!
//! Each candidate plan is forecast under `J` sampled meal scenarios. A
//! forecast step violates when `mu + beta * sigma > theta`; the plan's score
//! is its dose usage plus `lambda` times its worst scenario violation.

mod quantile;

pub use quantile::normal_quantile;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnn::{ForecastDistribution, ModelWeights, WindowInputs};
use crate::error::{Error, Result};
use crate::meals::{sample_scenarios, MealConfig, HOURS_PER_DAY};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Symptom threshold in score units.
    pub theta: f64,
    /// Confidence level of the per-step chance constraint.
    pub p: f64,
    pub lambda: f64,
    /// Cost per unit of daily dose.
    pub dose_cost: f64,
    /// Planning horizon in days (one action per day).
    pub horizon_days: usize,
    /// Number of meal scenarios `J`.
    pub scenarios: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub mc_passes: usize,
    /// Largest admissible `3^horizon_days`.
    pub max_candidates: usize,
    /// Hour of day at which the daily dose is given as one bolus.
    pub bolus_hour: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            theta: 5.0,
            p: 0.95,
            lambda: 10.0,
            dose_cost: 1.0,
            horizon_days: 3,
            scenarios: 5,
            u_min: 0.05,
            u_max: 1.0,
            mc_passes: 30,
            max_candidates: 6561,
            bolus_hour: 7,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mpc: {m}")));
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad("p must lie in (0, 1)");
        }
        if !(self.lambda >= 0.0 && self.dose_cost >= 0.0) {
            return bad("lambda and dose_cost must be >= 0");
        }
        if !(0.0 <= self.u_min && self.u_min <= self.u_max && self.u_max <= 1.0) {
            return bad("dose bounds must satisfy 0 <= u_min <= u_max <= 1");
        }
        if self.horizon_days == 0 || self.scenarios == 0 || self.mc_passes == 0 {
            return bad("horizon_days, scenarios and mc_passes must be >= 1");
        }
        if self.bolus_hour >= HOURS_PER_DAY {
            return bad("bolus_hour must be < 24");
        }
        if !self.theta.is_finite() {
            return bad("theta must be finite");
        }
        Ok(())
    }

    pub fn beta(&self) -> Result<f64> {
        normal_quantile(self.p)
    }

    pub fn horizon_hours(&self) -> usize {
        self.horizon_days * HOURS_PER_DAY
    }
}

/// Day-over-day dose adjustment. The derived order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Decrease,
    Maintain,
    Increase,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Decrease, Action::Maintain, Action::Increase];

    pub fn factor(self) -> f64 {
        match self {
            Action::Decrease => 0.8,
            Action::Maintain => 1.0,
            Action::Increase => 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosePlan {
    pub actions: Vec<Action>,
    /// Absolute daily doses after clamping.
    pub doses: Vec<f64>,
    pub usage: f64,
    pub score: f64,
    pub worst_violation: f64,
    /// Mean forecast sigma over scenarios, steps and channels (logged only).
    pub mean_sigma: f64,
    /// Smallest fraction, over steps and channels, of scenarios whose mean
    /// forecast is at or below `theta`. The scenario-averaged chance
    /// constraint holds when this is at least `p`. Reported, not optimized.
    pub scenario_satisfaction: f64,
}

impl DosePlan {
    fn from_actions(actions: Vec<Action>, current_dose: f64, cfg: &MpcConfig) -> Self {
        let mut u = current_dose;
        let doses = actions
            .iter()
            .map(|a| {
                u = (u * a.factor()).clamp(cfg.u_min, cfg.u_max);
                u
            })
            .collect();
        DosePlan {
            actions,
            doses,
            usage: 0.0,
            score: 0.0,
            worst_violation: 0.0,
            mean_sigma: 0.0,
            scenario_satisfaction: 0.0,
        }
    }
}

/// All `3^horizon_days` plans in lexicographic action order.
pub fn expand_candidates(current_dose: f64, cfg: &MpcConfig) -> Result<Vec<DosePlan>> {
    let t = cfg.horizon_days;
    if t == 0 {
        return Err(Error::Config("mpc: horizon_days must be >= 1".into()));
    }
    let k = u32::try_from(t)
        .ok()
        .and_then(|t| 3usize.checked_pow(t))
        .filter(|&k| k <= cfg.max_candidates)
        .ok_or_else(|| {
            Error::Config(format!(
                "mpc: 3^{t} candidates exceed the cap of {}; use a smaller horizon_days",
                cfg.max_candidates
            ))
        })?;
    Ok((0..k)
        .map(|mut idx| {
            let mut actions = vec![Action::Maintain; t];
            for slot in actions.iter_mut().rev() {
                *slot = Action::ALL[idx % 3];
                idx /= 3;
            }
            DosePlan::from_actions(actions, current_dose, cfg)
        })
        .collect())
}

/// Expands daily doses onto the hourly grid as one bolus per day.
pub fn hourly_doses(daily: &[f64], bolus_hour: usize) -> Vec<f64> {
    let mut out = vec![0.0; daily.len() * HOURS_PER_DAY];
    for (d, &u) in daily.iter().enumerate() {
        out[d * HOURS_PER_DAY + bolus_hour] = u;
    }
    out
}

/// Summed rectified exceedance of the quantile-tightened bound.
pub fn violation(mu: &[[f64; 2]], sigma: &[[f64; 2]], theta: f64, beta: f64) -> f64 {
    debug_assert_eq!(mu.len(), sigma.len());
    mu.iter()
        .zip(sigma)
        .flat_map(|(m, s)| (0..2).map(move |i| (m[i] + beta * s[i] - theta).max(0.0)))
        .sum()
}

/// Fills usage, worst violation and score of `plan` from its forecasts.
pub fn score_plan(mut plan: DosePlan, forecasts: &[ForecastDistribution], cfg: &MpcConfig, beta: f64) -> DosePlan {
    plan.usage = cfg.dose_cost * plan.doses.iter().sum::<f64>();
    plan.worst_violation = forecasts
        .iter()
        .map(|f| violation(&f.mu, &f.sigma, cfg.theta, beta))
        .fold(0.0, f64::max);
    plan.score = plan.usage + cfg.lambda * plan.worst_violation;
    let n: usize = forecasts.iter().map(|f| f.sigma.len() * 2).sum();
    plan.mean_sigma = if n == 0 {
        0.0
    } else {
        forecasts.iter().flat_map(|f| f.sigma.iter().flatten()).sum::<f64>() / n as f64
    };
    plan.scenario_satisfaction = scenario_satisfaction(forecasts, cfg.theta);
    plan
}

/// Minimum over steps and channels of the fraction of scenarios with
/// `mu <= theta`; 1 for an empty forecast set.
pub fn scenario_satisfaction(forecasts: &[ForecastDistribution], theta: f64) -> f64 {
    let Some(steps) = forecasts.iter().map(ForecastDistribution::len).min() else {
        return 1.0;
    };
    let j = forecasts.len() as f64;
    (0..steps)
        .flat_map(|t| (0..2).map(move |i| (t, i)))
        .map(|(t, i)| forecasts.iter().filter(|f| f.mu[t][i] <= theta).count() as f64 / j)
        .fold(1.0, f64::min)
}

/// Score, then usage, then action sequence.
pub fn plan_order(a: &DosePlan, b: &DosePlan) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then(a.usage.total_cmp(&b.usage))
        .then_with(|| a.actions.cmp(&b.actions))
}

/// Observed hourly data up to the decision time, in raw units.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub symptoms: &'a [[f64; 2]],
    pub meals: &'a [f64],
    pub doses: &'a [f64],
}

impl History<'_> {
    pub fn len(&self) -> usize {
        self.meals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meals.is_empty()
    }

    fn check(&self, needed: usize) -> Result<()> {
        let n = self.meals.len();
        if self.doses.len() != n || self.symptoms.len() != n {
            return Err(Error::shape(
                "history columns",
                n,
                format!("doses {} / symptoms {}", self.doses.len(), self.symptoms.len()),
            ));
        }
        if n < needed {
            return Err(Error::shape("history length", format!(">= {needed}"), n));
        }
        Ok(())
    }
}

/// Hourly future meals and doses for one forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct FutureInputs {
    pub meals: Vec<f64>,
    pub doses: Vec<f64>,
}

/// A probabilistic symptom predictor usable by [`solve`].
pub trait SymptomForecaster: Sync {
    fn history_len(&self) -> usize;
    fn horizon(&self) -> usize;
    /// One forecast per entry of `futures`, all conditioned on `history`.
    /// Randomness for entry `i` must depend only on `(seed, i)`.
    fn forecast_many(
        &self,
        history: &History<'_>,
        futures: &[FutureInputs],
        passes: usize,
        seed: u64,
    ) -> Result<Vec<ForecastDistribution>>;
}

/// Source of future meal scenarios.
pub trait ScenarioSampler: Sync {
    fn sample(&self, count: usize, horizon_days: usize, seed: u64) -> Result<Vec<Vec<f64>>>;
}

/// i.i.d. scenarios from the population meal distribution.
#[derive(Debug, Clone, Default)]
pub struct MealScenarioSampler {
    pub config: MealConfig,
}

impl ScenarioSampler for MealScenarioSampler {
    fn sample(&self, count: usize, horizon_days: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        sample_scenarios(count, horizon_days, &self.config, seed)
    }
}

/// MC-dropout forecaster over trained weights. The encoder runs once per
/// history; only the decoder is re-run per future.
#[derive(Debug, Clone)]
pub struct BnnForecaster {
    pub weights: ModelWeights,
}

impl SymptomForecaster for BnnForecaster {
    fn history_len(&self) -> usize {
        self.weights.arch.t_hist
    }

    fn horizon(&self) -> usize {
        self.weights.arch.t_fut
    }

    fn forecast_many(
        &self,
        history: &History<'_>,
        futures: &[FutureInputs],
        passes: usize,
        seed: u64,
    ) -> Result<Vec<ForecastDistribution>> {
        let w = &self.weights;
        let (th, tf) = (w.arch.t_hist, w.arch.t_fut);
        history.check(th)?;
        if passes == 0 {
            return Err(Error::Config("MC pass count must be >= 1".into()));
        }
        let start = history.len() - th;
        let norm = &w.norm;
        let hist_symptoms: Vec<[f64; 2]> = history.symptoms[start..].iter().map(|s| s.map(|v| norm.symptom(v))).collect();
        let mut combined: Vec<[f64; 2]> = (start..history.len())
            .map(|h| norm.inputs(history.meals[h], history.doses[h]))
            .collect();
        combined.resize(th + tf, [0.0; 2]);
        let (h0, c0) = w.encode(&WindowInputs { hist_symptoms: &hist_symptoms, combined_inputs: &combined })?;
        futures
            .par_iter()
            .enumerate()
            .map(|(i, f)| {
                if f.meals.len() != tf || f.doses.len() != tf {
                    return Err(Error::shape("future inputs", tf, format!("{} / {}", f.meals.len(), f.doses.len())));
                }
                let x: Vec<[f64; 2]> = f.meals.iter().zip(&f.doses).map(|(&m, &u)| norm.inputs(m, u)).collect();
                let hidden = w.decode_hidden(&h0, &c0, &x);
                let mut rng = rng_from(seed, "mc-forecast", i as u64);
                Ok(w.mc_from_hidden(&hidden, passes, &mut rng))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcDecision {
    pub plan: DosePlan,
    /// Daily dose to apply over the next interval.
    pub dose: f64,
    /// The next 24 hourly dose values.
    pub hourly: Vec<f64>,
    pub candidates_scored: usize,
}

/// One receding-horizon step: scores every candidate plan under every
/// scenario and returns the first day of the best one.
pub fn solve<F: SymptomForecaster + ?Sized, S: ScenarioSampler + ?Sized>(
    history: &History<'_>,
    current_dose: f64,
    forecaster: &F,
    sampler: &S,
    cfg: &MpcConfig,
    seed: u64,
) -> Result<MpcDecision> {
    cfg.validate()?;
    let beta = cfg.beta()?;
    let horizon = cfg.horizon_hours();
    if forecaster.horizon() != horizon {
        return Err(Error::Config(format!(
            "mpc horizon of {horizon} h does not match forecaster horizon of {} h",
            forecaster.horizon()
        )));
    }
    history.check(forecaster.history_len())?;
    let candidates = expand_candidates(current_dose, cfg)?;
    let scenarios = sampler.sample(cfg.scenarios, cfg.horizon_days, derive_seed(seed, "scenarios", 0))?;
    if let Some(bad) = scenarios.iter().find(|s| s.len() != horizon) {
        return Err(Error::shape("scenario length", horizon, bad.len()));
    }
    let j = scenarios.len();
    let futures: Vec<FutureInputs> = candidates
        .iter()
        .flat_map(|plan| {
            let doses = hourly_doses(&plan.doses, cfg.bolus_hour);
            scenarios.iter().map(move |meals| FutureInputs { meals: meals.clone(), doses: doses.clone() })
        })
        .collect();
    let forecasts = forecaster.forecast_many(history, &futures, cfg.mc_passes, derive_seed(seed, "mc", 0))?;
    if forecasts.len() != futures.len() {
        return Err(Error::shape("forecast count", futures.len(), forecasts.len()));
    }
    let scored: Vec<DosePlan> = candidates
        .into_iter()
        .zip(forecasts.chunks(j))
        .map(|(plan, f)| score_plan(plan, f, cfg, beta))
        .collect();
    let candidates_scored = scored.len();
    let best = scored
        .into_iter()
        .min_by(plan_order)
        .expect("candidate set is never empty");
    log::debug!(
        "mpc: best {:?} score {:.4} usage {:.4} worst {:.4} mean sigma {:.4}",
        best.actions,
        best.score,
        best.usage,
        best.worst_violation,
        best.mean_sigma
    );
    let dose = best.doses[0];
    Ok(MpcDecision { hourly: hourly_doses(&[dose], cfg.bolus_hour), dose, plan: best, candidates_scored })
}
