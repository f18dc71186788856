use std::io::Write;

use serde::{Deserialize, Serialize};

use super::baseline::{fixed_regimen_hourly, run_fixed_regimen};
use super::episode::EpisodeRecord;
use super::report::{satisfaction, violation_episodes, ArmResult, PatientReport};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::meals::{MealSchedule, HOURS_PER_DAY};
use crate::mpc::{solve, History, MealScenarioSampler, SymptomForecaster};
use crate::seed::{derive_seed, rng_from, Rng};
use crate::sim::{PatientParams, PatientSim, SimState};

pub(crate) fn arm_meals(cfg: &Config, patient: usize, n_days: usize, seed: u64, tag: &str) -> Vec<f64> {
    let mut rng = rng_from(seed, &format!("{tag}/meals"), patient as u64);
    MealSchedule::sample(n_days, &cfg.meals, &mut rng).hourly_profile()
}

pub(crate) fn arm_noise(patient: usize, seed: u64, tag: &str) -> Rng {
    rng_from(seed, &format!("{tag}/noise"), patient as u64)
}

/// Steady state under the mean meal intensity and the given daily dose.
pub(crate) fn initial_state(params: &PatientParams, meals: &[f64], daily_dose: f64) -> SimState {
    let mean_meal = meals.iter().sum::<f64>() / meals.len().max(1) as f64;
    params.steady_state(mean_meal, daily_dose / HOURS_PER_DAY as f64)
}

/// Hourly record of both arms on the same meals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_hours: usize,
    pub meal: f64,
    pub dose_mpc: f64,
    pub reflux_mpc: u8,
    pub digestion_mpc: u8,
    pub dose_fixed: f64,
    pub reflux_fixed: u8,
    pub digestion_fixed: u8,
    pub acid_mpc: f64,
    pub acid_fixed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub report: PatientReport,
    pub mpc_episode: EpisodeRecord,
    pub fixed_episode: EpisodeRecord,
    /// First hour of the compared interval.
    pub eval_start: usize,
}

impl ClosedLoopRun {
    pub fn trace(&self) -> Vec<TraceRow> {
        let (m, f) = (&self.mpc_episode, &self.fixed_episode);
        (0..m.len())
            .map(|h| TraceRow {
                t_hours: h,
                meal: m.meal[h],
                dose_mpc: m.dose[h],
                reflux_mpc: m.symptoms[h].reflux,
                digestion_mpc: m.symptoms[h].digestion,
                dose_fixed: f.dose[h],
                reflux_fixed: f.symptoms[h].reflux,
                digestion_fixed: f.symptoms[h].digestion,
                acid_mpc: m.acid[h],
                acid_fixed: f.acid[h],
            })
            .collect()
    }

    /// Hourly trace of both arms; acid columns only with `include_hidden`.
    pub fn write_trace_csv<W: Write>(&self, out: W, include_hidden: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "patient", "t_hours", "meal", "dose_mpc", "reflux_mpc", "digestion_mpc", "dose_fixed", "reflux_fixed", "digestion_fixed",
        ];
        if include_hidden {
            header.extend(["acid_mpc", "acid_fixed"]);
        }
        w.write_record(&header)?;
        for r in self.trace() {
            let mut row = vec![
                self.report.patient.to_string(),
                r.t_hours.to_string(),
                r.meal.to_string(),
                r.dose_mpc.to_string(),
                r.reflux_mpc.to_string(),
                r.digestion_mpc.to_string(),
                r.dose_fixed.to_string(),
                r.reflux_fixed.to_string(),
                r.digestion_fixed.to_string(),
            ];
            if include_hidden {
                row.push(r.acid_mpc.to_string());
                row.push(r.acid_fixed.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

const TAG: &str = "closed-loop";

/// Runs the MPC arm and the fixed-regimen arm side by side on identical meal
/// and report-noise streams. Both arms follow the fixed regimen during the
/// warmup days; afterwards the MPC re-plans once per day and applies the
/// first day of its best plan.
pub fn run_closed_loop<F: SymptomForecaster + ?Sized>(
    forecaster: &F,
    params: &PatientParams,
    cfg: &Config,
    patient: usize,
    fixed_daily: f64,
    n_days: usize,
    seed: u64,
) -> Result<ClosedLoopRun> {
    if n_days == 0 {
        return Err(Error::Config("closed loop needs at least one day".into()));
    }
    let h = &cfg.harness;
    let warm = h.warmup_days;
    let total = warm + n_days;
    if warm * HOURS_PER_DAY < forecaster.history_len() {
        return Err(Error::Config(format!(
            "{warm} warmup days do not cover the forecaster history of {} h",
            forecaster.history_len()
        )));
    }
    let (fixed, fixed_ep) = run_fixed_regimen(cfg, params, patient, fixed_daily, n_days, seed, TAG)?;

    let meals = arm_meals(cfg, patient, total, seed, TAG);
    let warm_doses = fixed_regimen_hourly(fixed_daily, warm, h.fixed_bolus_hours);
    let mut noise = arm_noise(patient, seed, TAG);
    let mut sim = PatientSim::with_state(*params, initial_state(params, &meals, fixed_daily), cfg.sim.dt_sub)?;
    let mut ep = EpisodeRecord::empty(patient, total * HOURS_PER_DAY);
    let sampler = MealScenarioSampler { config: cfg.meals };
    let mut current = fixed_daily;
    let mut daily_doses = Vec::with_capacity(n_days);
    let mut met = 0usize;
    for day in 0..total {
        let t0 = day * HOURS_PER_DAY;
        let doses = if day < warm {
            warm_doses[t0..t0 + HOURS_PER_DAY].to_vec()
        } else {
            let sym = ep.symptom_values();
            let history = History { symptoms: &sym, meals: &ep.meal, doses: &ep.dose };
            let day_seed = derive_seed(seed, "mpc-day", ((patient as u64) << 32) | day as u64);
            let decision = solve(&history, current, forecaster, &sampler, &cfg.mpc, day_seed)
                .map_err(|e| Error::Predictor { day, source: Box::new(e) })?;
            log::debug!("patient {patient} day {day}: dose {:.4} plan {:?}", decision.dose, decision.plan.actions);
            if decision.plan.scenario_satisfaction >= cfg.mpc.p {
                met += 1;
            }
            current = decision.dose;
            daily_doses.push(current);
            decision.hourly
        };
        for (k, &u) in doses.iter().enumerate() {
            ep.push_hour(&mut sim, meals[t0 + k], u, &mut noise)?;
        }
    }

    let skip = warm * HOURS_PER_DAY;
    let mpc = ArmResult {
        usage: ep.dose[skip..].iter().sum(),
        satisfaction: satisfaction(&ep.symptoms[skip..], h.eval_threshold),
        daily_doses,
        plans_meeting_constraint: Some(met as f64 / n_days as f64),
    };
    let mut episodes = violation_episodes(&ep.symptoms[skip..], h.eval_threshold, "mpc", skip);
    episodes.extend(violation_episodes(&fixed_ep.symptoms[skip..], h.eval_threshold, "fixed", skip));
    Ok(ClosedLoopRun {
        report: PatientReport {
            patient,
            fixed_daily_dose: fixed_daily,
            mpc: Some(mpc),
            fixed: Some(fixed),
            open_loop_rmse: None,
            violation_episodes: episodes,
        },
        mpc_episode: ep,
        fixed_episode: fixed_ep,
        eval_start: skip,
    })
}
