use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{random_dose_schedule, simulate_record, EpisodeRecord};
use crate::bnn::{self, extract_windows, ModelWeights, Normalization, TrainHistory, WindowSample};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::meals::{MealSchedule, HOURS_PER_DAY};
use crate::seed::{derive_seed, rng_from};
use crate::sim::{sample_patient, PatientParams};

/// Disjoint patient populations drawn from the same parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cohort {
    Foundation,
    Test,
    Calibration,
}

impl Cohort {
    fn tag(self) -> &'static str {
        match self {
            Cohort::Foundation => "foundation-patient",
            Cohort::Test => "test-patient",
            Cohort::Calibration => "calibration-patient",
        }
    }
}

pub fn patient_params(cfg: &Config, seed: u64, cohort: Cohort, index: usize) -> Result<PatientParams> {
    sample_patient(derive_seed(seed, cohort.tag(), index as u64), &cfg.sim.params)
}

/// Scales from the configured population maxima: the largest meal amplitude
/// and `u_max`.
pub fn population_normalization(cfg: &Config) -> Normalization {
    Normalization {
        meal_scale: cfg.meals.amplitude.iter().map(|r| r.hi).fold(0.0, f64::max),
        dose_scale: cfg.mpc.u_max,
    }
}

/// Random meals and blocked random morning doses for `n_days`. `tag` keeps
/// the streams of different experiment stages apart.
pub fn randomized_episode(cfg: &Config, params: &PatientParams, patient: usize, n_days: usize, seed: u64, tag: &str) -> Result<EpisodeRecord> {
    let idx = patient as u64;
    let meals = MealSchedule::sample(n_days, &cfg.meals, &mut rng_from(seed, &format!("{tag}/meals"), idx)).hourly_profile();
    let doses = random_dose_schedule(
        n_days,
        cfg.mpc.u_max,
        cfg.harness.dose_block_days,
        cfg.mpc.bolus_hour,
        &mut rng_from(seed, &format!("{tag}/doses"), idx),
    );
    simulate_record(patient, params, &meals, &doses, cfg.sim.dt_sub, &mut rng_from(seed, &format!("{tag}/noise"), idx))
}

/// Windows built from the observable columns only.
pub fn episode_windows(ep: &EpisodeRecord, norm: &Normalization, t_hist: usize, t_fut: usize, stride: usize) -> Result<Vec<WindowSample>> {
    extract_windows(&ep.meal, &ep.dose, &ep.symptom_values(), norm, t_hist, t_fut, stride)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoundationDataset {
    pub norm: Normalization,
    pub params: Vec<PatientParams>,
    pub episodes: Vec<EpisodeRecord>,
    /// Windows grouped per patient, in time order.
    pub windows: Vec<Vec<WindowSample>>,
}

impl FoundationDataset {
    pub fn window_total(&self) -> usize {
        self.windows.iter().map(Vec::len).sum()
    }
}

pub fn generate_foundation_dataset(cfg: &Config, n_patients: usize, n_days: usize, seed: u64) -> Result<FoundationDataset> {
    if n_patients == 0 {
        return Err(Error::Config("foundation dataset needs at least one patient".into()));
    }
    let span = cfg.bnn.t_hist + cfg.bnn.t_fut;
    if n_days * HOURS_PER_DAY < span {
        return Err(Error::Config(format!(
            "{n_days} days ({} h) are shorter than one window of {span} h",
            n_days * HOURS_PER_DAY
        )));
    }
    let norm = population_normalization(cfg);
    let per: Vec<Result<(PatientParams, EpisodeRecord, Vec<WindowSample>)>> = (0..n_patients)
        .into_par_iter()
        .map(|i| {
            let p = patient_params(cfg, seed, Cohort::Foundation, i)?;
            let ep = randomized_episode(cfg, &p, i, n_days, seed, "foundation")?;
            let w = episode_windows(&ep, &norm, cfg.bnn.t_hist, cfg.bnn.t_fut, cfg.harness.window_stride)?;
            Ok((p, ep, w))
        })
        .collect();
    let mut ds = FoundationDataset { norm, params: vec![], episodes: vec![], windows: vec![] };
    for r in per {
        let (p, ep, w) = r?;
        ds.params.push(p);
        ds.episodes.push(ep);
        ds.windows.push(w);
    }
    Ok(ds)
}

/// Randomly initialized foundation model trained on all patients' windows.
pub fn train_foundation(cfg: &Config, windows: &[Vec<WindowSample>], norm: Normalization, seed: u64) -> Result<(ModelWeights, TrainHistory)> {
    let init = ModelWeights::init_random(cfg.bnn.architecture(), norm, &mut rng_from(seed, "bnn-init", 0))?;
    let tc = bnn::TrainConfig { seed: derive_seed(seed, "foundation-train", 0), ..cfg.bnn.train };
    bnn::train(&init, windows, &tc)
}

/// Simulates `finetune_days` of randomized history for test patient `index`
/// and adapts the foundation model to it.
pub fn finetune_patient(cfg: &Config, foundation: &ModelWeights, index: usize, seed: u64) -> Result<(ModelWeights, TrainHistory)> {
    let p = patient_params(cfg, seed, Cohort::Test, index)?;
    let ep = randomized_episode(cfg, &p, index, cfg.harness.finetune_days, seed, "finetune")?;
    let w = episode_windows(&ep, &foundation.norm, foundation.arch.t_hist, foundation.arch.t_fut, cfg.harness.finetune_stride)?;
    let tc = bnn::TrainConfig { seed: derive_seed(seed, "finetune-train", index as u64), ..cfg.bnn.finetune };
    bnn::finetune(foundation, &w, &tc)
}
