//! Virtual-patient experiments: datasets, training orchestration, open-loop
//! validation, the fixed-regimen baseline and the closed-loop benchmark.

mod baseline;
mod closed_loop;
mod dataset;
mod episode;
mod open_loop;
mod pipeline;
mod report;

pub use baseline::{calibrate_fixed_dose, fixed_regimen_hourly, run_fixed_regimen, Calibration};
pub use closed_loop::{run_closed_loop, ClosedLoopRun, TraceRow};
pub use dataset::{
    episode_windows, finetune_patient, generate_foundation_dataset, patient_params, population_normalization,
    randomized_episode, train_foundation, Cohort, FoundationDataset,
};
pub use episode::{random_dose_schedule, simulate_from, simulate_record, EpisodeRecord};
pub use open_loop::{noise_floor, NoiseFloor, report_moments, run_open_loop_validation, MeanForecaster, OpenLoopResult, OpenLoopRow, OraclePredictor, WindowPredictor};
pub use pipeline::{benchmark_report, closed_loop_cohort, finetune_cohort, open_loop_cohort, PatientModel};
pub use report::{evaluate, satisfaction, violation_episodes, ArmResult, BenchmarkReport, PatientReport, Summary, ViolationEpisode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub foundation_patients: usize,
    pub foundation_days: usize,
    pub test_patients: usize,
    pub finetune_days: usize,
    pub open_loop_days: usize,
    pub closed_loop_days: usize,
    /// Days on the fixed regimen before the compared interval starts.
    pub warmup_days: usize,
    pub window_stride: usize,
    /// Window stride over a test patient's fine-tuning history.
    pub finetune_stride: usize,
    /// Inclusive range of days a randomized training dose level is held.
    pub dose_block_days: [usize; 2],
    /// Symptom threshold used to score satisfaction.
    pub eval_threshold: u8,
    pub satisfaction_target: f64,
    pub calibration_patients: usize,
    pub calibration_days: usize,
    /// Candidate daily doses for the fixed regimen, ascending.
    pub calibration_grid: Vec<f64>,
    pub baseline_percentile: f64,
    pub fixed_bolus_hours: [usize; 2],
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            foundation_patients: 10,
            foundation_days: 60,
            test_patients: 5,
            finetune_days: 30,
            open_loop_days: 60,
            closed_loop_days: 60,
            warmup_days: 7,
            window_stride: 24,
            finetune_stride: 6,
            dose_block_days: [1, 5],
            eval_threshold: 5,
            satisfaction_target: 0.95,
            calibration_patients: 20,
            calibration_days: 60,
            calibration_grid: (1..=20).map(|k| f64::from(k) / 20.0).collect(),
            baseline_percentile: 0.95,
            fixed_bolus_hours: [8, 18],
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("harness: {m}")));
        if self.window_stride == 0 || self.finetune_stride == 0 {
            return bad("window strides must be >= 1");
        }
        let [lo, hi] = self.dose_block_days;
        if lo == 0 || lo > hi {
            return bad("dose_block_days must satisfy 1 <= min <= max");
        }
        if !(1..=10).contains(&self.eval_threshold) {
            return bad("eval_threshold must lie in 1..=10");
        }
        if !(0.0..=1.0).contains(&self.satisfaction_target) || !(0.0..=1.0).contains(&self.baseline_percentile) {
            return bad("satisfaction_target and baseline_percentile must lie in [0, 1]");
        }
        if self.calibration_grid.is_empty()
            || self.calibration_grid.iter().any(|u| !(0.0..=1.0).contains(u))
            || self.calibration_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("calibration_grid must be non-empty, ascending and within [0, 1]");
        }
        if self.fixed_bolus_hours.iter().any(|&h| h >= 24) {
            return bad("fixed_bolus_hours must be < 24");
        }
        Ok(())
    }
}
