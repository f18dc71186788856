use super::closed_loop::{run_closed_loop, ClosedLoopRun};
use super::dataset::{finetune_patient, patient_params, Cohort};
use super::open_loop::{run_open_loop_validation, MeanForecaster, OpenLoopResult};
use super::report::{evaluate, BenchmarkReport};
use crate::bnn::{ModelWeights, TrainHistory};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::mpc::BnnForecaster;

/// A test patient's fine-tuned forecaster.
#[derive(Debug, Clone)]
pub struct PatientModel {
    pub patient: usize,
    pub weights: ModelWeights,
    pub history: TrainHistory,
}

/// Fine-tunes the foundation model for test patients `0..test_patients`.
pub fn finetune_cohort(cfg: &Config, foundation: &ModelWeights, seed: u64) -> Result<Vec<PatientModel>> {
    (0..cfg.harness.test_patients)
        .map(|i| {
            let (weights, history) = finetune_patient(cfg, foundation, i, seed)?;
            log::info!("patient {i}: fine-tuned {} epochs, best validation {:.5}", history.epochs.len(), history.best_val_loss);
            Ok(PatientModel { patient: i, weights, history })
        })
        .collect()
}

pub fn open_loop_cohort(cfg: &Config, models: &[PatientModel], seed: u64) -> Result<Vec<OpenLoopResult>> {
    models
        .iter()
        .map(|m| {
            let params = patient_params(cfg, seed, Cohort::Test, m.patient)?;
            let predictor = MeanForecaster { weights: m.weights.clone() };
            let r = run_open_loop_validation(&predictor, &params, cfg, m.patient, cfg.harness.open_loop_days, seed)?;
            log::info!("patient {}: open-loop rmse {:.3?}, noise floor {:.3?}", m.patient, r.rmse, r.noise_floor.channel);
            Ok(r)
        })
        .collect()
}

pub fn closed_loop_cohort(cfg: &Config, models: &[PatientModel], fixed_daily: f64, seed: u64) -> Result<Vec<ClosedLoopRun>> {
    models
        .iter()
        .map(|m| {
            let params = patient_params(cfg, seed, Cohort::Test, m.patient)?;
            let forecaster = BnnForecaster { weights: m.weights.clone() };
            let run = run_closed_loop(&forecaster, &params, cfg, m.patient, fixed_daily, cfg.harness.closed_loop_days, seed)?;
            if let (Some(a), Some(b)) = (&run.report.mpc, &run.report.fixed) {
                log::info!(
                    "patient {}: mpc usage {:.2} satisfaction {:.3?}; fixed usage {:.2} satisfaction {:.3?}",
                    m.patient,
                    a.usage,
                    a.satisfaction,
                    b.usage,
                    b.satisfaction
                );
            }
            Ok(run)
        })
        .collect()
}

/// Collects per-patient reports, attaching open-loop RMSE where available.
pub fn benchmark_report(cfg: &Config, seed: u64, runs: &[ClosedLoopRun], open_loop: &[OpenLoopResult]) -> Result<BenchmarkReport> {
    let mut patients = Vec::with_capacity(runs.len());
    for run in runs {
        let mut r = run.report.clone();
        r.open_loop_rmse = open_loop.iter().find(|o| o.patient == r.patient).map(|o| o.rmse);
        patients.push(r);
    }
    if patients.is_empty() {
        return Err(Error::Evaluation("no closed-loop runs".into()));
    }
    let summary = Some(evaluate(&patients)?);
    Ok(BenchmarkReport {
        seed,
        threshold: cfg.harness.eval_threshold,
        days: cfg.harness.closed_loop_days,
        patients,
        summary,
    })
}
