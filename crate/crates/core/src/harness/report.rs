use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symptom::SymptomPair;

/// Outcome of one dosing arm over the compared interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub usage: f64,
    /// Fraction of hours with reflux and digestion reports at or below threshold.
    pub satisfaction: [f64; 2],
    pub daily_doses: Vec<f64>,
    /// MPC arm only: fraction of daily decisions whose chosen plan met the
    /// scenario-averaged constraint on its mean forecasts.
    pub plans_meeting_constraint: Option<f64>,
}

impl ArmResult {
    pub fn min_satisfaction(&self) -> f64 {
        self.satisfaction[0].min(self.satisfaction[1])
    }
}

/// A maximal run of consecutive hours above threshold on one channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationEpisode {
    pub arm: String,
    pub channel: String,
    pub start_hour: usize,
    pub hours: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientReport {
    pub patient: usize,
    pub fixed_daily_dose: f64,
    pub mpc: Option<ArmResult>,
    pub fixed: Option<ArmResult>,
    pub open_loop_rmse: Option<[f64; 2]>,
    pub violation_episodes: Vec<ViolationEpisode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub patients: usize,
    pub mean_usage_mpc: f64,
    pub mean_usage_fixed: f64,
    /// Mean over patients of `1 - usage_mpc / usage_fixed`.
    pub mean_usage_reduction: f64,
    /// `1 - sum(usage_mpc) / sum(usage_fixed)`.
    pub total_usage_reduction: f64,
    pub min_satisfaction_mpc: f64,
    pub min_satisfaction_fixed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub threshold: u8,
    pub days: usize,
    pub patients: Vec<PatientReport>,
    pub summary: Option<Summary>,
}

impl BenchmarkReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// One row per patient and arm.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "patient",
            "arm",
            "daily_dose_fixed",
            "usage",
            "satisfaction_reflux",
            "satisfaction_digestion",
            "rmse_reflux",
            "rmse_digestion",
            "plans_meeting_constraint",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for p in &self.patients {
            for (name, arm) in [("mpc", &p.mpc), ("fixed", &p.fixed)] {
                if let Some(a) = arm {
                    w.write_record([
                        p.patient.to_string(),
                        name.to_string(),
                        p.fixed_daily_dose.to_string(),
                        a.usage.to_string(),
                        a.satisfaction[0].to_string(),
                        a.satisfaction[1].to_string(),
                        opt(p.open_loop_rmse.map(|r| r[0])),
                        opt(p.open_loop_rmse.map(|r| r[1])),
                        opt(a.plans_meeting_constraint),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Hourly fraction of reports at or below `theta`, per channel.
pub fn satisfaction(symptoms: &[SymptomPair], theta: u8) -> [f64; 2] {
    let n = symptoms.len().max(1) as f64;
    [
        symptoms.iter().filter(|s| s.reflux <= theta).count() as f64 / n,
        symptoms.iter().filter(|s| s.digestion <= theta).count() as f64 / n,
    ]
}

/// Runs of hours above `theta`; `offset` is added to reported start hours.
pub fn violation_episodes(symptoms: &[SymptomPair], theta: u8, arm: &str, offset: usize) -> Vec<ViolationEpisode> {
    let mut out = Vec::new();
    for (ch, name) in [(0, "reflux"), (1, "digestion")] {
        let mut start = None;
        for (h, s) in symptoms.iter().enumerate().chain(std::iter::once((symptoms.len(), &SymptomPair { reflux: 0, digestion: 0 }))) {
            let v = if ch == 0 { s.reflux } else { s.digestion };
            match (v > theta, start) {
                (true, None) => start = Some(h),
                (false, Some(s0)) => {
                    out.push(ViolationEpisode { arm: arm.into(), channel: name.into(), start_hour: s0 + offset, hours: h - s0 });
                    start = None;
                }
                _ => {}
            }
        }
    }
    out
}

pub fn evaluate(reports: &[PatientReport]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::Evaluation("no patient reports".into()));
    }
    let mut s = Summary {
        patients: reports.len(),
        mean_usage_mpc: 0.0,
        mean_usage_fixed: 0.0,
        mean_usage_reduction: 0.0,
        total_usage_reduction: 0.0,
        min_satisfaction_mpc: 1.0,
        min_satisfaction_fixed: 1.0,
    };
    for r in reports {
        let (Some(m), Some(f)) = (&r.mpc, &r.fixed) else {
            return Err(Error::Evaluation(format!("patient {} lacks an arm", r.patient)));
        };
        if !(f.usage > 0.0) {
            return Err(Error::Evaluation(format!("patient {}: fixed-regimen usage is zero", r.patient)));
        }
        s.mean_usage_mpc += m.usage;
        s.mean_usage_fixed += f.usage;
        s.mean_usage_reduction += 1.0 - m.usage / f.usage;
        s.min_satisfaction_mpc = s.min_satisfaction_mpc.min(m.min_satisfaction());
        s.min_satisfaction_fixed = s.min_satisfaction_fixed.min(f.min_satisfaction());
    }
    let n = reports.len() as f64;
    s.total_usage_reduction = 1.0 - s.mean_usage_mpc / s.mean_usage_fixed;
    s.mean_usage_mpc /= n;
    s.mean_usage_fixed /= n;
    s.mean_usage_reduction /= n;
    Ok(s)
}
