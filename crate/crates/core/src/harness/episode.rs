use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meals::HOURS_PER_DAY;
use crate::seed::Rng;
use crate::sim::{PatientParams, PatientSim, SimState};
use crate::symptom::{encode, SymptomPair};

/// One hourly simulated episode. `acid` is simulator ground truth and is
/// never used to build model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub patient: usize,
    pub meal: Vec<f64>,
    pub dose: Vec<f64>,
    pub symptoms: Vec<SymptomPair>,
    pub acid: Vec<f64>,
}

impl EpisodeRecord {
    pub fn empty(patient: usize, capacity: usize) -> Self {
        EpisodeRecord {
            patient,
            meal: Vec::with_capacity(capacity),
            dose: Vec::with_capacity(capacity),
            symptoms: Vec::with_capacity(capacity),
            acid: Vec::with_capacity(capacity),
        }
    }

    /// Advances `sim` by one hour and records inputs, acid and a report.
    pub fn push_hour(&mut self, sim: &mut PatientSim, meal: f64, dose: f64, noise: &mut Rng) -> Result<()> {
        let s = sim.advance_hour(meal, dose)?;
        self.meal.push(meal);
        self.dose.push(dose);
        self.acid.push(s.acid);
        self.symptoms.push(encode(s.acid, sim.params(), noise));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.meal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meal.is_empty()
    }

    pub fn symptom_values(&self) -> Vec<[f64; 2]> {
        self.symptoms.iter().map(SymptomPair::as_f64).collect()
    }

    /// `t_hours,meal,dose,reflux,digestion[,acid]`
    pub fn write_csv<W: Write>(&self, out: W, include_hidden: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t_hours", "meal", "dose", "reflux", "digestion"];
        if include_hidden {
            header.push("acid");
        }
        w.write_record(&header)?;
        for h in 0..self.len() {
            let mut row = vec![
                h.to_string(),
                self.meal[h].to_string(),
                self.dose[h].to_string(),
                self.symptoms[h].reflux.to_string(),
                self.symptoms[h].digestion.to_string(),
            ];
            if include_hidden {
                row.push(self.acid[h].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an episode file. Without an acid column the acid trace is NaN.
    pub fn read_csv<R: Read>(input: R, patient: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let expect = ["t_hours", "meal", "dose", "reflux", "digestion"];
        if headers.len() < 5 || headers.iter().take(5).ne(expect) || headers.len() > 6 {
            return Err(Error::Format(format!("unexpected episode header {headers:?}")));
        }
        let has_acid = headers.len() == 6;
        let mut ep = EpisodeRecord { patient, meal: vec![], dose: vec![], symptoms: vec![], acid: vec![] };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec[k].parse::<f64>().map_err(|e| Error::Format(format!("row {i}, column {k}: {e}")))
            };
            let score = |k: usize| -> Result<u8> {
                rec[k].parse::<u8>().map_err(|e| Error::Format(format!("row {i}, column {k}: {e}")))
            };
            if num(0)? != i as f64 {
                return Err(Error::Format(format!("row {i}: t_hours out of sequence")));
            }
            ep.meal.push(num(1)?);
            ep.dose.push(num(2)?);
            ep.symptoms.push(SymptomPair { reflux: score(3)?, digestion: score(4)? });
            ep.acid.push(if has_acid { num(5)? } else { f64::NAN });
        }
        Ok(ep)
    }
}

/// Daily levels `U(0, u_max)` held for blocks of `block_days[0]..=block_days[1]`
/// days, each given as one bolus at `bolus_hour`.
pub fn random_dose_schedule(n_days: usize, u_max: f64, block_days: [usize; 2], bolus_hour: usize, rng: &mut Rng) -> Vec<f64> {
    let mut out = vec![0.0; n_days * HOURS_PER_DAY];
    let mut day = 0;
    while day < n_days {
        let level = u_max * rng.gen::<f64>();
        let len = rng.gen_range(block_days[0]..=block_days[1]);
        for d in day..(day + len).min(n_days) {
            out[d * HOURS_PER_DAY + bolus_hour] = level;
        }
        day += len;
    }
    out
}

/// Simulates an episode from the steady state of its average inputs and
/// encodes a report at the end of every hour.
pub fn simulate_record(
    patient: usize,
    params: &PatientParams,
    meals: &[f64],
    doses: &[f64],
    dt_sub: f64,
    noise: &mut Rng,
) -> Result<EpisodeRecord> {
    let n = meals.len().max(1) as f64;
    let init = params.steady_state(meals.iter().sum::<f64>() / n, doses.iter().sum::<f64>() / n);
    simulate_from(patient, params, init, meals, doses, dt_sub, noise)
}

pub fn simulate_from(
    patient: usize,
    params: &PatientParams,
    init: SimState,
    meals: &[f64],
    doses: &[f64],
    dt_sub: f64,
    noise: &mut Rng,
) -> Result<EpisodeRecord> {
    if meals.len() != doses.len() {
        return Err(Error::shape("episode inputs", meals.len(), doses.len()));
    }
    params.validate()?;
    let mut sim = PatientSim::with_state(*params, init, dt_sub)?;
    let mut ep = EpisodeRecord::empty(patient, meals.len());
    for (&m, &u) in meals.iter().zip(doses) {
        ep.push_hour(&mut sim, m, u, noise)?;
    }
    Ok(ep)
}
