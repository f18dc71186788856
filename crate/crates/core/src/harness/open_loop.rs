use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::dataset::randomized_episode;
use super::episode::EpisodeRecord;
use crate::bnn::{ModelWeights, WindowInputs};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::meals::HOURS_PER_DAY;
use crate::sim::PatientParams;
use crate::symptom::{continuous_scores, MAX_SCORE, MIN_SCORE};

/// Point forecaster evaluated on a recorded episode.
pub trait WindowPredictor: Sync {
    fn t_hist(&self) -> usize;
    fn t_fut(&self) -> usize;
    /// Forecast of hours `start..start + t_fut` given everything before `start`.
    fn predict(&self, ep: &EpisodeRecord, start: usize) -> Result<Vec<[f64; 2]>>;
}

/// Deterministic (dropout-off) forecasts from observable columns only.
#[derive(Debug, Clone)]
pub struct MeanForecaster {
    pub weights: ModelWeights,
}

impl WindowPredictor for MeanForecaster {
    fn t_hist(&self) -> usize {
        self.weights.arch.t_hist
    }

    fn t_fut(&self) -> usize {
        self.weights.arch.t_fut
    }

    fn predict(&self, ep: &EpisodeRecord, start: usize) -> Result<Vec<[f64; 2]>> {
        let w = &self.weights;
        let (th, tf) = (w.arch.t_hist, w.arch.t_fut);
        let n = &w.norm;
        let hist: Vec<[f64; 2]> = ep.symptoms[start - th..start]
            .iter()
            .map(|s| s.as_f64().map(|v| n.symptom(v)))
            .collect();
        let comb: Vec<[f64; 2]> = (start - th..start + tf).map(|h| n.inputs(ep.meal[h], ep.dose[h])).collect();
        let y = w.forward(&WindowInputs { hist_symptoms: &hist, combined_inputs: &comb }, None)?;
        Ok(y.into_iter().map(|v| v.map(|x| n.symptom_inv(x))).collect())
    }
}

/// Predicts the true continuous symptom scores from the simulator's acid
/// trace, i.e. the underlying signal before the reporting channel.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub params: PatientParams,
    pub t_hist: usize,
    pub t_fut: usize,
}

impl WindowPredictor for OraclePredictor {
    fn t_hist(&self) -> usize {
        self.t_hist
    }

    fn t_fut(&self) -> usize {
        self.t_fut
    }

    fn predict(&self, ep: &EpisodeRecord, start: usize) -> Result<Vec<[f64; 2]>> {
        Ok((start..start + self.t_fut)
            .map(|h| continuous_scores(ep.acid[h], &self.params))
            .collect())
    }
}

fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Mean and variance of `clip(floor(score + eta + n), 1, 10)` with
/// `n ~ N(0, sigma^2)`.
pub fn report_moments(score: f64, eta: f64, sigma: f64) -> (f64, f64) {
    let m = score + eta;
    // P(report <= k) = P(m + n < k + 1) for k below the top score.
    let cdf = |k: u8| -> f64 {
        if k >= MAX_SCORE {
            1.0
        } else if sigma > 0.0 {
            phi((f64::from(k) + 1.0 - m) / sigma)
        } else if m < f64::from(k) + 1.0 {
            1.0
        } else {
            0.0
        }
    };
    let (mut e1, mut e2, mut prev) = (0.0, 0.0, 0.0);
    for k in MIN_SCORE..=MAX_SCORE {
        let c = cdf(k);
        let pk = c - prev;
        prev = c;
        let v = f64::from(k);
        e1 += pk * v;
        e2 += pk * v * v;
    }
    (e1, (e2 - e1 * e1).max(0.0))
}

fn report_moments_at(acid: f64, p: &PatientParams) -> [(f64, f64, f64); 2] {
    let [r, d] = continuous_scores(acid, p);
    let m = |s: f64, eta: f64| {
        let (mean, var) = report_moments(s, eta, p.sigma_noise);
        (mean, var, s)
    };
    [m(r, p.eta_r), m(d, p.eta_d)]
}

/// Error floors of the reporting channel over the listed hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    /// RMS difference between reports and the true continuous score: the
    /// expected RMSE of a predictor that knows the true score exactly.
    pub channel: [f64; 2],
    /// RMS report standard deviation given the true acid: the expected RMSE
    /// of the best possible point predictor.
    pub irreducible: [f64; 2],
}

pub fn noise_floor(acid: &[f64], hours: &[usize], params: &PatientParams) -> NoiseFloor {
    let (mut ch, mut ir) = ([0.0; 2], [0.0; 2]);
    for &h in hours {
        for (k, (mean, var, s)) in report_moments_at(acid[h], params).into_iter().enumerate() {
            ch[k] += var + (mean - s).powi(2);
            ir[k] += var;
        }
    }
    let n = hours.len().max(1) as f64;
    NoiseFloor { channel: ch.map(|v| (v / n).sqrt()), irreducible: ir.map(|v| (v / n).sqrt()) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopRow {
    pub t_hours: usize,
    pub reflux: u8,
    pub digestion: u8,
    pub pred_reflux: f64,
    pub pred_digestion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopResult {
    pub patient: usize,
    pub rmse: [f64; 2],
    pub noise_floor: NoiseFloor,
    pub windows: usize,
    pub rows: Vec<OpenLoopRow>,
}

impl OpenLoopResult {
    pub fn rmse_of(rows: &[OpenLoopRow]) -> [f64; 2] {
        let n = rows.len().max(1) as f64;
        let mut s = [0.0; 2];
        for r in rows {
            s[0] += (r.pred_reflux - f64::from(r.reflux)).powi(2);
            s[1] += (r.pred_digestion - f64::from(r.digestion)).powi(2);
        }
        s.map(|v| (v / n).sqrt())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Forecasts consecutive non-overlapping `t_fut` blocks over `n_days` fresh
/// days, each from the true preceding history, and scores them against the
/// noisy reports.
pub fn run_open_loop_validation<P: WindowPredictor + ?Sized>(
    predictor: &P,
    params: &PatientParams,
    cfg: &Config,
    patient: usize,
    n_days: usize,
    seed: u64,
) -> Result<OpenLoopResult> {
    let (th, tf) = (predictor.t_hist(), predictor.t_fut());
    if n_days == 0 || n_days * HOURS_PER_DAY < tf {
        return Err(Error::Config(format!("open-loop evaluation of {n_days} days covers no forecast window")));
    }
    let prefix = th.div_ceil(HOURS_PER_DAY);
    let ep = randomized_episode(cfg, params, patient, prefix + n_days, seed, "open-loop")?;
    let first = prefix * HOURS_PER_DAY;
    let starts: Vec<usize> = (first..=ep.len() - tf).step_by(tf).collect();
    let preds: Vec<Result<Vec<[f64; 2]>>> = starts.par_iter().map(|&s| predictor.predict(&ep, s)).collect();
    let mut rows = Vec::with_capacity(starts.len() * tf);
    for (&s, p) in starts.iter().zip(preds) {
        let p = p?;
        if p.len() != tf {
            return Err(Error::shape("forecast length", tf, p.len()));
        }
        for (k, y) in p.iter().enumerate() {
            let h = s + k;
            rows.push(OpenLoopRow {
                t_hours: h,
                reflux: ep.symptoms[h].reflux,
                digestion: ep.symptoms[h].digestion,
                pred_reflux: y[0],
                pred_digestion: y[1],
            });
        }
    }
    let hours: Vec<usize> = rows.iter().map(|r| r.t_hours).collect();
    Ok(OpenLoopResult {
        patient,
        rmse: OpenLoopResult::rmse_of(&rows),
        noise_floor: noise_floor(&ep.acid, &hours, params),
        windows: starts.len(),
        rows,
    })
}
