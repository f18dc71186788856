//! Sequence-to-sequence LSTM symptom forecaster with Monte Carlo dropout.
//!
//! The encoder reads `t_hist` steps of `(reflux, digestion, meal, dose)`; the
//! decoder starts from the encoder state and reads `t_fut` steps of future
//! `(meal, dose)`. Each decoder hidden state goes through inverted dropout
//! and a linear head producing the two symptom scores.

mod io;
mod lstm;
mod model;
mod train;

pub use io::{load_weights, read_weights, save_weights, write_weights, MAGIC, FORMAT_VERSION};
pub use model::{Architecture, Layout, ModelWeights, DEC_IN, ENC_IN, FORGET_BIAS, OUTPUTS};
pub use train::{finetune, split_temporal, train, EpochStats, TrainConfig, TrainHistory};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed scaling applied to every model input and target.
///
/// Symptoms map to `[0, 1]` via `(s - 1) / 9`; meal and dose are divided by
/// population maxima recorded with the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub meal_scale: f64,
    pub dose_scale: f64,
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if !(self.meal_scale > 0.0 && self.dose_scale > 0.0) {
            return Err(Error::Config("normalization scales must be > 0".into()));
        }
        Ok(())
    }

    pub fn symptom(&self, s: f64) -> f64 {
        (s - 1.0) / 9.0
    }

    pub fn symptom_inv(&self, y: f64) -> f64 {
        1.0 + 9.0 * y
    }

    pub fn inputs(&self, meal: f64, dose: f64) -> [f64; 2] {
        [meal / self.meal_scale, dose / self.dose_scale]
    }
}

/// Borrowed model inputs for one window (normalized).
#[derive(Debug, Clone, Copy)]
pub struct WindowInputs<'a> {
    /// `[t_hist x 2]` past reflux and digestion.
    pub hist_symptoms: &'a [[f64; 2]],
    /// `[(t_hist + t_fut) x 2]` meal and dose over history and horizon.
    pub combined_inputs: &'a [[f64; 2]],
}

/// One training window (normalized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub hist_symptoms: Vec<[f64; 2]>,
    pub combined_inputs: Vec<[f64; 2]>,
    pub target: Vec<[f64; 2]>,
}

impl WindowSample {
    pub fn inputs(&self) -> WindowInputs<'_> {
        WindowInputs {
            hist_symptoms: &self.hist_symptoms,
            combined_inputs: &self.combined_inputs,
        }
    }
}

/// Number of windows of length `t_hist + t_fut` at the given stride.
pub fn window_count(len: usize, t_hist: usize, t_fut: usize, stride: usize) -> usize {
    let span = t_hist + t_fut;
    if stride == 0 || len < span {
        0
    } else {
        (len - span) / stride + 1
    }
}

/// Slides a window over an hourly episode of raw meals, doses and reported
/// scores. The hidden acid trace is deliberately not an argument.
pub fn extract_windows(
    meals: &[f64],
    doses: &[f64],
    symptoms: &[[f64; 2]],
    norm: &Normalization,
    t_hist: usize,
    t_fut: usize,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    let n = meals.len();
    if doses.len() != n || symptoms.len() != n {
        return Err(Error::shape(
            "episode columns",
            n,
            format!("doses {} / symptoms {}", doses.len(), symptoms.len()),
        ));
    }
    if stride == 0 {
        return Err(Error::Config("window stride must be >= 1".into()));
    }
    let count = window_count(n, t_hist, t_fut, stride);
    Ok((0..count)
        .map(|k| {
            let s = k * stride;
            let sym = |h: usize| symptoms[h].map(|v| norm.symptom(v));
            WindowSample {
                hist_symptoms: (s..s + t_hist).map(sym).collect(),
                combined_inputs: (s..s + t_hist + t_fut).map(|h| norm.inputs(meals[h], doses[h])).collect(),
                target: (s + t_hist..s + t_hist + t_fut).map(sym).collect(),
            }
        })
        .collect())
}

/// Per-step predictive mean and standard deviation in score units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub mu: Vec<[f64; 2]>,
    pub sigma: Vec<[f64; 2]>,
    pub passes: usize,
}

impl ForecastDistribution {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

#[cfg(test)]
mod tests;
