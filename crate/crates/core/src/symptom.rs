//! Acid level to patient-reported 1..=10 symptom scores.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed::Rng;
use crate::sim::PatientParams;

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymptomPair {
    pub reflux: u8,
    pub digestion: u8,
}

impl SymptomPair {
    pub fn as_f64(&self) -> [f64; 2] {
        [f64::from(self.reflux), f64::from(self.digestion)]
    }
}

/// Rises from 1 to 10 as acid climbs through `a_high`.
pub fn reflux_score_continuous(acid: f64, a_high: f64, k_r: f64) -> f64 {
    1.0 + 9.0 / (1.0 + (-k_r * (acid - a_high)).exp())
}

/// Rises from 1 to 10 as acid falls through `a_low`.
pub fn digestion_score_continuous(acid: f64, a_low: f64, k_d: f64) -> f64 {
    1.0 + 9.0 / (1.0 + (k_d * (acid - a_low)).exp())
}

/// `clip(floor(score + eta + noise), 1, 10)`; NaN maps to the lowest score.
pub fn report(score: f64, eta: f64, noise: f64) -> u8 {
    let v = (score + eta + noise).floor();
    if v >= f64::from(MAX_SCORE) {
        MAX_SCORE
    } else if v >= f64::from(MIN_SCORE) {
        v as u8
    } else {
        MIN_SCORE
    }
}

/// Continuous (noise-free) scores for a given acid level.
pub fn continuous_scores(acid: f64, params: &PatientParams) -> [f64; 2] {
    [
        reflux_score_continuous(acid, params.a_high, params.k_r),
        digestion_score_continuous(acid, params.a_low, params.k_d),
    ]
}

/// Draws a fresh report pair; the patient offsets are fixed, the Gaussian
/// report noise is drawn anew for every call and channel.
pub fn encode(acid: f64, params: &PatientParams, rng: &mut Rng) -> SymptomPair {
    let [r, d] = continuous_scores(acid, params);
    let (nr, nd) = if params.sigma_noise > 0.0 {
        let normal = Normal::new(0.0, params.sigma_noise).expect("sigma checked positive");
        (normal.sample(rng), normal.sample(rng))
    } else {
        (0.0, 0.0)
    };
    SymptomPair {
        reflux: report(r, params.eta_r, nr),
        digestion: report(d, params.eta_d, nd),
    }
}
