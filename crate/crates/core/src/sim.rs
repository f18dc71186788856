//! Virtual patient: a three-state model of gastric acid with proton-pump
//! inhibitor pharmacokinetics and pump blockade.
//!
//! ```text
//! dC/dt = -k_e C + dose_rate
//! dP/dt = k_rec (1 - P) - k_bind C P
//! dA/dt = P (s0 + s_meal meal) - k_A A
//! ```
//!
//! `C` is plasma drug concentration, `P` the fraction of active proton pumps
//! and `A` the luminal acid level. Inputs are held constant over each
//! integration step and the state is clamped back into its admissible region
//! after every classical RK4 step.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Inclusive uniform sampling range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub const fn point(x: f64) -> Self {
        Range { lo: x, hi: x }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::Config(format!(
                "invalid range for {name}: [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// `lo + (hi - lo) * u`, which also handles zero-width ranges.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        self.lo + (self.hi - self.lo) * rng.gen::<f64>()
    }
}

/// Parameters of one virtual patient. Rates are per hour, acid and score
/// quantities are in arbitrary but consistent units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientParams {
    pub k_e: f64,
    pub k_bind: f64,
    pub k_rec: f64,
    pub s0: f64,
    pub s_meal: f64,
    pub k_a: f64,
    pub a_high: f64,
    pub a_low: f64,
    pub k_r: f64,
    pub k_d: f64,
    /// Patient-constant reporting offsets; never change over time.
    pub eta_r: f64,
    pub eta_d: f64,
    pub sigma_noise: f64,
}

impl PatientParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_e", self.k_e),
            ("k_bind", self.k_bind),
            ("k_rec", self.k_rec),
            ("s_meal", self.s_meal),
            ("k_a", self.k_a),
            ("k_r", self.k_r),
            ("k_d", self.k_d),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.s0 >= 0.0 && self.sigma_noise >= 0.0) {
            return Err(Error::Config("s0 and sigma_noise must be >= 0".into()));
        }
        if !(self.a_low < self.a_high) {
            return Err(Error::Config(format!(
                "a_low ({}) must be below a_high ({})",
                self.a_low, self.a_high
            )));
        }
        Ok(())
    }

    /// Steady state under constant meal intensity and constant infusion rate.
    pub fn steady_state(&self, meal: f64, dose_rate: f64) -> SimState {
        let conc = dose_rate / self.k_e;
        let pumps = self.k_rec / (self.k_rec + self.k_bind * conc);
        let acid = pumps * (self.s0 + self.s_meal * meal) / self.k_a;
        SimState { acid, pumps, conc }
    }
}

/// Per-field sampling ranges for [`sample_patient`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamBounds {
    pub k_e: Range,
    pub k_bind: Range,
    pub k_rec: Range,
    pub s0: Range,
    pub s_meal: Range,
    pub k_a: Range,
    pub a_high: Range,
    pub a_low: Range,
    pub k_r: Range,
    pub k_d: Range,
    pub eta: Range,
    pub sigma_noise: Range,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            k_e: Range::new(0.3, 0.8),
            k_bind: Range::new(0.5, 2.0),
            k_rec: Range::new(0.015, 0.04),
            s0: Range::new(0.8, 1.6),
            s_meal: Range::new(1.0, 3.0),
            k_a: Range::new(0.5, 1.0),
            a_high: Range::new(1.6, 2.2),
            a_low: Range::new(0.15, 0.3),
            k_r: Range::new(2.0, 4.0),
            k_d: Range::new(6.0, 10.0),
            eta: Range::new(-0.5, 0.5),
            sigma_noise: Range::point(0.3),
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in self.fields() {
            r.check(name)?;
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, Range); 12] {
        [
            ("k_e", self.k_e),
            ("k_bind", self.k_bind),
            ("k_rec", self.k_rec),
            ("s0", self.s0),
            ("s_meal", self.s_meal),
            ("k_a", self.k_a),
            ("a_high", self.a_high),
            ("a_low", self.a_low),
            ("k_r", self.k_r),
            ("k_d", self.k_d),
            ("eta", self.eta),
            ("sigma_noise", self.sigma_noise),
        ]
    }
}

/// Draws every field independently and uniformly from its range.
pub fn sample_patient(rng_seed: u64, bounds: &ParamBounds) -> Result<PatientParams> {
    use rand::SeedableRng;
    bounds.validate()?;
    let mut rng = Rng::seed_from_u64(rng_seed);
    Ok(PatientParams {
        k_e: bounds.k_e.sample(&mut rng),
        k_bind: bounds.k_bind.sample(&mut rng),
        k_rec: bounds.k_rec.sample(&mut rng),
        s0: bounds.s0.sample(&mut rng),
        s_meal: bounds.s_meal.sample(&mut rng),
        k_a: bounds.k_a.sample(&mut rng),
        a_high: bounds.a_high.sample(&mut rng),
        a_low: bounds.a_low.sample(&mut rng),
        k_r: bounds.k_r.sample(&mut rng),
        k_d: bounds.k_d.sample(&mut rng),
        eta_r: bounds.eta.sample(&mut rng),
        eta_d: bounds.eta.sample(&mut rng),
        sigma_noise: bounds.sigma_noise.sample(&mut rng),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Luminal acid level.
    pub acid: f64,
    /// Active proton-pump fraction in [0, 1].
    pub pumps: f64,
    /// Plasma drug concentration.
    pub conc: f64,
}

impl SimState {
    pub const ZERO: SimState = SimState {
        acid: 0.0,
        pumps: 0.0,
        conc: 0.0,
    };

    /// Untreated, fasting equilibrium.
    pub fn basal(params: &PatientParams) -> Self {
        SimState {
            acid: params.s0 / params.k_a,
            pumps: 1.0,
            conc: 0.0,
        }
    }

    fn axpy(&self, h: f64, r: &SimRate) -> SimState {
        SimState {
            acid: self.acid + h * r.d_acid,
            pumps: self.pumps + h * r.d_pumps,
            conc: self.conc + h * r.d_conc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRate {
    pub d_acid: f64,
    pub d_pumps: f64,
    pub d_conc: f64,
}

pub fn derivative(state: &SimState, meal: f64, dose_rate: f64, params: &PatientParams) -> SimRate {
    SimRate {
        d_conc: -params.k_e * state.conc + dose_rate,
        d_pumps: params.k_rec * (1.0 - state.pumps) - params.k_bind * state.conc * state.pumps,
        d_acid: state.pumps * (params.s0 + params.s_meal * meal) - params.k_a * state.acid,
    }
}

/// One classical RK4 step with zero-order-hold inputs, followed by clamping.
pub fn step_rk4(
    state: &SimState,
    meal: f64,
    dose_rate: f64,
    params: &PatientParams,
    dt: f64,
) -> Result<SimState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("integration step must be > 0, got {dt}")));
    }
    let k1 = derivative(state, meal, dose_rate, params);
    let k2 = derivative(&state.axpy(0.5 * dt, &k1), meal, dose_rate, params);
    let k3 = derivative(&state.axpy(0.5 * dt, &k2), meal, dose_rate, params);
    let k4 = derivative(&state.axpy(dt, &k3), meal, dose_rate, params);
    let w = dt / 6.0;
    let next = SimState {
        acid: state.acid + w * (k1.d_acid + 2.0 * k2.d_acid + 2.0 * k3.d_acid + k4.d_acid),
        pumps: state.pumps + w * (k1.d_pumps + 2.0 * k2.d_pumps + 2.0 * k3.d_pumps + k4.d_pumps),
        conc: state.conc + w * (k1.d_conc + 2.0 * k2.d_conc + 2.0 * k3.d_conc + k4.d_conc),
    };
    for (field, value) in [("acid", next.acid), ("pumps", next.pumps), ("conc", next.conc)] {
        if !value.is_finite() {
            return Err(Error::NumericalInstability {
                field,
                value,
                time: dt,
            });
        }
    }
    Ok(SimState {
        acid: next.acid.max(0.0),
        pumps: next.pumps.clamp(0.0, 1.0),
        conc: next.conc.max(0.0),
    })
}

/// Hour-by-hour stepping simulator for one patient.
///
/// A dose `u` administered at hour `h` is infused at a constant rate
/// `u / dt_absorb` starting at that hour. Only `dt_absorb = 1 h` is
/// supported: the infusion covers exactly the hour it was given in.
#[derive(Debug, Clone)]
pub struct PatientSim {
    params: PatientParams,
    state: SimState,
    substeps: usize,
    dt_sub: f64,
    hour: usize,
}

impl PatientSim {
    pub fn new(params: PatientParams, dt_sub: f64) -> Result<Self> {
        params.validate()?;
        Self::with_state(params, SimState::basal(&params), dt_sub)
    }

    pub fn with_state(params: PatientParams, state: SimState, dt_sub: f64) -> Result<Self> {
        if !(dt_sub > 0.0 && dt_sub <= 1.0) {
            return Err(Error::Config(format!("dt_sub must lie in (0, 1], got {dt_sub}")));
        }
        let substeps = (1.0 / dt_sub).round();
        if (substeps * dt_sub - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("dt_sub={dt_sub} does not divide one hour")));
        }
        Ok(PatientSim {
            params,
            state,
            substeps: substeps as usize,
            dt_sub,
            hour: 0,
        })
    }

    pub fn params(&self) -> &PatientParams {
        &self.params
    }

    pub fn state(&self) -> SimState {
        self.state
    }

    pub fn hour(&self) -> usize {
        self.hour
    }

    /// Integrates one hour and returns the state at the end of it.
    pub fn advance_hour(&mut self, meal: f64, dose: f64) -> Result<SimState> {
        if !(meal >= 0.0 && dose >= 0.0) {
            return Err(Error::Domain(format!(
                "meal and dose must be >= 0 (meal={meal}, dose={dose})"
            )));
        }
        let dose_rate = dose;
        for _ in 0..self.substeps {
            self.state = step_rk4(&self.state, meal, dose_rate, &self.params, self.dt_sub)
                .map_err(|e| match e {
                    Error::NumericalInstability { field, value, .. } => Error::NumericalInstability {
                        field,
                        value,
                        time: self.hour as f64,
                    },
                    other => other,
                })?;
        }
        self.hour += 1;
        Ok(self.state)
    }
}

/// Simulates an hourly episode from the basal state. Element `h` of the
/// result is the acid level at the end of hour `h`.
pub fn simulate_episode(
    params: &PatientParams,
    meals: &[f64],
    doses: &[f64],
    dt_sub: f64,
) -> Result<Vec<f64>> {
    if meals.len() != doses.len() {
        return Err(Error::shape("episode inputs", meals.len(), doses.len()));
    }
    let mut sim = PatientSim::new(*params, dt_sub)?;
    meals
        .iter()
        .zip(doses)
        .map(|(&m, &u)| sim.advance_hour(m, u).map(|s| s.acid))
        .collect()
}
