//! One receding-horizon dose decision with a physics-based forecaster.
//!
//! The forecaster replays the observed inputs through the simulator and
//! predicts the continuous scores plus the patient's reporting offset, with
//! the report noise as spread. Plugging it into `solve` shows the controller
//! independent of the learned model.

use gmpc::meals::{MealConfig, MealSchedule};
use gmpc::mpc::{hourly_doses, solve, FutureInputs, History, MealScenarioSampler, MpcConfig, SymptomForecaster};
use gmpc::bnn::ForecastDistribution;
use gmpc::seed::{derive_seed, rng_from};
use gmpc::sim::{sample_patient, ParamBounds, PatientParams, PatientSim};
use gmpc::symptom::{continuous_scores, encode};

struct PhysicsForecaster {
    params: PatientParams,
    horizon: usize,
}

impl SymptomForecaster for PhysicsForecaster {
    fn history_len(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast_many(&self, history: &History<'_>, futures: &[FutureInputs], passes: usize, _seed: u64) -> gmpc::Result<Vec<ForecastDistribution>> {
        let mut sim = PatientSim::new(self.params, 0.05)?;
        for (&m, &u) in history.meals.iter().zip(history.doses) {
            sim.advance_hour(m, u)?;
        }
        let p = &self.params;
        let sd = [p.sigma_noise; 2];
        futures
            .iter()
            .map(|f| {
                let mut s = sim.clone();
                let mut mu = Vec::with_capacity(f.meals.len());
                for (&m, &u) in f.meals.iter().zip(&f.doses) {
                    let [r, d] = continuous_scores(s.advance_hour(m, u)?.acid, p);
                    mu.push([r + p.eta_r, d + p.eta_d]);
                }
                Ok(ForecastDistribution { sigma: vec![sd; mu.len()], mu, passes })
            })
            .collect()
    }
}

fn main() -> gmpc::Result<()> {
    let seed = 21;
    let params = sample_patient(derive_seed(seed, "patient", 0), &ParamBounds::default())?;
    let cfg = MpcConfig::default();

    let days = 5;
    let meals = MealSchedule::sample(days, &MealConfig::default(), &mut rng_from(seed, "meals", 0)).hourly_profile();
    let doses = hourly_doses(&vec![0.5; days], cfg.bolus_hour);
    let mut sim = PatientSim::new(params, 0.05)?;
    let mut noise = rng_from(seed, "noise", 0);
    let mut symptoms = Vec::new();
    for (&m, &u) in meals.iter().zip(&doses) {
        symptoms.push(encode(sim.advance_hour(m, u)?.acid, &params, &mut noise).as_f64());
    }

    let history = History { symptoms: &symptoms, meals: &meals, doses: &doses };
    let forecaster = PhysicsForecaster { params, horizon: cfg.horizon_hours() };
    let sampler = MealScenarioSampler::default();
    let decision = solve(&history, 0.5, &forecaster, &sampler, &cfg, seed)?;

    println!("scored {} plans", decision.candidates_scored);
    println!("best actions {:?}", decision.plan.actions);
    println!("planned daily doses {:.3?}", decision.plan.doses);
    println!(
        "usage {:.3}  worst violation {:.4}  score {:.4}",
        decision.plan.usage, decision.plan.worst_violation, decision.plan.score
    );
    println!("next dose {:.3}", decision.dose);
    Ok(())
}
