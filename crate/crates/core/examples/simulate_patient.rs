//! Samples one virtual patient and simulates three days of meals under a
//! daily morning dose, printing hourly acid and the reported symptoms.
//!
//! `cargo run --example simulate_patient -- [seed]`

use gmpc::meals::{MealConfig, MealSchedule};
use gmpc::mpc::hourly_doses;
use gmpc::seed::{derive_seed, rng_from};
use gmpc::sim::{sample_patient, ParamBounds, PatientSim};
use gmpc::symptom::encode;

fn main() -> gmpc::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let params = sample_patient(derive_seed(seed, "patient", 0), &ParamBounds::default())?;
    println!("{params:#?}");

    let days = 3;
    let meals = MealSchedule::sample(days, &MealConfig::default(), &mut rng_from(seed, "meals", 0)).hourly_profile();
    let doses = hourly_doses(&[0.4; 3], 7);
    let mut noise = rng_from(seed, "noise", 0);
    let mut sim = PatientSim::new(params, 0.05)?;

    println!("{:>4} {:>6} {:>5} {:>7} {:>6} {:>6}", "hour", "meal", "dose", "acid", "reflux", "digest");
    for (h, (&m, &u)) in meals.iter().zip(&doses).enumerate() {
        let s = sim.advance_hour(m, u)?;
        let r = encode(s.acid, &params, &mut noise);
        println!("{h:>4} {m:>6.3} {u:>5.2} {:>7.3} {:>6} {:>6}", s.acid, r.reflux, r.digestion);
    }
    Ok(())
}
