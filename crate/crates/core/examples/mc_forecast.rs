//! Briefly trains a forecaster, then draws an MC-dropout forecast for a
//! held-out window and prints mean and spread against the true reports.

use gmpc::config::Config;
use gmpc::harness::{episode_windows, generate_foundation_dataset, patient_params, randomized_episode, train_foundation, Cohort};
use gmpc::seed::rng_from;

fn main() -> gmpc::Result<()> {
    let cfg = Config::from_json(
        r#"{
  "bnn": {"hidden": 16, "t_hist": 24, "t_fut": 24, "dropout": 0.2, "train": {"max_epochs": 20}},
  "mpc": {"horizon_days": 1},
  "harness": {"foundation_patients": 3, "foundation_days": 15, "window_stride": 6}
}"#,
    )?;
    let seed = 9;
    let data = generate_foundation_dataset(&cfg, 3, 15, seed)?;
    let (weights, _) = train_foundation(&cfg, &data.windows, data.norm, seed)?;

    let params = patient_params(&cfg, seed, Cohort::Test, 0)?;
    let episode = randomized_episode(&cfg, &params, 0, 3, seed, "demo")?;
    let window = &episode_windows(&episode, &weights.norm, 24, 24, 24)?[0];
    let forecast = weights.predict_mc(&window.inputs(), 50, &mut rng_from(seed, "mc", 0))?;

    let truth = &episode.symptoms[24..48];
    println!("{:>4} {:>14} {:>14} {:>6}", "step", "reflux mu±sd", "digest mu±sd", "truth");
    for (t, ((mu, sd), y)) in forecast.mu.iter().zip(&forecast.sigma).zip(truth).enumerate() {
        println!(
            "{t:>4} {:>7.2}±{:<6.2} {:>7.2}±{:<6.2} ({}, {})",
            mu[0], sd[0], mu[1], sd[1], y.reflux, y.digestion
        );
    }
    Ok(())
}
