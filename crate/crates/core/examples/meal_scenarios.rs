//! Draws meal scenarios as the controller sees them and compares their
//! average intake with the configured expectation.

use gmpc::meals::{sample_scenarios, MealConfig, HOURS_PER_DAY};

fn main() -> gmpc::Result<()> {
    let config = MealConfig::default();
    let scenarios = sample_scenarios(5, 3, &config, 42)?;
    for (j, s) in scenarios.iter().enumerate() {
        let peaks: Vec<usize> = (1..s.len() - 1).filter(|&h| s[h] > s[h - 1] && s[h] >= s[h + 1] && s[h] > 0.1).collect();
        println!("scenario {j}: peak hours {peaks:?}");
    }

    let many = sample_scenarios(2000, 1, &config, 43)?;
    let mean = many.iter().flatten().sum::<f64>() / (many.len() * HOURS_PER_DAY) as f64;
    println!("mean hourly intake {mean:.4}, expected {:.4}", config.expected_daily_intake());
    Ok(())
}
