//! End-to-end benchmark at toy scale: foundation training, per-patient
//! fine-tuning, fixed-regimen calibration, MPC vs fixed closed loop, and
//! the evaluation summary.
//!
//! `cargo run --release --example closed_loop`

use gmpc::config::Config;
use gmpc::harness::{benchmark_report, calibrate_fixed_dose, closed_loop_cohort, finetune_cohort, generate_foundation_dataset, open_loop_cohort, train_foundation};

fn main() -> gmpc::Result<()> {
    let cfg = Config::from_json(
        r#"{
  "bnn": {"hidden": 16, "t_hist": 24, "t_fut": 24, "train": {"max_epochs": 20}, "finetune": {"max_epochs": 10}},
  "mpc": {"horizon_days": 1, "mc_passes": 10, "scenarios": 3},
  "harness": {"foundation_patients": 4, "foundation_days": 20, "test_patients": 2, "finetune_days": 10,
              "open_loop_days": 5, "closed_loop_days": 10, "warmup_days": 2, "window_stride": 6,
              "calibration_patients": 5, "calibration_days": 10}
}"#,
    )?;
    let seed = 2;

    let data = generate_foundation_dataset(&cfg, cfg.harness.foundation_patients, cfg.harness.foundation_days, seed)?;
    let (foundation, _) = train_foundation(&cfg, &data.windows, data.norm, seed)?;
    let models = finetune_cohort(&cfg, &foundation, seed)?;
    let open_loop = open_loop_cohort(&cfg, &models, seed)?;

    let calibration = calibrate_fixed_dose(&cfg, seed)?;
    println!("fixed regimen: {:.2} per day (requirements {:?})", calibration.daily_dose, calibration.requirements);

    let runs = closed_loop_cohort(&cfg, &models, calibration.daily_dose, seed)?;
    let report = benchmark_report(&cfg, seed, &runs, &open_loop)?;
    report.write_csv(std::io::stdout())?;
    if let Some(s) = &report.summary {
        println!("total usage reduction {:.1}%", 100.0 * s.total_usage_reduction);
    }
    Ok(())
}
