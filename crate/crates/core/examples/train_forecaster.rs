//! Generates a small foundation cohort, trains the seq2seq forecaster on it
//! and fine-tunes a copy for one held-out patient.
//!
//! `cargo run --release --example train_forecaster -- [out.bin]`

use std::path::PathBuf;

use gmpc::bnn::save_weights;
use gmpc::config::Config;
use gmpc::harness::{finetune_patient, generate_foundation_dataset, train_foundation};

fn small_config() -> gmpc::Result<Config> {
    Config::from_json(
        r#"{
  "bnn": {"hidden": 16, "t_hist": 24, "t_fut": 24, "train": {"max_epochs": 25}, "finetune": {"max_epochs": 15}},
  "mpc": {"horizon_days": 1},
  "harness": {"foundation_patients": 4, "foundation_days": 20, "finetune_days": 10, "window_stride": 6}
}"#,
    )
}

fn main() -> gmpc::Result<()> {
    let cfg = small_config()?;
    let seed = 5;
    let data = generate_foundation_dataset(&cfg, cfg.harness.foundation_patients, cfg.harness.foundation_days, seed)?;
    println!("{} patients, {} windows", data.episodes.len(), data.window_total());

    let (foundation, history) = train_foundation(&cfg, &data.windows, data.norm, seed)?;
    for e in &history.epochs {
        println!("epoch {:>3}  train {:.5}  val {:.5}  lr {:.1e}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    println!("best epoch {:?}, validation loss {:.5}", history.best_epoch, history.best_val_loss);

    let (tuned, ft) = finetune_patient(&cfg, &foundation, 0, seed)?;
    println!("fine-tuned test patient 0: validation loss {:.5}", ft.best_val_loss);

    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("gmpc_patient0.bin"), PathBuf::from);
    save_weights(&tuned, &out)?;
    println!("saved {} parameters to {}", tuned.params.len(), out.display());
    Ok(())
}
