//! Sweeps the acid level across a patient's thresholds and shows the
//! continuous scores next to a few noisy integer reports.

use gmpc::seed::rng_from;
use gmpc::sim::{sample_patient, ParamBounds};
use gmpc::symptom::{continuous_scores, encode};

fn main() -> gmpc::Result<()> {
    let params = sample_patient(3, &ParamBounds::default())?;
    println!(
        "a_low {:.2}  a_high {:.2}  eta ({:.2}, {:.2})  sigma {:.2}",
        params.a_low, params.a_high, params.eta_r, params.eta_d, params.sigma_noise
    );
    let mut rng = rng_from(3, "reports", 0);
    let top = params.a_high * 1.5;
    println!("{:>6} {:>7} {:>7}  reports (reflux, digestion)", "acid", "S_r", "S_d");
    for k in 0..=20 {
        let acid = top * f64::from(k) / 20.0;
        let [r, d] = continuous_scores(acid, &params);
        let draws: Vec<(u8, u8)> = (0..5)
            .map(|_| {
                let p = encode(acid, &params, &mut rng);
                (p.reflux, p.digestion)
            })
            .collect();
        println!("{acid:>6.3} {r:>7.3} {d:>7.3}  {draws:?}");
    }
    Ok(())
}
