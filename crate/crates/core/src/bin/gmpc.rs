use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gmpc::bnn::{extract_windows, load_weights, save_weights, Normalization, WindowSample};
use gmpc::config::Config;
use gmpc::harness::{
    benchmark_report, calibrate_fixed_dose, closed_loop_cohort, evaluate, finetune_cohort, generate_foundation_dataset,
    open_loop_cohort, train_foundation, BenchmarkReport, Calibration, EpisodeRecord, PatientModel,
};
use gmpc::{Error, Result};

#[derive(Parser)]
#[command(name = "gmpc", version, about = "Virtual-patient PPI dosing: data, forecaster training, MPC benchmark")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 2024)]
    seed: u64,
    /// JSON configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Also write simulator ground truth (acid traces, patient parameters).
    #[arg(long, global = true)]
    include_hidden: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the foundation cohort and write episode CSVs.
    GenerateData,
    /// Train the foundation forecaster on the generated episodes.
    Train,
    /// Fine-tune the foundation forecaster for every test patient.
    Finetune,
    /// Open-loop forecast accuracy of the fine-tuned models.
    ValidateOpenLoop,
    /// Calibrate the fixed-regimen daily dose on a calibration cohort.
    Baseline,
    /// MPC versus fixed regimen for every test patient.
    RunClosedLoop,
    /// Summarize a closed-loop report.
    Evaluate,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    days: usize,
    normalization: Normalization,
    episodes: Vec<String>,
    include_hidden: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct OpenLoopSummary {
    patient: usize,
    rmse: [f64; 2],
    noise_floor: [f64; 2],
    irreducible_floor: [f64; 2],
    windows: usize,
}

#[derive(Debug, Serialize)]
struct Evaluation {
    summary: gmpc::harness::Summary,
    total_usage_mpc: f64,
    total_usage_fixed: f64,
    meets_40pct_reduction: bool,
    meets_65pct_reduction_95pct_satisfaction: bool,
}

struct Ctx {
    cfg: Config,
    seed: u64,
    out: PathBuf,
    include_hidden: bool,
}

impl Ctx {
    fn dir(&self, sub: &str) -> Result<PathBuf> {
        let d = self.out.join(sub);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn create(&self, sub: &str, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.dir(sub)?.join(name))?))
    }

    fn write_json<T: Serialize>(&self, sub: &str, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(sub, name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str, hint: &str) -> Result<T> {
        let path = self.out.join(rel);
        let f = File::open(&path).map_err(|e| missing(&path, hint, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    fn patient_model_path(&self, i: usize) -> PathBuf {
        self.out.join("models").join(format!("patient_{i:03}.bin"))
    }

    fn load_patient_models(&self) -> Result<Vec<PatientModel>> {
        (0..self.cfg.harness.test_patients)
            .map(|i| {
                let path = self.patient_model_path(i);
                let weights = load_weights(&path).map_err(|e| match e {
                    Error::Io(io) => missing(&path, "finetune", io),
                    other => other,
                })?;
                Ok(PatientModel { patient: i, weights, history: Default::default() })
            })
            .collect()
    }
}

fn missing(path: &Path, stage: &str, e: std::io::Error) -> Error {
    Error::Config(format!("cannot read {} ({e}); run `{stage}` first", path.display()))
}

fn generate_data(ctx: &Ctx) -> Result<()> {
    let h = &ctx.cfg.harness;
    let ds = generate_foundation_dataset(&ctx.cfg, h.foundation_patients, h.foundation_days, ctx.seed)?;
    let mut names = Vec::new();
    for (i, ep) in ds.episodes.iter().enumerate() {
        let name = format!("foundation_patient_{i:03}.csv");
        ep.write_csv(ctx.create("data", &name)?, ctx.include_hidden)?;
        names.push(name);
    }
    if ctx.include_hidden {
        ctx.write_json("data", "patient_params.json", &ds.params)?;
    }
    let manifest = Manifest {
        seed: ctx.seed,
        days: h.foundation_days,
        normalization: ds.norm,
        episodes: names,
        include_hidden: ctx.include_hidden,
    };
    ctx.write_json("data", "manifest.json", &manifest)?;
    log::info!("wrote {} episodes ({} windows)", ds.episodes.len(), ds.window_total());
    Ok(())
}

fn train(ctx: &Ctx) -> Result<()> {
    let manifest: Manifest = ctx.read_json("data/manifest.json", "generate-data")?;
    if manifest.seed != ctx.seed {
        log::warn!("dataset was generated with seed {}, training with seed {}", manifest.seed, ctx.seed);
    }
    let (b, norm) = (&ctx.cfg.bnn, manifest.normalization);
    let mut groups: Vec<Vec<WindowSample>> = Vec::new();
    for (i, name) in manifest.episodes.iter().enumerate() {
        let ep = EpisodeRecord::read_csv(File::open(ctx.out.join("data").join(name))?, i)?;
        groups.push(extract_windows(&ep.meal, &ep.dose, &ep.symptom_values(), &norm, b.t_hist, b.t_fut, ctx.cfg.harness.window_stride)?);
    }
    let (weights, history) = train_foundation(&ctx.cfg, &groups, norm, ctx.seed)?;
    save_weights(&weights, &ctx.dir("models")?.join("foundation.bin"))?;
    ctx.write_json("models", "foundation_history.json", &history)?;
    log::info!("foundation: {} epochs, best validation {:.5}", history.epochs.len(), history.best_val_loss);
    Ok(())
}

fn finetune(ctx: &Ctx) -> Result<()> {
    let path = ctx.out.join("models").join("foundation.bin");
    let foundation = load_weights(&path).map_err(|e| match e {
        Error::Io(io) => missing(&path, "train", io),
        other => other,
    })?;
    for m in finetune_cohort(&ctx.cfg, &foundation, ctx.seed)? {
        save_weights(&m.weights, &ctx.patient_model_path(m.patient))?;
        ctx.write_json("models", &format!("patient_{:03}_history.json", m.patient), &m.history)?;
    }
    Ok(())
}

fn validate_open_loop(ctx: &Ctx) -> Result<()> {
    let models = ctx.load_patient_models()?;
    let results = open_loop_cohort(&ctx.cfg, &models, ctx.seed)?;
    let mut summary = Vec::new();
    for r in &results {
        r.write_csv(ctx.create("open_loop", &format!("patient_{:03}.csv", r.patient))?)?;
        summary.push(OpenLoopSummary {
            patient: r.patient,
            rmse: r.rmse,
            noise_floor: r.noise_floor.channel,
            irreducible_floor: r.noise_floor.irreducible,
            windows: r.windows,
        });
    }
    ctx.write_json("open_loop", "summary.json", &summary)?;
    println!("patient,rmse_reflux,rmse_digestion,floor_reflux,floor_digestion");
    for s in &summary {
        println!("{},{:.4},{:.4},{:.4},{:.4}", s.patient, s.rmse[0], s.rmse[1], s.noise_floor[0], s.noise_floor[1]);
    }
    Ok(())
}

fn baseline(ctx: &Ctx) -> Result<Calibration> {
    let cal = calibrate_fixed_dose(&ctx.cfg, ctx.seed)?;
    ctx.write_json("baseline", "calibration.json", &cal)?;
    log::info!("fixed-regimen daily dose {} (unreachable: {})", cal.daily_dose, cal.unreachable);
    Ok(cal)
}

fn run_closed_loop(ctx: &Ctx) -> Result<()> {
    let models = ctx.load_patient_models()?;
    let cal: Calibration = if ctx.out.join("baseline/calibration.json").exists() {
        ctx.read_json("baseline/calibration.json", "baseline")?
    } else {
        baseline(ctx)?
    };
    let runs = closed_loop_cohort(&ctx.cfg, &models, cal.daily_dose, ctx.seed)?;
    let report = benchmark_report(&ctx.cfg, ctx.seed, &runs, &[])?;
    let mut w = ctx.create("closed_loop", "report.json")?;
    report.write_json(&mut w)?;
    w.write_all(b"\n")?;
    w.flush()?;
    report.write_csv(ctx.create("closed_loop", "report.csv")?)?;
    for run in &runs {
        run.write_trace_csv(ctx.create("closed_loop", &format!("trace_patient_{:03}.csv", run.report.patient))?, ctx.include_hidden)?;
    }
    Ok(())
}

fn evaluate_report(ctx: &Ctx) -> Result<()> {
    let mut report: BenchmarkReport = ctx.read_json("closed_loop/report.json", "run-closed-loop")?;
    if let Ok(ol) = ctx.read_json::<Vec<OpenLoopSummary>>("open_loop/summary.json", "validate-open-loop") {
        for p in &mut report.patients {
            p.open_loop_rmse = ol.iter().find(|o| o.patient == p.patient).map(|o| o.rmse);
        }
    }
    let summary = evaluate(&report.patients)?;
    let total = |f: fn(&gmpc::harness::PatientReport) -> f64| report.patients.iter().map(f).sum::<f64>();
    let total_mpc = total(|p| p.mpc.as_ref().map_or(0.0, |a| a.usage));
    let total_fixed = total(|p| p.fixed.as_ref().map_or(0.0, |a| a.usage));
    println!("patient,arm,usage,sat_reflux,sat_digestion");
    for p in &report.patients {
        for (name, arm) in [("mpc", &p.mpc), ("fixed", &p.fixed)] {
            if let Some(a) = arm {
                println!("{},{name},{:.3},{:.4},{:.4}", p.patient, a.usage, a.satisfaction[0], a.satisfaction[1]);
            }
        }
    }
    let eval = Evaluation {
        total_usage_mpc: total_mpc,
        total_usage_fixed: total_fixed,
        meets_40pct_reduction: summary.total_usage_reduction >= 0.4,
        meets_65pct_reduction_95pct_satisfaction: summary.total_usage_reduction >= 0.65 && summary.min_satisfaction_mpc >= 0.95,
        summary,
    };
    println!(
        "total usage reduction {:.1}%, min mpc satisfaction {:.1}%",
        100.0 * eval.summary.total_usage_reduction,
        100.0 * eval.summary.min_satisfaction_mpc
    );
    ctx.write_json("", "evaluation.json", &eval)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = Ctx { cfg, seed: cli.seed, out: cli.out_dir, include_hidden: cli.include_hidden };
    fs::create_dir_all(&ctx.out)?;
    match cli.command {
        Command::GenerateData => generate_data(&ctx),
        Command::Train => train(&ctx),
        Command::Finetune => finetune(&ctx),
        Command::ValidateOpenLoop => validate_open_loop(&ctx),
        Command::Baseline => baseline(&ctx).map(|_| ()),
        Command::RunClosedLoop => run_closed_loop(&ctx),
        Command::Evaluate => evaluate_report(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("error kind=usage message={first:?}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
