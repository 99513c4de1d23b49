use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kalmanopt::data::{make_gaussian_blobs, make_two_moons};
use kalmanopt::harness::train::{run_parallel, seed_dir, worker_slots};
use kalmanopt::harness::verify::format_table;
use kalmanopt::harness::{cmd_diagnose, cmd_train, exit_code, run_verify, RunConfig, RunFailure, Settings};
use kalmanopt::Error;

#[derive(Parser)]
#[command(name = "kalmanopt", version, about = "Kalman-filter optimizer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration (or several seeds) and write metrics.csv and manifest.json.
    Train(RunArgs),
    /// Run the full oracle and invariant battery.
    Verify,
    /// Train with per-step diagnostics and write diagnostics.csv and summary.json.
    Diagnose(RunArgs),
    /// Write a synthetic dataset to CSV.
    GenerateData(GenerateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    #[value(name = "two_moons")]
    TwoMoons,
    #[value(name = "gaussian_blobs")]
    GaussianBlobs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    kind: DataKind,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Two-moons noise std.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 3)]
    centers: usize,
    /// Blob std.
    #[arg(long, default_value_t = 0.5)]
    std: f64,
    #[arg(long)]
    out: PathBuf,
}

fn fail(error: &Error) -> ExitCode {
    eprintln!("error: {error}");
    ExitCode::from(exit_code(error))
}

fn resolve(args: &RunArgs) -> Result<Settings, Error> {
    let mut layers = Vec::new();
    if let Some(path) = &args.config {
        layers.push(Settings::from_file(path)?);
    }
    layers.push(args.settings.clone());
    Ok(Settings::resolve_layers(&layers))
}

fn report_failure(failure: &RunFailure, out: &std::path::Path) -> ExitCode {
    if failure.snapshot.is_some() {
        eprintln!("snapshot written to {}", out.join("failure.json").display());
    }
    fail(&failure.error)
}

fn train(args: &RunArgs) -> ExitCode {
    let settings = match resolve(args) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let seeds = settings.seeds.clone().unwrap_or_default();
    if seeds.is_empty() {
        return train_one(&Settings { seeds: None, ..settings });
    }
    let base_out = settings.out.clone().unwrap_or_default();
    let jobs: Vec<Settings> = seeds
        .iter()
        .map(|&seed| Settings {
            seed: Some(seed),
            seeds: None,
            out: Some(seed_dir(&base_out, seed)),
            ..settings.clone()
        })
        .collect();
    // validate everything before starting any run
    let mut configs = Vec::with_capacity(jobs.len());
    for job in &jobs {
        match RunConfig::from_settings(job) {
            Ok(cfg) => configs.push(cfg),
            Err(e) => return fail(&e),
        }
    }
    let results = run_parallel(&seeds, worker_slots(), |seed| {
        let i = seeds.iter().position(|&s| s == seed).expect("seed listed");
        cmd_train(&configs[i], &jobs[i])
    });
    let mut status = ExitCode::SUCCESS;
    let mut errors = Vec::new();
    for (cfg, result) in configs.iter().zip(&results) {
        match result {
            Ok(run) => {
                print_final(cfg, &run.final_metrics);
                if let Some(e) = run.final_metrics.top1_err_pct {
                    errors.push(e);
                }
            }
            Err(failure) => status = report_failure(failure, &cfg.out),
        }
    }
    if errors.len() == seeds.len() {
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        println!("mean final top1_err_pct over {} seeds: {mean:.3}", errors.len());
    }
    status
}

fn print_final(cfg: &RunConfig, m: &kalmanopt::harness::train::FinalMetrics) {
    let err = m.top1_err_pct.map_or_else(|| "n/a".to_string(), |e| format!("{e:.3}"));
    let val = m.val_loss.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6e}"));
    println!(
        "seed {}: train_loss {:.6e} val_loss {val} top1_err_pct {err} -> {}",
        cfg.seed,
        m.train_loss,
        cfg.out.display()
    );
}

fn train_one(settings: &Settings) -> ExitCode {
    let cfg = match RunConfig::from_settings(settings) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match cmd_train(&cfg, settings) {
        Ok(run) => {
            print_final(&cfg, &run.final_metrics);
            ExitCode::SUCCESS
        }
        Err(failure) => report_failure(&failure, &cfg.out),
    }
}

fn diagnose(args: &RunArgs) -> ExitCode {
    let cfg = match resolve(args).and_then(|s| RunConfig::from_settings(&s)) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match cmd_diagnose(&cfg) {
        Ok((_, summary)) => {
            println!(
                "{} steps, acute fraction {:.4}, floor hits {} -> {}",
                summary.steps,
                summary.acute_fraction,
                summary.floor_hits,
                cfg.out.join("diagnostics.csv").display()
            );
            ExitCode::SUCCESS
        }
        Err(failure) => report_failure(&failure, &cfg.out),
    }
}

fn generate(args: &GenerateArgs) -> ExitCode {
    let dataset = match args.kind {
        DataKind::TwoMoons => make_two_moons(args.n, args.noise, args.seed),
        DataKind::GaussianBlobs => make_gaussian_blobs(args.n, args.centers, args.std, args.seed),
    };
    match dataset.and_then(|d| d.write_csv(&args.out).map(|_| d.len())) {
        Ok(rows) => {
            println!("wrote {rows} rows to {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn verify() -> ExitCode {
    let results = run_verify();
    print!("{}", format_table(&results));
    if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(args) => train(args),
        Command::Verify => verify(),
        Command::Diagnose(args) => diagnose(args),
        Command::GenerateData(args) => generate(args),
    }
}
