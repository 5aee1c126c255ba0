use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use sentinel_core::data::{ingest_csv, ColumnMapping, Dataset};
use sentinel_core::design::SamplingDesign;
use sentinel_core::estimate::{EstimateReport, Method};
use sentinel_core::harness::{
    load_dataset, method_design, method_estimate, run_campaign, write_report, ExperimentConfig,
};
use sentinel_core::simulate::{
    read_outcomes_csv, realized_cost, simulate_round, write_outcomes_csv,
};
use sentinel_core::verify::{verify_theory, VerifyConfig};
use sentinel_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "sentinel",
    version,
    about = "Sentinel-audited labeling designs, simulation and inference"
)]
struct Cli {
    /// TOML config file. `verify-theory` reads suite sizes; the other commands read an experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Single-file commands print to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for a sampling design and write it as JSON.
    Design {
        /// Prediction CSV; defaults to the config's data source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        budget: f64,
        #[arg(long, default_value = "ours")]
        method: Method,
    },
    /// Run one labeling round under a design and write the outcomes CSV.
    Simulate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        design: PathBuf,
    },
    /// Estimate the mean label from one round of outcomes.
    Estimate {
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long, default_value = "ours")]
        method: Method,
    },
    /// Run a full Monte Carlo campaign and write the report and CSV tables.
    Experiment {
        /// Overrides the config's replication count.
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Run the theory-verification suites.
    VerifyTheory,
}

enum Failure {
    Invalid(Error),
    Runtime(Error),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Domain(_)
            | Error::Data(_)
            | Error::Parse { .. }
            | Error::Infeasible(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => Failure::Invalid(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn dataset(cfg: &ExperimentConfig, data: &Option<PathBuf>) -> Result<Dataset, Error> {
    match data {
        Some(path) => ingest_csv(path, &ColumnMapping::default()),
        None => load_dataset(cfg, cfg.seed),
    }
}

fn read_design(path: &Path) -> Result<SamplingDesign, Error> {
    let file = File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Opens `name` inside `--out`, or stdout.
fn sink(out: &Option<PathBuf>, name: &str) -> Result<Box<dyn Write>, Error> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            info!("writing {}", path.display());
            Ok(Box::new(File::create(path)?))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn write_json<T: serde::Serialize>(
    out: &Option<PathBuf>,
    name: &str,
    value: &T,
) -> Result<(), Error> {
    let mut w = sink(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Design {
            data,
            budget,
            method,
        } => {
            let cfg = experiment_config(cli)?;
            let ds = dataset(&cfg, data)?;
            let design = method_design(&cfg, &ds, *method, *budget, cfg.seed)?;
            info!(
                "{method} design: rho {}, expected cost {}",
                design.rho(),
                design.expected_cost
            );
            write_json(&cli.out, "design.json", &design)?;
        }
        Command::Simulate { data, design } => {
            let cfg = experiment_config(cli)?;
            let ds = dataset(&cfg, data)?;
            let design = read_design(design)?;
            let outcomes = simulate_round(&ds, &design, &cfg.effort, cfg.seed)?;
            info!("realized cost {}", realized_cost(&outcomes, &design));
            write_outcomes_csv(&outcomes, sink(&cli.out, "outcomes.csv")?)?;
        }
        Command::Estimate {
            outcomes,
            design,
            method,
        } => {
            let cfg = experiment_config(cli)?;
            let design = read_design(design)?;
            let outcomes = read_outcomes_csv(File::open(outcomes).map_err(Error::from)?)?;
            if outcomes.len() != design.len() {
                return Err(Failure::Invalid(Error::Data(format!(
                    "{} outcomes for a design over {} instances",
                    outcomes.len(),
                    design.len()
                ))));
            }
            let est = method_estimate(&cfg, *method, &outcomes, &design)?;
            let report = EstimateReport::new(&est, realized_cost(&outcomes, &design), &design);
            write_json(&cli.out, "estimate.json", &report)?;
        }
        Command::Experiment { replications } => {
            let mut cfg = experiment_config(cli)?;
            if let Some(m) = replications {
                cfg.replications = *m;
            }
            let dir = cfg
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("results"));
            let report = run_campaign(&cfg)?;
            write_report(&report, &dir)?;
            for cell in &report.cells {
                println!(
                    "{:<10} B={:<8} width={:.4} coverage={:.3} cost={:.2}{}",
                    cell.method.name(),
                    cell.budget,
                    cell.mean_width,
                    cell.coverage,
                    cell.mean_cost,
                    cell.error
                        .as_deref()
                        .map(|e| format!(" error: {e}"))
                        .unwrap_or_default()
                );
            }
            println!("report written to {}", dir.display());
        }
        Command::VerifyTheory => {
            let mut cfg = match &cli.config {
                Some(path) => VerifyConfig::from_path(path)?,
                None => VerifyConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let report = verify_theory(&cfg)?;
            for suite in &report.suites {
                let stats: Vec<String> = suite
                    .measured
                    .iter()
                    .map(|(k, v)| format!("{k}={v:.6e}"))
                    .collect();
                println!(
                    "{} {} {}",
                    if suite.passed { "PASS" } else { "FAIL" },
                    suite.name,
                    stats.join(" ")
                );
            }
            if let Some(dir) = &cli.out {
                write_json(&Some(dir.clone()), "verification.json", &report)?;
            }
            if !report.all_passed {
                return Err(Failure::Verification);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}
