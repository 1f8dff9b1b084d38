use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use dirichlet_euler::experiments::{run_to_dir, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dirichlet-euler", version, about = "Error calculus experiments for the Euler scheme")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for report.json and CSV files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config and the derivatives of its model without simulating.
    Validate { config: PathBuf },
}

fn load(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            cfg.validate()?;
            println!("{}: ok ({})", config.display(), cfg.experiment.name());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => {
            let mut cfg = load(&config)?;
            if seed.is_some() {
                cfg.seed = seed;
            }
            if let Some(k) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                    .context("configuring the thread pool")?;
            }
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()));
            let report = match run_to_dir(&cfg, &out) {
                Ok(r) => r,
                Err(e) => {
                    // leave a machine-readable record of the failure
                    let record = serde_json::json!({
                        "experiment": cfg.experiment.name(),
                        "error": e.to_string(),
                        "passed": false,
                    });
                    std::fs::create_dir_all(&out).ok();
                    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&record)?).ok();
                    return Err(e.into());
                }
            };
            for c in &report.criteria {
                println!("{c}");
            }
            println!(
                "{}: {} ({} criteria) -> {}",
                report.experiment,
                if report.passed { "PASS" } else { "FAIL" },
                report.criteria.len(),
                out.display()
            );
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
