use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iwshift_core::data::read_points_csv;
use iwshift_core::metrics::max_margin_2d;
use iwshift_core::{cifar, Result};
use iwshift_harness::config::{ExperimentConfig, Scale};
use iwshift_harness::run::{run_experiment, RunOptions};
use iwshift_harness::{fetch, Overrides};

#[derive(Parser)]
#[command(name = "iwshift", version, about = "Importance-weighting experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (weight, seed) run of a config and write traces.
    Run {
        config: PathBuf,
        #[arg(long)]
        scale: Option<Scale>,
        /// Comma-separated seeds replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// CIFAR-10 batch directory; defaults to $IWSHIFT_DATA_DIR or data/cifar-10-batches-bin.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Download, verify and unpack the CIFAR-10 binary archive into DIR.
    FetchCifar {
        dir: PathBuf,
        /// Use an already downloaded archive instead of the network.
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Reference computations.
    Oracle {
        #[command(subcommand)]
        which: Oracle,
    },
    /// Parse and resolve a config without running it.
    Validate {
        config: PathBuf,
        #[arg(long)]
        scale: Option<Scale>,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// Exact max-margin separator of an `x1,x2,label` CSV.
    MaxMargin { csv: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            scale,
            seeds,
            out,
            data_dir,
        } => {
            let overrides = Overrides {
                scale,
                seeds,
                output_dir: out,
            };
            let cfg = overrides.apply(ExperimentConfig::load(&config)?);
            let resolved = cfg.resolve()?;
            let opts = RunOptions {
                data_dir: data_dir.unwrap_or_else(cifar::data_dir),
            };
            let summary = run_experiment(&resolved, &opts)?;
            println!(
                "wrote {} traces, {} grids and {} to {}",
                summary.traces.len(),
                summary.grids.len(),
                summary.manifest.display(),
                summary.output_dir.display()
            );
        }
        Command::FetchCifar { dir, archive } => {
            let batches = fetch::fetch_cifar(&dir, archive.as_deref())?;
            println!("CIFAR-10 batches in {}", batches.display());
        }
        Command::Oracle {
            which: Oracle::MaxMargin { csv },
        } => {
            let (points, labels) = read_points_csv(std::fs::File::open(csv)?)?;
            match max_margin_2d(&points, &labels)? {
                Some(s) => println!("{}", s.to_text()),
                None => println!("{{\"separable\": false}}"),
            }
        }
        Command::Validate { config, scale } => {
            let cfg = Overrides {
                scale,
                ..Overrides::default()
            }
            .apply(ExperimentConfig::load(&config)?);
            let r = cfg.resolve()?;
            println!(
                "{}: ok ({} conditions x {} seeds, {} parameters)",
                cfg.name,
                r.condition_count(),
                cfg.seeds.len(),
                r.model.parameter_count()
            );
        }
    }
    Ok(())
}
