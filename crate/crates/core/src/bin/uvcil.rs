use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uvcil::experiment::{self, ExperimentConfig, Variant};
use uvcil::features::{self, Manifest};
use uvcil::synthetic::{self, MixtureSpec};
use uvcil::Error;

#[derive(Parser)]
#[command(
    name = "uvcil",
    version,
    about = "Unsupervised class-incremental learning runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-mixture dataset.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment. Flags override values from the config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        fold: Option<u32>,
    },
    /// Merge per-stage accuracy curves of finished runs into one CSV.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a feature file against its manifest.
    Validate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| Error::Config(format!("{}: {e}", spec.display())))?;
            let spec: MixtureSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", spec.display())))?;
            let mixture = synthetic::generate_mixture(&spec)?;
            mixture.save(&out)?;
            println!(
                "wrote {} vectors of dim {} to {}",
                mixture.features.count(),
                mixture.features.dim(),
                out.display()
            );
        }
        Command::Run {
            config,
            out,
            seed,
            variant,
            epochs,
            fold,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = Some(out);
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if fold.is_some() {
                cfg.fold = fold;
            }
            let report = experiment::run_experiment(&cfg)?;
            println!("{}", report.to_json());
        }
        Command::Report { runs, out } => {
            let csv = experiment::report_curves(&runs)?;
            std::fs::write(&out, csv)
                .map_err(|e| Error::Validation(format!("{}: {e}", out.display())))?;
        }
        Command::Validate { features, manifest } => {
            let set = features::load_feature_set(&features)?;
            let manifest = Manifest::load(&manifest)?;
            let report = features::validate_manifest(&manifest, &set);
            for f in &report.findings {
                println!("{f}");
            }
            if !report.is_clean() {
                return Err(Error::Validation(format!(
                    "{} findings",
                    report.findings.len()
                )));
            }
            println!(
                "ok: {} vectors, dim {}, {} manifest entries",
                set.count(),
                set.dim(),
                manifest.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = std::env::var("UVCIL_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        if let Err(e) = uvcil::configure_threads(threads) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
