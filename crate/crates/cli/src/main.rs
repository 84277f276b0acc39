use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kaf_core::data::{lorenz_generate, write_csv};
use kaf_core::eval::{offdiag_energy_of, read_gram, run_experiment, ExperimentConfig, ExperimentKind, Predictions};
use kaf_core::Error;

/// Kernel adaptive filter training and evaluation.
#[derive(Parser)]
#[command(name = "kaf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the first Lorenz channel to a `t,value` CSV file.
    LorenzGen {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Fit the model offline on leading segments and predict the rest.
    FitOffline(ExperimentArgs),
    /// Pre-trained KLMS against a novelty-KLMS baseline of equal size.
    PretrainKlms(ExperimentArgs),
    /// Standard KLMS.
    Klms(ExperimentArgs),
    /// Sliding-window estimation with forgetting-factor blending.
    Adaptive(ExperimentArgs),
    /// KLMS learning-rate sweep over a log grid.
    SweepLr(ExperimentArgs),
    /// MSE (and Gram off-diagonal energy) of existing output files.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// First series index included in the MSE.
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long)]
        gram: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set adaptive.rho=0.8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Read the series from this CSV file instead of generating it.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn load(common: &ConfigArgs, extra: Vec<String>) -> Result<ExperimentConfig, Error> {
    let mut overrides = common.overrides.clone();
    overrides.extend(extra);
    match &common.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => ExperimentConfig::parse("", &overrides),
    }
}

fn quoted(s: &std::path::Path) -> String {
    // TOML basic string; backslashes and quotes escaped.
    let s = s.display().to_string().replace('\\', "\\\\").replace('"', "\\\"");
    format!("\"{s}\"")
}

fn experiment(kind: ExperimentKind, args: ExperimentArgs) -> Result<(), Error> {
    let mut extra = vec![format!("experiment.kind=\"{}\"", kind.name())];
    if let Some(seed) = args.seed {
        extra.push(format!("experiment.seed={seed}"));
    }
    if let Some(out) = &args.out {
        extra.push(format!("experiment.output_dir={}", quoted(out)));
    }
    if let Some(data) = &args.data {
        extra.push("data.source=\"csv\"".into());
        extra.push(format!("data.path={}", quoted(data)));
    }
    let cfg = load(&args.common, extra)?;
    let report = run_experiment(&cfg)?;
    let energy = report
        .gram_offdiag_energy
        .map_or_else(|| "n/a".to_string(), |e| format!("{e:.6}"));
    println!(
        "{}: mse {:.6} dict_size {} gram_offdiag_energy {} ({:.2}s)",
        kind.name(),
        report.mse,
        report.dict_size,
        energy,
        report.runtime_seconds
    );
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::LorenzGen { out, common } => {
            let cfg = load(&common, vec![])?;
            let series = lorenz_generate(&cfg.lorenz)?;
            write_csv(&series, &out)?;
            println!("wrote {} samples to {}", series.len(), out.display());
            Ok(())
        }
        Command::FitOffline(a) => experiment(ExperimentKind::FitOffline, a),
        Command::PretrainKlms(a) => experiment(ExperimentKind::PretrainKlms, a),
        Command::Klms(a) => experiment(ExperimentKind::Klms, a),
        Command::Adaptive(a) => experiment(ExperimentKind::Adaptive, a),
        Command::SweepLr(a) => experiment(ExperimentKind::SweepLr, a),
        Command::Eval {
            predictions,
            start,
            gram,
        } => {
            let p = Predictions::read(&predictions)?;
            let mut out = serde_json::json!({ "mse": p.mse_from(start)?, "start": start });
            if let Some(g) = gram {
                out["gram_offdiag_energy"] = offdiag_energy_of(&read_gram(&g)?)?.into();
            }
            println!("{out}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
