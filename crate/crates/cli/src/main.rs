use clap::{Parser, Subcommand, ValueEnum};
use s2fp8_cli::{checkgrad, config, experiment, formats_table, quantize, CliError};
use std::path::PathBuf;

/// Tensor truncation and training experiments with the shifted-and-squeezed
/// FP8 format.
#[derive(Parser)]
#[command(name = "s2fp8", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the exact range/precision table for FP8, FP16, BF16 and FP32
    Formats,
    /// Truncate an S2T1 tensor file in FP8 or S2FP8 and report the error
    Quantize {
        /// Input tensor file (S2T1)
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Transformed peak exponent for s2fp8 mode
        #[arg(long = "target-max", default_value_t = 15.0)]
        target_max: f64,
        /// Output file
        #[arg(long)]
        out: PathBuf,
        /// Output container: s2t1 holds the truncated tensor, s2f8 the
        /// encoded codes plus factors (s2fp8 mode only)
        #[arg(long, value_enum, default_value_t = ContainerArg::S2t1)]
        container: ContainerArg,
    },
    /// Run the training runs described by a JSON config, writing
    /// metrics.csv and summary.json
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Check FP32 backprop gradients against central finite differences
    Checkgrad {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fp8,
    S2fp8,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ContainerArg {
    S2t1,
    S2f8,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Formats => {
            print!("{}", formats_table::render());
            Ok(())
        }
        Command::Quantize {
            input,
            mode,
            target_max,
            out,
            container,
        } => {
            let mode = match mode {
                ModeArg::Fp8 => quantize::QuantizeMode::Fp8,
                ModeArg::S2fp8 => quantize::QuantizeMode::S2fp8,
            };
            let container = match container {
                ContainerArg::S2t1 => quantize::Container::S2t1,
                ContainerArg::S2f8 => quantize::Container::S2f8,
            };
            let report = quantize::run_quantize(&input, mode, target_max, &out, container)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::Train { config, out_dir } => {
            let cfg = config::load_config(&config)?;
            let summary = experiment::run_experiment(&cfg, &out_dir)?;
            for run in &summary.runs {
                let acc = run
                    .final_val_acc
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "-".to_string());
                let delta = run
                    .delta_vs_fp32
                    .map(|v| format!(" (delta vs fp32 {v:+.4})"))
                    .unwrap_or_default();
                println!(
                    "run {}: mode {} status {} steps {} val_acc {acc}{delta}",
                    run.id, run.mode, run.status, run.steps
                );
            }
            println!("wrote {}", out_dir.join("metrics.csv").display());
            println!("wrote {}", out_dir.join("summary.json").display());
            Ok(())
        }
        Command::Checkgrad { config } => {
            let cfg = config::load_config(&config)?;
            let report = checkgrad::run_checkgrad(&cfg)?;
            print!("{}", checkgrad::render(&report));
            Ok(())
        }
    }
}
