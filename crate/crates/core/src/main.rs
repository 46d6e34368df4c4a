use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use afcsim::experiment::{self, ExperimentError, OutputFormat, Overrides};

#[derive(Parser)]
#[command(name = "afcsim", version, about = "AFC spin-wave memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset by name or a TOML config file.
    Run {
        /// Preset name or path to a config file.
        target: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; beats AFCSIM_OUT_DIR and the config value.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Photon-counting trials per report row.
        #[arg(long)]
        trials: Option<u64>,
        /// Spins in Monte Carlo ensembles.
        #[arg(long)]
        spins: Option<usize>,
    },
    /// List the built-in presets.
    Presets,
    /// Print a preset's parameters, or the shared defaults for `base`.
    Show { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn run(command: Command) -> Result<(), ExperimentError> {
    match command {
        Command::Run {
            target,
            seed,
            out,
            format,
            trials,
            spins,
        } => {
            let env_out = std::env::var_os(experiment::OUT_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from);
            let overrides = Overrides {
                seed,
                output_dir: out.or(env_out),
                format: format.map(|f| match f {
                    Format::Csv => OutputFormat::Csv,
                    Format::Json => OutputFormat::Json,
                }),
                trials,
                spins,
            };
            let cfg = experiment::load(&target, &overrides)?;
            let summary = experiment::run_experiment(&cfg)?;
            for f in &summary.files {
                println!("{}", summary.output_dir.join(f).display());
            }
        }
        Command::Presets => {
            for name in experiment::preset_names() {
                println!("{name}");
            }
        }
        Command::Show { name } => {
            let src = if name == "base" {
                experiment::base_source()
            } else {
                experiment::preset_source(&name).ok_or_else(|| ExperimentError::UnknownPreset {
                    name,
                    valid: experiment::preset_names(),
                })?
            };
            print!("{src}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
