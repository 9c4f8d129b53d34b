//! `afc`: command-line front end for the AFC memory simulators.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use toml::Value as TomlValue;

use crate::commands::Artifacts;
use crate::config::{CliError, CliResult, Experiment};

#[derive(Parser)]
#[command(name = "afc", version, about = "Simulate and analyse atomic-frequency-comb quantum memories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set sequence.n_loop=40`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for artifact files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized commands.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic AFC efficiency for a comb.
    Efficiency {
        #[command(flatten)]
        common: Common,
        /// Comb height above the background (OD).
        #[arg(long, allow_negative_numbers = true)]
        d: Option<f64>,
        /// Finesse.
        #[arg(long = "F", allow_negative_numbers = true)]
        finesse: Option<f64>,
        /// Background OD.
        #[arg(long, allow_negative_numbers = true)]
        d0: Option<f64>,
    },
    /// Echo time for a tooth spacing.
    StorageTime {
        #[command(flatten)]
        common: Common,
        /// Tooth spacing (Hz).
        #[arg(long, allow_negative_numbers = true)]
        delta: Option<f64>,
    },
    /// Optical pumping of an inhomogeneous line.
    PumpSim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_loop: Option<u32>,
        /// In-loop delay (s).
        #[arg(long, allow_negative_numbers = true)]
        in_loop_delay: Option<f64>,
        /// Also run the same pulses back to back.
        #[arg(long)]
        compare_continuous: bool,
    },
    /// Time-domain pulse propagation through comb windows.
    EchoSim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        passes: Option<u32>,
    },
    /// Seeded random search over pump parameters.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Process tomography reconstruction.
    Tomo {
        #[command(flatten)]
        common: Common,
        /// Measured table (CSV with header input,H,V,D,R).
        #[arg(long)]
        table: Option<PathBuf>,
        /// Simulated process: identity, sigma_x, sigma_y, sigma_z, depolarizing, random.
        #[arg(long)]
        process: Option<String>,
        #[arg(long, allow_negative_numbers = true)]
        noise_sigma: Option<f64>,
    },
    /// Waveplate compensation solver.
    Polar {
        #[command(flatten)]
        common: Common,
        /// TILTED_HWP_SANDWICH or HWP_QWP_HWP.
        #[arg(long)]
        configuration: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Exponential decay or Lorentzian hole fits.
    Fit {
        #[command(flatten)]
        common: Common,
        /// exponential or lorentzian.
        #[arg(long)]
        model: Option<String>,
        /// Two-column data file.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n_terms: Option<usize>,
        #[arg(long)]
        n_side_pairs: Option<usize>,
    },
    /// Zeeman splitting and phonon density.
    Physics {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        g: Option<f64>,
        /// Magnetic field (T); repeatable.
        #[arg(long = "b", allow_negative_numbers = true)]
        fields: Vec<f64>,
        /// Temperature (K); repeatable.
        #[arg(long = "temperature", allow_negative_numbers = true)]
        temperatures: Vec<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Efficiency { .. } => "efficiency",
            Command::StorageTime { .. } => "storage-time",
            Command::PumpSim { .. } => "pump-sim",
            Command::EchoSim { .. } => "echo-sim",
            Command::Scan { .. } => "scan",
            Command::Tomo { .. } => "tomo",
            Command::Polar { .. } => "polar",
            Command::Fit { .. } => "fit",
            Command::Physics { .. } => "physics",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Efficiency { common, .. }
            | Command::StorageTime { common, .. }
            | Command::PumpSim { common, .. }
            | Command::EchoSim { common, .. }
            | Command::Scan { common, .. }
            | Command::Tomo { common, .. }
            | Command::Polar { common, .. }
            | Command::Fit { common, .. }
            | Command::Physics { common, .. } => common,
        }
    }

    /// Writes the command-specific flags over the file values.
    fn apply_flags(&self, exp: &mut Experiment) -> CliResult<()> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let floats = |v: &[f64]| TomlValue::Array(v.iter().map(|x| TomlValue::Float(*x)).collect());
        match self {
            Command::Efficiency { d, finesse, d0, .. } => {
                exp.set_opt("d", *d)?;
                exp.set_opt("finesse", *finesse)?;
                exp.set_opt("d0", *d0)
            }
            Command::StorageTime { delta, .. } => exp.set_opt("delta_hz", *delta),
            Command::PumpSim {
                n_loop,
                in_loop_delay,
                compare_continuous,
                ..
            } => {
                exp.set_opt("sequence.n_loop", n_loop.map(i64::from))?;
                exp.set_opt("sequence.in_loop_delay_s", *in_loop_delay)?;
                if *compare_continuous {
                    exp.set("compare_continuous", true)?;
                }
                Ok(())
            }
            Command::EchoSim { passes, .. } => exp.set_opt("passes", passes.map(i64::from)),
            Command::Scan { trials, .. } => exp.set_opt("trials", trials.map(|t| t as i64)),
            Command::Tomo {
                table,
                process,
                noise_sigma,
                ..
            } => {
                exp.set_opt("table", path(table))?;
                exp.set_opt("process", process.clone())?;
                exp.set_opt("noise_sigma", *noise_sigma)
            }
            Command::Polar {
                configuration,
                samples,
                ..
            } => {
                exp.set_opt("configuration", configuration.as_ref().map(|c| c.to_uppercase().replace('-', "_")))?;
                exp.set_opt("samples", samples.map(|s| s as i64))
            }
            Command::Fit {
                model,
                data,
                n_terms,
                n_side_pairs,
                ..
            } => {
                exp.set_opt("model", model.clone())?;
                exp.set_opt("data", path(data))?;
                exp.set_opt("n_terms", n_terms.map(|n| n as i64))?;
                exp.set_opt("n_side_pairs", n_side_pairs.map(|n| n as i64))
            }
            Command::Physics {
                g,
                fields,
                temperatures,
                ..
            } => {
                exp.set_opt("g", *g)?;
                if !fields.is_empty() {
                    exp.set("fields_t", floats(fields))?;
                }
                if !temperatures.is_empty() {
                    exp.set("temperatures_k", floats(temperatures))?;
                }
                Ok(())
            }
        }
    }
}

fn run(command: &Command) -> CliResult<Value> {
    let common = command.common();
    let mut exp = Experiment::load(common.config.as_deref())?;
    exp.apply_overrides(&common.overrides)?;
    command.apply_flags(&mut exp)?;

    let name = command.name();
    let out_dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("afc-out").join(name));
    let mut artifacts = Artifacts::new(&out_dir);
    let seed = common.seed;
    let fields = match command {
        Command::Efficiency { .. } => commands::efficiency(&exp)?,
        Command::StorageTime { .. } => commands::storage(&exp)?,
        Command::PumpSim { .. } => commands::pump_sim(&exp, &mut artifacts)?,
        Command::EchoSim { .. } => commands::echo_sim(&exp, &mut artifacts)?,
        Command::Scan { .. } => commands::scan(&exp, seed, &mut artifacts)?,
        Command::Tomo { .. } => commands::tomo(&exp, seed, &mut artifacts)?,
        Command::Polar { .. } => commands::polar(&exp, seed, &mut artifacts)?,
        Command::Fit { .. } => commands::fit(&exp, &mut artifacts)?,
        Command::Physics { .. } => commands::physics(&exp, &mut artifacts)?,
    };
    let written = artifacts.finish(name, seed, exp.table())?;

    let mut summary = serde_json::Map::new();
    summary.insert("command".into(), json!(name));
    summary.insert("status".into(), json!("ok"));
    summary.extend(fields);
    summary.insert("artifacts".into(), json!(written));
    Ok(Value::Object(summary))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config(e.to_string().trim_end().to_string());
            eprintln!("{}", err.report());
            return ExitCode::from(2);
        }
    };
    match run(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.report());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
