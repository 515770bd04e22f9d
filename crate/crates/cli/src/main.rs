use std::path::PathBuf;
use std::process::ExitCode;

use cartan_core::catalog;
use cartan_core::scenario::{self, Format, Report, RunOptions};
use clap::{Parser, Subcommand, ValueEnum};

/// Run verification scenarios for Lie algebroids with Cartan connections.
#[derive(Parser)]
#[command(name = "cartan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Format {
        match f {
            OutputFormat::Text => Format::Text,
            OutputFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and print its report.
    Run {
        file: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
        /// Multiply every tolerance by this factor.
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
        /// Also write the JSON report to this file.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Record wall-clock time per check (reports stop being reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// List the catalog models and the bundled scenarios.
    ListExamples,
    /// Print a bundled scenario.
    Example { name: String },
    /// Re-export a saved JSON report.
    Export {
        report: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
}

const CHECK_FAILED: u8 = 1;
const USAGE: u8 = 2;

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(USAGE)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            file,
            seed,
            format,
            tol_scale,
            output,
            timings,
        } => {
            let opts = RunOptions { seed, tol_scale, timings };
            let report = match scenario::run_file(&file, &opts) {
                Ok(r) => r,
                Err(e) => return fail(format!("{}: {e}", file.display())),
            };
            if let Some(out) = output {
                if let Err(e) = std::fs::write(&out, report.to_json()) {
                    return fail(format!("{}: {e}", out.display()));
                }
            }
            print!("{}", report.export(format.into()));
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(CHECK_FAILED)
            }
        }
        Command::ListExamples => {
            println!("catalog models:");
            for name in catalog::CATALOG {
                println!("  {name:<20} {}", catalog::describe(name).unwrap_or_default());
            }
            println!("bundled scenarios (print one with `cartan example NAME`):");
            for (name, _) in scenario::BUNDLED {
                println!("  {name}");
            }
            ExitCode::SUCCESS
        }
        Command::Example { name } => match scenario::BUNDLED.iter().find(|(n, _)| *n == name) {
            Some((_, src)) => {
                print!("{src}");
                ExitCode::SUCCESS
            }
            None => fail(format!("no bundled scenario `{name}`")),
        },
        Command::Export { report, format } => {
            let src = match std::fs::read_to_string(&report) {
                Ok(s) => s,
                Err(e) => return fail(format!("{}: {e}", report.display())),
            };
            match Report::from_json(&src) {
                Ok(r) => {
                    print!("{}", r.export(format.into()));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(format!("{}: {e}", report.display())),
            }
        }
    }
}
