use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ratvoi::cli::{cmd_run, cmd_sweep, emit_config, load_table, parse_config, parse_sweep};

#[derive(Parser)]
#[command(
    name = "ratvoi",
    version,
    about = "Budget-constrained measurement selection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print a CSV header and row.
    Run {
        #[command(flatten)]
        input: Input,
        /// Print the effective configuration instead of running.
        #[arg(long)]
        print_config: bool,
    },
    /// Run every (c_v, selector) cell of a sweep and print a CSV table.
    Sweep {
        #[command(flatten)]
        input: Input,
    },
}

#[derive(Args)]
struct Input {
    /// TOML file with configuration keys.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set budget=0.5`. Repeatable.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Run {
            input,
            print_config,
        } => load_table(input.config.as_deref(), &input.set)
            .and_then(|t| parse_config(&t))
            .and_then(|cfg| {
                if print_config {
                    write!(out, "{}", emit_config(&cfg)).map_err(Into::into)
                } else {
                    cmd_run(&cfg, &mut out)
                }
            }),
        Command::Sweep { input } => load_table(input.config.as_deref(), &input.set)
            .and_then(|t| parse_sweep(&t))
            .and_then(|spec| cmd_sweep(&spec, &mut out)),
    };
    match result.and_then(|()| out.flush().map_err(Into::into)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
