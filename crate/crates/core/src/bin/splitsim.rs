use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splitsim::cli::{cmd_analyze, cmd_compare, cmd_gen_data, cmd_sweep, cmd_train, ExperimentConfig};
use splitsim::{Error, Result};

#[derive(Parser)]
#[command(name = "splitsim", version, about = "Centralized, federated and split learning simulator")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one protocol over every seed.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-epoch relative error and regression between two reports.
    Compare { a: PathBuf, b: PathBuf },
    /// Privacy budget and client-side efficiency of the configured split.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Client sample count.
        #[arg(long)]
        n_c: Option<u64>,
        /// Parameter count to use instead of the model's.
        #[arg(long)]
        n_w: Option<u64>,
    },
    /// Client-count by samples-per-client grid for two protocols.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the configured datasets as containers.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf, seeds: &Option<Vec<u64>>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seeds {
        cfg.seeds = s.clone();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Vec<String>> {
    let out = &cli.out;
    let listed = |paths: Vec<PathBuf>| paths.iter().map(|p| format!("wrote {}", p.display())).collect();
    match &cli.command {
        Command::Train { config } => {
            let cfg = load(config, &cli.seeds)?;
            let (reports, paths) = cmd_train(&cfg, out)?;
            let mut lines: Vec<String> = reports
                .iter()
                .map(|r| {
                    let m = r.final_metrics();
                    format!(
                        "{} seed {}: accuracy {:.4} f1 {:.4}, {} messages, {} bytes",
                        r.protocol, r.config.seed, m.accuracy, m.f1, r.transcript.total.messages, r.transcript.total.bytes
                    )
                })
                .collect();
            lines.extend(listed(paths));
            Ok(lines)
        }
        Command::Compare { a, b } => {
            let (cmp, path) = cmd_compare(a, b, out)?;
            let mut lines: Vec<String> = cmp
                .metrics
                .iter()
                .map(|(name, m)| match &m.fit {
                    Some(f) => format!("{name}: slope {:.4} r2 {:.4}", f.slope, f.r2),
                    None => format!("{name}: no fit (constant reference)"),
                })
                .collect();
            lines.push(format!("wrote {}", path.display()));
            Ok(lines)
        }
        Command::Analyze { config, n_c, n_w } => {
            let cfg = load(config, &cli.seeds)?;
            let (p, e, paths) = cmd_analyze(&cfg, *n_c, *n_w, out)?;
            let mut lines = vec![p.table(), e.table()];
            lines.extend(listed(paths));
            Ok(lines)
        }
        Command::Sweep { config } => {
            let cfg = load(config, &cli.seeds)?;
            let (_, paths) = cmd_sweep(&cfg, out)?;
            Ok(listed(paths))
        }
        Command::GenData { config } => {
            let cfg = load(config, &cli.seeds)?;
            Ok(listed(cmd_gen_data(&cfg, out)?))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(lines) => {
            if !cli.quiet {
                // a closed pipe (e.g. `| head`) is not an error worth reporting
                let mut out = std::io::stdout().lock();
                for l in lines {
                    if writeln!(out, "{}", l.trim_end()).is_err() {
                        break;
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("splitsim: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
