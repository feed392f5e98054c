use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jcep::config::{ExperimentConfig, Profile};
use jcep::{experiment, io, replay, summary, Error};

#[derive(Parser)]
#[command(name = "jcep", version, about = "Channel estimation and prediction experiments")]
struct Cli {
    /// Worker threads for trial-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Base parameter set; overrides the configuration's `profile`.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the sweep described by a TOML configuration.
    Run { config: PathBuf },
    /// Aggregate a result CSV per sweep value and estimator.
    Summarize {
        csv: PathBuf,
        /// Write the aggregate CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run one data row (0-based) of a result CSV and compare.
    Replay {
        csv: PathBuf,
        #[arg(long)]
        row: usize,
    },
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.cmd {
        Cmd::Run { config } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::from_toml(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            if let Some(p) = cli.profile {
                cfg.profile = p;
                cfg.validate()?;
            }
            let out = experiment::run_experiment(&cfg, cli.workers)?;
            let manifest = io::build_manifest(&cfg, &text, cli.workers)?;
            let path = io::write_outputs(&cfg.output_dir, &out, &manifest)?;
            let diverged = out.rows.iter().filter(|r| r.divergence).count();
            eprintln!("wrote {} rows to {} ({diverged} diverged)", out.rows.len(), path.display());
            Ok(true)
        }
        Cmd::Summarize { csv, out } => {
            let rows = summary::summarize(&io::read_rows_file(&csv)?)?;
            match out {
                Some(p) => summary::write_summary(std::fs::File::create(p)?, &rows)?,
                None => summary::write_summary(std::io::stdout().lock(), &rows)?,
            }
            Ok(true)
        }
        Cmd::Replay { csv, row } => {
            let rep = replay::replay(&csv, row)?;
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            w.serialize(&rep.recorded)?;
            w.serialize(&rep.replayed)?;
            w.flush()?;
            let ok = rep.matches();
            eprintln!("{}", if ok { "replay matches" } else { "replay MISMATCH" });
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
