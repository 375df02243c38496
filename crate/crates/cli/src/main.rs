use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use declab_cli::config::RunConfig;
use declab_cli::report::{diff_reports, write_slopegraph, Report};
use declab_cli::sweep::{check, recompute, run_sweep, RunError, RunOptions};

/// Decoding-strategy and uncertainty sweeps with prediction-rejection reports.
#[derive(Parser)]
#[command(name = "declab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a sweep and write the report files.
    Run {
        config: PathBuf,
        /// Decoding threads; forced to 1 for single-session models.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (holds the journal and the reports).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check configuration, datasets, model capabilities and scorers
    /// without decoding.
    Validate { config: PathBuf },
    /// Recompute the reports from an existing journal.
    Prr {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Bootstrap resamples (0 disables).
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        bootstrap_seed: Option<u64>,
    },
    /// Compare the PRR of two reports and write slopegraph data.
    Diff {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn load(path: &PathBuf, opts: &RunOptions) -> Result<RunConfig, RunError> {
    let mut cfg = RunConfig::load(path)?;
    opts.apply(&mut cfg);
    Ok(cfg)
}

fn report_path(p: PathBuf) -> PathBuf {
    if p.is_dir() {
        p.join(declab_cli::report::REPORT_JSON)
    } else {
        p
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run {
            config,
            workers,
            seed,
            out,
        } => {
            let cfg = load(
                &config,
                &RunOptions {
                    workers,
                    seed,
                    output_dir: out,
                },
            )?;
            let s = run_sweep(&cfg)?;
            println!(
                "decoded {} units, scored {} outputs, {} of {} units quarantined; reports in {}",
                s.decoded,
                s.scored,
                s.report.header.units_quarantined,
                s.report.header.units_total,
                s.output_dir.display()
            );
        }
        Command::Validate { config } => {
            let cfg = load(&config, &RunOptions::default())?;
            let plan = check(&cfg)?;
            println!(
                "ok: {} datasets, {} units",
                plan.datasets.len(),
                plan.unit_count()
            );
        }
        Command::Prr {
            config,
            out,
            trials,
            bootstrap_seed,
        } => {
            let mut cfg = load(
                &config,
                &RunOptions {
                    output_dir: out,
                    ..RunOptions::default()
                },
            )?;
            if let Some(t) = trials {
                cfg.bootstrap.trials = t;
            }
            if bootstrap_seed.is_some() {
                cfg.bootstrap.seed = bootstrap_seed;
            }
            let r = recompute(&cfg)?;
            println!("{} rows written to {}", r.rows.len(), cfg.output_dir.display());
        }
        Command::Diff { a, b, out } => {
            let read = |p: PathBuf| {
                let p = report_path(p);
                Report::load(&p).map_err(|source| RunError::Io {
                    context: format!("reading {}", p.display()),
                    source,
                })
            };
            let s = diff_reports(&read(a)?, &read(b)?);
            write_slopegraph(&out, &s).map_err(|source| RunError::Io {
                context: format!("writing to {}", out.display()),
                source,
            })?;
            for k in &s.only_in_a {
                eprintln!("only in first report: {k:?}");
            }
            for k in &s.only_in_b {
                eprintln!("only in second report: {k:?}");
            }
            println!("{} paired rows written to {}", s.entries.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
