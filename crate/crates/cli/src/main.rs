//! `phaselock`: run scenarios, replay recorded traces, calibrate the mirror.
//!
//! Exit status: 0 on success, 1 when `--check` finds a failing criterion,
//! 2 on any error (bad config, unreadable trace, I/O).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use phaselock::config::{AnalysisSection, ScenarioConfig};
use phaselock::mirror::write_calibration_csv;
use phaselock::numfmt::sig9;
use phaselock::scenario::{calibration_table, replay, run_scenario, Summary};

#[derive(Parser)]
#[command(
    name = "phaselock",
    version,
    about = "Membrane-mirror phase lock simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config
    Run {
        config: PathBuf,
        /// Exit nonzero if any criterion fails
        #[arg(long)]
        check: bool,
        /// Override `scenario.seed`
        #[arg(long)]
        seed: Option<u64>,
        /// Override `scenario.output_dir`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute statistics and spectrum of a trace CSV
    Replay {
        trace: PathBuf,
        /// Upper edge of the low-frequency band [Hz]
        #[arg(long, default_value_t = 1e-3)]
        cutoff: f64,
        /// Keep the mean in the spectrum
        #[arg(long)]
        raw: bool,
    },
    /// Fix the membrane tension and tabulate every command level
    Calibrate {
        config: PathBuf,
        /// Exit nonzero if any level misses the flatness threshold
        #[arg(long)]
        check: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every checked criterion passed.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            check,
            seed,
            out,
        } => {
            let (mut cfg, text) = ScenarioConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.scenario.seed = seed;
            }
            let dir = out.unwrap_or_else(|| cfg.scenario.output_dir.clone());
            let outcome = run_scenario(&cfg, &text, &dir)
                .with_context(|| format!("running {}", config.display()))?;
            print_summary(&outcome.summary, &dir)?;
            Ok(!check || outcome.summary.pass)
        }
        Command::Replay { trace, cutoff, raw } => {
            let analysis = AnalysisSection {
                cutoff_hz: cutoff,
                subtract_mean: !raw,
                ..AnalysisSection::default()
            };
            let report = replay(&trace, &analysis)?;
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, &report)?;
            writeln!(stdout)?;
            Ok(true)
        }
        Command::Calibrate { config, check, out } => {
            let (cfg, _) = ScenarioConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.scenario.output_dir.clone());
            let (cal, rows) = calibration_table(&cfg)?;
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("calibration.csv");
            let mut buf = Vec::new();
            write_calibration_csv(&rows, &mut buf)?;
            std::fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
            let failing = rows.iter().filter(|r| !r.meets_threshold).count();
            let worst = rows.iter().map(|r| r.rms1.max(r.rms2)).fold(0.0, f64::max);
            println!(
                "tension {} N/m ({})",
                sig9(cal.tension),
                if cal.tension_calibrated {
                    "calibrated"
                } else {
                    "configured"
                }
            );
            println!(
                "worst plane rms {} m, {failing} of {} levels over threshold",
                sig9(worst),
                rows.len()
            );
            println!("[mirror]\ntension = {}", sig9(cal.tension));
            println!("wrote {}", path.display());
            Ok(!check || failing == 0)
        }
    }
}

fn print_summary(summary: &Summary, dir: &Path) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{} seed {}", summary.kind.as_str(), summary.seed)?;
    for c in &summary.criteria {
        let value = c.value.map(sig9).unwrap_or_else(|| "n/a".into());
        writeln!(
            out,
            "{} {} = {} ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            value,
            c.limit
        )?;
    }
    writeln!(
        out,
        "overall {}",
        if summary.pass { "PASS" } else { "FAIL" }
    )?;
    writeln!(out, "artifacts in {}", dir.display())?;
    Ok(())
}
