use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use catrack::config::{ExperimentConfig, Sweep};
use catrack::experiment::{run_experiment, run_once, run_sweep, Setup};
use catrack::output::{write_frames, write_mospa_t_series, write_runs, write_series, write_table, write_tracks};
use catrack::validation::run_suite;
use catrack_core::simulator::ConfusionRegime;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "catrack",
    version,
    about = "Class-aided multisensor multitarget tracking experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Number of Monte Carlo runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Base seed; run i uses seed + i.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of sensors, 1 or 2.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..=2))]
    sensors: Option<u64>,
    /// Mean clutter count per sensor and scan.
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true, value_parser = ["1", "2", "3", "6"])]
    classes: Option<String>,
    /// fixed_diag or fixed_offdiag.
    #[arg(long, global = true)]
    regime: Option<ConfusionRegime>,
    /// Output directory for CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time-averaged metrics of both trackers over the configured sweep.
    Table {
        /// Overrides `experiment.sweep` from the configuration.
        #[arg(long, value_enum)]
        sweep: Option<Sweep>,
    },
    /// Per-step MOSPA-T of both trackers averaged over runs.
    Series,
    /// One run with full track and measurement dump.
    Single,
    /// Oracle and invariant checks.
    Validate {
        /// Seeded cases per invariant.
        #[arg(long, default_value_t = 32)]
        cases: u64,
    },
}

impl Cli {
    fn load_config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.runs {
            c.experiment.num_runs = v;
        }
        if let Some(v) = self.seed {
            c.experiment.base_seed = v;
        }
        if let Some(v) = self.sensors {
            c.scenario.sensors = v as usize;
        }
        if let Some(v) = self.mu {
            c.sensor.clutter_mean = v;
            if c.experiment.sweep == Sweep::Clutter {
                c.experiment.sweep = Sweep::None;
            }
        }
        if let Some(v) = &self.classes {
            c.scenario.classes = v.parse().context("--classes")?;
            if c.experiment.sweep == Sweep::Classes {
                c.experiment.sweep = Sweep::None;
            }
        }
        if let Some(v) = self.regime {
            c.scenario.regime = v;
        }
        if let Some(v) = &self.out {
            c.experiment.out_dir = Some(v.clone());
        }
        if let Some(v) = self.workers {
            c.experiment.workers = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn out_dir(config: &ExperimentConfig) -> Result<Option<&Path>> {
    match config.experiment.out_dir.as_deref() {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn table(mut config: ExperimentConfig, sweep: Option<Sweep>) -> Result<()> {
    if let Some(s) = sweep {
        config.experiment.sweep = s;
    }
    let points = run_sweep(&config)?;
    println!(
        "{:<9} {:>2} {:>5} {:>2} {:<14} {:>8} {:>8} {:>9} {:>8}",
        "tracker", "S", "mu", "C", "regime", "MGOSPA", "MOSPA", "MOSPA-T", "FAR"
    );
    let rows: Vec<_> = points.iter().flat_map(|p| p.rows()).collect();
    for r in &rows {
        println!(
            "{:<9} {:>2} {:>5} {:>2} {:<14} {:>8.2} {:>8.2} {:>9.2} {:>8.3}",
            r.tracker,
            r.sensors,
            r.clutter_mean,
            r.classes,
            r.regime,
            r.report.mgospa,
            r.report.mospa,
            r.report.mospa_t,
            r.report.far
        );
    }
    if let Some(dir) = out_dir(&config)? {
        write_table(&dir.join("table.csv"), &rows)?;
        for p in &points {
            write_runs(&dir.join(format!("runs_{}.csv", p.tag())), &p.result.runs)?;
        }
    }
    Ok(())
}

fn series(config: ExperimentConfig) -> Result<()> {
    if !config.experiment.run_baseline {
        bail!("series compares both trackers; set experiment.run_baseline = true");
    }
    let result = run_experiment(&config)?;
    let baseline = result.baseline.as_ref().context("baseline result missing")?;
    match out_dir(&config)? {
        Some(dir) => {
            write_mospa_t_series(&dir.join("mospa_t_series.csv"), baseline, &result.proposed)?;
            write_series(&dir.join("series_baseline.csv"), baseline)?;
            write_series(&dir.join("series_proposed.csv"), &result.proposed)?;
            println!("wrote series for {} runs to {}", result.runs.len(), dir.display());
        }
        None => {
            println!("n,baseline_mospa_t_m,proposed_mospa_t_m");
            for (i, (b, p)) in baseline
                .ospa_t_series
                .iter()
                .zip(&result.proposed.ospa_t_series)
                .enumerate()
            {
                println!("{},{b},{p}", i + 1);
            }
        }
    }
    Ok(())
}

fn single(config: ExperimentConfig) -> Result<()> {
    let dir = out_dir(&config)?.context("single writes CSV files; pass --out DIR")?;
    let setup = Setup::from_config(&config)?;
    let seed = config.experiment.base_seed;
    let outcome = run_once(&setup, 0, seed, true)?;
    write_frames(&dir.join("frames.csv"), 0, &outcome.frames)?;
    write_tracks(
        &dir.join("tracks_proposed.csv"),
        0,
        "proposed",
        &outcome.proposed_tracks,
    )?;
    write_series(&dir.join("series_proposed.csv"), &outcome.proposed)?;
    let p = &outcome.proposed;
    println!(
        "proposed  MGOSPA {:.2} MOSPA {:.2} MOSPA-T {:.2} FAR {:.3}",
        p.mgospa, p.mospa, p.mospa_t, p.far
    );
    if let Some(b) = &outcome.baseline {
        write_tracks(
            &dir.join("tracks_baseline.csv"),
            0,
            "baseline",
            &outcome.baseline_tracks,
        )?;
        write_series(&dir.join("series_baseline.csv"), b)?;
        println!(
            "baseline  MGOSPA {:.2} MOSPA {:.2} MOSPA-T {:.2} FAR {:.3}",
            b.mgospa, b.mospa, b.mospa_t, b.far
        );
    }
    Ok(())
}

fn validate(cases: u64) -> Result<bool> {
    let checks = run_suite(cases)?;
    for c in &checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate { cases } => validate(cases),
        Command::Table { sweep } => table(cli.load_config()?, sweep).map(|_| true),
        Command::Series => series(cli.load_config()?).map(|_| true),
        Command::Single => single(cli.load_config()?).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
