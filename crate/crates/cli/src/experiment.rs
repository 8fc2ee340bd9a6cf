//! Seeded Monte Carlo runs of simulate → track → score.

use anyhow::{Context, Result};
use catrack_core::engine::{SpaParams, SpaTracker, TrackerModels};
use catrack_core::estimator::TrackEstimate;
use catrack_core::metrics::{MetricParams, MetricReport, PointSet};
use catrack_core::simulator::{build_scenario, generate_run, tracker_rng, MeasurementFrame, Scenario};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::TableRow;

/// Everything a run needs that does not depend on its seed.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scenario: Scenario,
    pub models: TrackerModels,
    pub params: SpaParams,
    pub metrics: MetricParams,
    pub run_baseline: bool,
}

impl Setup {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let scenario = build_scenario(&config.scenario_options()).context("building scenario")?;
        let models = scenario
            .tracker_models(&config.tracker_model_options())
            .context("building tracker models")?;
        let metrics = config.metric_params(scenario.roi_area_km2(), scenario.step_s);
        Ok(Self {
            scenario,
            models,
            params: config.spa_params(),
            metrics,
            run_baseline: config.experiment.run_baseline,
        })
    }

    pub fn baseline_params(&self) -> SpaParams {
        SpaParams {
            classifier_enabled: false,
            ..self.params
        }
    }
}

/// Track estimates for every step `1..=num_steps`.
pub fn run_tracker(
    frames: &[Vec<MeasurementFrame>],
    models: &TrackerModels,
    params: SpaParams,
    run_seed: u64,
) -> Result<Vec<Vec<TrackEstimate>>> {
    let mut tracker = SpaTracker::with_rng(models.clone(), params, tracker_rng(run_seed))?;
    let mut out = Vec::with_capacity(frames.len());
    for step in frames {
        let scans: Vec<_> = step.iter().map(|f| f.measurements.clone()).collect();
        tracker
            .step(&scans)
            .with_context(|| format!("tracker step {}", tracker.time() + 1))?;
        out.push(tracker.estimates());
    }
    Ok(out)
}

pub fn estimate_sets(tracks: &[Vec<TrackEstimate>]) -> Vec<PointSet> {
    tracks
        .iter()
        .map(|step| {
            let mut set = PointSet::new();
            for e in step {
                set.push(e.position, Some(e.label));
            }
            set
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: usize,
    pub seed: u64,
    pub proposed: MetricReport,
    pub baseline: Option<MetricReport>,
    /// Filled only when tracks were requested.
    pub proposed_tracks: Vec<Vec<TrackEstimate>>,
    pub baseline_tracks: Vec<Vec<TrackEstimate>>,
    pub frames: Vec<Vec<MeasurementFrame>>,
}

pub fn run_once(setup: &Setup, run: usize, seed: u64, keep_details: bool) -> Result<RunOutcome> {
    let frames = generate_run(&setup.scenario, seed);
    let truth = setup.scenario.truth_sets();
    let proposed_tracks = run_tracker(&frames, &setup.models, setup.params, seed)?;
    let proposed = MetricReport::evaluate(&truth, &estimate_sets(&proposed_tracks), &setup.metrics)?;
    let (baseline, baseline_tracks) = if setup.run_baseline {
        let tracks = run_tracker(&frames, &setup.models, setup.baseline_params(), seed)?;
        let report = MetricReport::evaluate(&truth, &estimate_sets(&tracks), &setup.metrics)?;
        (Some(report), tracks)
    } else {
        (None, Vec::new())
    };
    Ok(RunOutcome {
        run,
        seed,
        proposed,
        baseline,
        proposed_tracks: if keep_details { proposed_tracks } else { Vec::new() },
        baseline_tracks: if keep_details { baseline_tracks } else { Vec::new() },
        frames: if keep_details { frames } else { Vec::new() },
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub proposed: MetricReport,
    pub baseline: Option<MetricReport>,
    /// Ordered by run index.
    pub runs: Vec<RunOutcome>,
}

/// Runs `num_runs` seeded runs (seed = base seed + run index) on a pool of
/// `workers` threads and averages the time-averaged metrics over runs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let setup = Setup::from_config(config)?;
    run_with_setup(
        &setup,
        config.experiment.num_runs,
        config.experiment.base_seed,
        config.experiment.workers,
    )
}

pub fn run_with_setup(setup: &Setup, num_runs: usize, base_seed: u64, workers: usize) -> Result<ExperimentResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")?;
    let runs: Vec<RunOutcome> = pool.install(|| {
        (0..num_runs)
            .into_par_iter()
            .map(|i| {
                let outcome = run_once(setup, i, base_seed + i as u64, false);
                log::info!("run {} of {num_runs} done", i + 1);
                outcome
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let proposed: Vec<_> = runs.iter().map(|r| r.proposed.clone()).collect();
    let baseline: Vec<_> = runs.iter().filter_map(|r| r.baseline.clone()).collect();
    Ok(ExperimentResult {
        proposed: MetricReport::average(&proposed).context("no runs")?,
        baseline: MetricReport::average(&baseline),
        runs,
    })
}

/// One point of a sweep with its result.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub config: ExperimentConfig,
    pub result: ExperimentResult,
}

impl SweepPoint {
    /// File-name friendly identifier, e.g. `s1_mu20_c3_fixed_diag`.
    pub fn tag(&self) -> String {
        format!(
            "s{}_mu{}_c{}_{}",
            self.config.scenario.sensors,
            self.config.sensor.clutter_mean,
            self.config.scenario.classes,
            self.config.scenario.regime.name()
        )
    }

    pub fn rows(&self) -> Vec<TableRow> {
        let c = &self.config;
        let row = |tracker, report: &MetricReport| TableRow {
            tracker,
            sensors: c.scenario.sensors,
            clutter_mean: c.sensor.clutter_mean,
            classes: c.scenario.classes,
            regime: c.scenario.regime.name().to_string(),
            runs: self.result.runs.len(),
            report: report.clone(),
        };
        let mut rows: Vec<TableRow> = self.result.baseline.iter().map(|b| row("baseline", b)).collect();
        rows.push(row("proposed", &self.result.proposed));
        rows
    }
}

/// Runs every point of the configured sweep in order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    config
        .expand_sweep()
        .into_iter()
        .map(|config| {
            log::info!(
                "sweep point: S={} mu={} C={} {}",
                config.scenario.sensors,
                config.sensor.clutter_mean,
                config.scenario.classes,
                config.scenario.regime.name()
            );
            let result = run_experiment(&config)?;
            Ok(SweepPoint { config, result })
        })
        .collect()
}
