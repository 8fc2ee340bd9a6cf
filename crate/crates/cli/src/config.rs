//! Experiment configuration read from TOML with dotted keys, e.g.
//! `sensor.sigma_range_m = 5.0`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use catrack_core::association::BpOptions;
use catrack_core::engine::SpaParams;
use catrack_core::metrics::MetricParams;
use catrack_core::simulator::{ConfusionRegime, ScenarioOptions, ScenarioVariant, TrackerModelOptions};
use serde::{Deserialize, Serialize};

/// Which scenario parameter a `table` run varies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// The configured scenario only.
    #[default]
    None,
    /// Clutter mean over 5, 10, 20.
    Clutter,
    /// Number of classes over 1, 2, 3, 6.
    Classes,
}

pub const CLUTTER_LEVELS: [f64; 3] = [5.0, 10.0, 20.0];
pub const CLASS_COUNTS: [usize; 4] = [1, 2, 3, 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub num_runs: usize,
    pub base_seed: u64,
    /// Worker threads for Monte Carlo runs; 0 uses all cores.
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    /// Also run the tracker with classifier factors replaced by one.
    pub run_baseline: bool,
    pub sweep: Sweep,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            num_runs: 200,
            base_seed: 1,
            workers: 0,
            out_dir: None,
            run_baseline: true,
            sweep: Sweep::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub classes: usize,
    pub sensors: usize,
    pub regime: ConfusionRegime,
    pub variant: ScenarioVariant,
    pub class_stay_prob: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            classes: 3,
            sensors: 1,
            regime: ConfusionRegime::FixedDiag,
            variant: ScenarioVariant::Short,
            class_stay_prob: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    pub sigma_range_m: f64,
    pub sigma_bearing_deg: f64,
    pub detection_prob: f64,
    pub clutter_mean: f64,
    pub circle_radius_m: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        Self {
            sigma_range_m: 5.0,
            sigma_bearing_deg: 0.1,
            detection_prob: 0.9,
            clutter_mean: 20.0,
            circle_radius_m: 3000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub num_pts: usize,
    pub particles: usize,
    pub birth_particles: usize,
    pub bp_iterations: usize,
    pub bp_tolerance: f64,
    pub detection_threshold: f64,
    pub survival_prob: f64,
    pub birth_prob: f64,
    pub birth_velocity_std_mps: f64,
    pub accel_std_mps2: f64,
    pub gate_sq: f64,
    pub classifier_enabled: bool,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let spa = SpaParams::default();
        let models = TrackerModelOptions::default();
        Self {
            num_pts: spa.num_pts,
            particles: spa.particles,
            birth_particles: spa.birth_particles,
            bp_iterations: spa.bp.max_iterations,
            bp_tolerance: spa.bp.tolerance,
            detection_threshold: spa.detection_threshold,
            survival_prob: models.survival_prob,
            birth_prob: models.birth_prob,
            birth_velocity_std_mps: models.birth_velocity_std,
            accel_std_mps2: models.accel_std,
            gate_sq: spa.gate_sq,
            classifier_enabled: spa.classifier_enabled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSection {
    pub order: f64,
    pub cutoff_m: f64,
    pub label_penalty_m: f64,
    pub far_gate_m: f64,
}

impl Default for MetricSection {
    fn default() -> Self {
        Self {
            order: 1.0,
            cutoff_m: 20.0,
            label_penalty_m: 20.0,
            far_gate_m: 20.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub scenario: ScenarioSection,
    pub sensor: SensorSection,
    pub tracker: TrackerSection,
    pub metrics: MetricSection,
}

fn check(ok: bool, field: &str, requirement: &str) -> Result<()> {
    if !ok {
        bail!("{field} {requirement}");
    }
    Ok(())
}

fn probability(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).context("parsing configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        check(e.num_runs >= 1, "experiment.num_runs", "must be at least 1")?;
        let s = &self.scenario;
        check(
            [1, 2, 3, 6].contains(&s.classes),
            "scenario.classes",
            "must be one of 1, 2, 3, 6",
        )?;
        check((1..=2).contains(&s.sensors), "scenario.sensors", "must be 1 or 2")?;
        check(
            probability(s.class_stay_prob),
            "scenario.class_stay_prob",
            "must lie in [0, 1]",
        )?;
        let m = &self.sensor;
        check(m.sigma_range_m > 0.0, "sensor.sigma_range_m", "must be positive")?;
        check(
            m.sigma_bearing_deg > 0.0,
            "sensor.sigma_bearing_deg",
            "must be positive",
        )?;
        check(
            probability(m.detection_prob),
            "sensor.detection_prob",
            "must lie in [0, 1]",
        )?;
        check(
            m.clutter_mean >= 0.0 && m.clutter_mean.is_finite(),
            "sensor.clutter_mean",
            "must be non-negative",
        )?;
        check(m.circle_radius_m > 0.0, "sensor.circle_radius_m", "must be positive")?;
        let t = &self.tracker;
        check(t.num_pts >= 6, "tracker.num_pts", "must cover the six scenario targets")?;
        check(t.particles >= 1, "tracker.particles", "must be at least 1")?;
        check(t.birth_particles >= 1, "tracker.birth_particles", "must be at least 1")?;
        check(t.bp_iterations >= 1, "tracker.bp_iterations", "must be at least 1")?;
        check(t.bp_tolerance >= 0.0, "tracker.bp_tolerance", "must be non-negative")?;
        check(
            probability(t.detection_threshold),
            "tracker.detection_threshold",
            "must lie in [0, 1]",
        )?;
        check(
            probability(t.survival_prob),
            "tracker.survival_prob",
            "must lie in [0, 1]",
        )?;
        check(probability(t.birth_prob), "tracker.birth_prob", "must lie in [0, 1]")?;
        check(
            t.birth_velocity_std_mps >= 0.0,
            "tracker.birth_velocity_std_mps",
            "must be non-negative",
        )?;
        check(
            t.accel_std_mps2 >= 0.0,
            "tracker.accel_std_mps2",
            "must be non-negative",
        )?;
        check(t.gate_sq > 0.0, "tracker.gate_sq", "must be positive")?;
        let q = &self.metrics;
        check(q.order >= 1.0, "metrics.order", "must be at least 1")?;
        check(q.cutoff_m > 0.0, "metrics.cutoff_m", "must be positive")?;
        check(
            q.label_penalty_m >= 0.0,
            "metrics.label_penalty_m",
            "must be non-negative",
        )?;
        check(q.far_gate_m > 0.0, "metrics.far_gate_m", "must be positive")?;
        Ok(())
    }

    /// One configuration per point of the sweep, in sweep order.
    pub fn expand_sweep(&self) -> Vec<ExperimentConfig> {
        match self.experiment.sweep {
            Sweep::None => vec![self.clone()],
            Sweep::Clutter => CLUTTER_LEVELS
                .iter()
                .map(|&mu| {
                    let mut c = self.clone();
                    c.sensor.clutter_mean = mu;
                    c.experiment.sweep = Sweep::None;
                    c
                })
                .collect(),
            Sweep::Classes => CLASS_COUNTS
                .iter()
                .map(|&classes| {
                    let mut c = self.clone();
                    c.scenario.classes = classes;
                    c.experiment.sweep = Sweep::None;
                    c
                })
                .collect(),
        }
    }

    pub fn scenario_options(&self) -> ScenarioOptions {
        ScenarioOptions {
            classes: self.scenario.classes,
            sensors: self.scenario.sensors,
            clutter_mean: self.sensor.clutter_mean,
            regime: self.scenario.regime,
            variant: self.scenario.variant,
            detection_prob: self.sensor.detection_prob,
            sigma_range: self.sensor.sigma_range_m,
            sigma_bearing_deg: self.sensor.sigma_bearing_deg,
            sensor_radius: self.sensor.circle_radius_m,
            class_stay_prob: self.scenario.class_stay_prob,
            seed: self.experiment.base_seed,
        }
    }

    pub fn spa_params(&self) -> SpaParams {
        let t = &self.tracker;
        SpaParams {
            num_pts: t.num_pts,
            particles: t.particles,
            birth_particles: t.birth_particles,
            bp: BpOptions {
                max_iterations: t.bp_iterations,
                tolerance: t.bp_tolerance,
            },
            detection_threshold: t.detection_threshold,
            classifier_enabled: t.classifier_enabled,
            gate_sq: t.gate_sq,
        }
    }

    pub fn tracker_model_options(&self) -> TrackerModelOptions {
        let t = &self.tracker;
        TrackerModelOptions {
            accel_std: t.accel_std_mps2,
            survival_prob: t.survival_prob,
            birth_prob: t.birth_prob,
            birth_velocity_std: t.birth_velocity_std_mps,
        }
    }

    pub fn metric_params(&self, roi_area_km2: f64, step_s: f64) -> MetricParams {
        MetricParams {
            order: self.metrics.order,
            cutoff: self.metrics.cutoff_m,
            label_penalty: self.metrics.label_penalty_m,
            far_gate: self.metrics.far_gate_m,
            roi_area_km2,
            step_s,
        }
    }
}
