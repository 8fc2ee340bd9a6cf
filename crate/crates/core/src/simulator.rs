//! The six-target crossing scenario and synthetic measurement generation.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::metrics::PointSet;
use crate::model::{
    AugmentedMeasurement, BirthPdf, ClassTransitionMatrix, ClutterClassPmf, ConfusionMatrix, KinematicState,
    ModelError, MotionModel, Roi, SensorModel,
};

/// Names of the six scenario targets, in order of their start angle.
pub const TARGET_NAMES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnOnset {
    /// When the target reaches the center, counted from its birth.
    ClosestApproach,
    /// At a fixed step for every target.
    AtStep(usize),
}

/// Scenario length and target lifetimes: the short variant runs 140 steps
/// with deaths at 120/130, the long one 150 steps with deaths at 140/150.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioVariant {
    #[default]
    Short,
    Long,
}

/// Confusion-matrix families. `FixedDiag` keeps the correct-class
/// probability at 0.85 and spreads 0.15 evenly; `FixedOffDiag` keeps every
/// wrong verdict at 0.10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionRegime {
    #[default]
    FixedDiag,
    #[serde(rename = "fixed_offdiag")]
    FixedOffDiag,
}

impl ConfusionRegime {
    pub fn name(self) -> &'static str {
        match self {
            Self::FixedDiag => "fixed_diag",
            Self::FixedOffDiag => "fixed_offdiag",
        }
    }
}

impl std::str::FromStr for ConfusionRegime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed_diag" => Ok(Self::FixedDiag),
            "fixed_offdiag" => Ok(Self::FixedOffDiag),
            other => Err(format!(
                "unknown regime {other:?}; expected fixed_diag or fixed_offdiag"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    /// First step at which the target exists.
    pub birth: usize,
    /// Last step at which the target exists.
    pub death: usize,
    /// Angle of the start point on the initial circle (rad).
    pub start_angle: f64,
    /// Zero-based class index.
    pub class_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub targets: Vec<TargetSpec>,
    pub roi: Roi,
    pub num_steps: usize,
    /// Step duration (s).
    pub step_s: f64,
    /// Target speed (m/s).
    pub speed: f64,
    /// Radius of the start circle (m).
    pub initial_radius: f64,
    /// Heading change at the turn (rad); negative turns right.
    pub turn_angle: f64,
    pub turn: TurnOnset,
    pub sensors: Vec<SensorModel>,
    pub num_classes: usize,
    pub class_transition: ClassTransitionMatrix,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("unsupported class count {0}; expected 1, 2, 3 or 6")]
    UnsupportedClasses(usize),
    #[error("unsupported sensor count {0}; expected 1 or 2")]
    UnsupportedSensors(usize),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Class of each target A..F for the supported class counts.
pub fn class_assignment(classes: usize) -> Result<[usize; 6], ScenarioError> {
    Ok(match classes {
        1 => [0, 0, 0, 0, 0, 0],
        2 => [0, 1, 0, 1, 0, 1],
        3 => [0, 1, 2, 0, 1, 2],
        6 => [0, 1, 2, 3, 4, 5],
        c => return Err(ScenarioError::UnsupportedClasses(c)),
    })
}

pub fn build_supplementary_confusions(
    classes: usize,
    regime: ConfusionRegime,
) -> Result<(ConfusionMatrix, ClutterClassPmf), ScenarioError> {
    if classes == 0 {
        return Err(ScenarioError::UnsupportedClasses(classes));
    }
    let c = classes as f64;
    let (diag, off) = match regime {
        ConfusionRegime::FixedDiag => (0.85, 0.15 / c),
        ConfusionRegime::FixedOffDiag => (1.0 - 0.10 * c, 0.10),
    };
    if diag < 0.0 {
        return Err(ScenarioError::Invalid(format!(
            "diagonal {diag} is negative for {classes} classes"
        )));
    }
    let rows: Vec<Vec<f64>> = (0..=classes)
        .map(|z| (0..classes).map(|j| if z == j + 1 { diag } else { off }).collect())
        .collect();
    let mut p0 = vec![off; classes + 1];
    p0[0] = diag;
    Ok((ConfusionMatrix::from_rows(rows)?, ClutterClassPmf::new(p0)?))
}

/// Sensor positions equally spaced on a circle, the first one due south.
pub fn sensor_positions(count: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..count)
        .map(|s| {
            let a = -PI / 2.0 + 2.0 * PI * s as f64 / count as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptions {
    pub classes: usize,
    pub sensors: usize,
    pub clutter_mean: f64,
    pub regime: ConfusionRegime,
    pub variant: ScenarioVariant,
    pub detection_prob: f64,
    /// Range noise standard deviation (m).
    pub sigma_range: f64,
    /// Bearing noise standard deviation (deg).
    pub sigma_bearing_deg: f64,
    /// Sensor circle radius (m).
    pub sensor_radius: f64,
    pub class_stay_prob: f64,
    pub seed: u64,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            classes: 3,
            sensors: 1,
            clutter_mean: 20.0,
            regime: ConfusionRegime::FixedDiag,
            variant: ScenarioVariant::Short,
            detection_prob: 0.9,
            sigma_range: 5.0,
            sigma_bearing_deg: 0.1,
            sensor_radius: 3000.0,
            class_stay_prob: 0.95,
            seed: 0,
        }
    }
}

/// The crossing scenario with `classes ∈ {1, 2, 3, 6}` and `sensors ∈ {1, 2}`.
pub fn build_paper_scenario(
    classes: usize,
    sensors: usize,
    clutter_mean: f64,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    build_scenario(&ScenarioOptions {
        classes,
        sensors,
        clutter_mean,
        seed,
        ..ScenarioOptions::default()
    })
}

pub fn build_scenario(opts: &ScenarioOptions) -> Result<Scenario, ScenarioError> {
    let assignment = class_assignment(opts.classes)?;
    if !(1..=2).contains(&opts.sensors) {
        return Err(ScenarioError::UnsupportedSensors(opts.sensors));
    }
    let (num_steps, late_death, early_death) = match opts.variant {
        ScenarioVariant::Short => (140, 130, 120),
        ScenarioVariant::Long => (150, 150, 140),
    };
    let targets = TARGET_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let (birth, death) = if i % 2 == 0 { (10, late_death) } else { (1, early_death) };
            TargetSpec {
                name: name.to_string(),
                birth,
                death,
                start_angle: i as f64 * PI / 3.0,
                class_index: assignment[i],
            }
        })
        .collect();
    let (confusion, clutter_class_pmf) = build_supplementary_confusions(opts.classes, opts.regime)?;
    let roi = Roi::default();
    let sensors = sensor_positions(opts.sensors, opts.sensor_radius)
        .into_iter()
        .map(|position| SensorModel {
            position,
            sigma_range: opts.sigma_range,
            sigma_bearing: opts.sigma_bearing_deg.to_radians(),
            detection_prob: opts.detection_prob,
            clutter_mean: opts.clutter_mean,
            roi,
            confusion: confusion.clone(),
            clutter_class_pmf: clutter_class_pmf.clone(),
        })
        .collect();
    let scenario = Scenario {
        targets,
        roi,
        num_steps,
        step_s: 2.0,
        speed: 1.0,
        initial_radius: 150.0,
        turn_angle: -PI / 3.0,
        turn: TurnOnset::ClosestApproach,
        sensors,
        num_classes: opts.classes,
        class_transition: ClassTransitionMatrix::sticky(opts.classes, opts.class_stay_prob)?,
        seed: opts.seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Per-run random stream for the frame of step `n` at sensor `s`.
pub fn frame_rng(run_seed: u64, n: usize, s: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(1 + ((n as u64) << 8) + s as u64);
    rng
}

/// Random stream reserved for the tracker of a run.
pub fn tracker_rng(run_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(0);
    rng
}

/// Tracker-side settings that are not part of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerModelOptions {
    pub accel_std: f64,
    pub survival_prob: f64,
    pub birth_prob: f64,
    /// Birth velocity standard deviation per component (m/s).
    pub birth_velocity_std: f64,
}

impl Default for TrackerModelOptions {
    fn default() -> Self {
        Self {
            accel_std: 0.1,
            survival_prob: 0.999,
            birth_prob: 0.01,
            birth_velocity_std: 1.0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.roi.validate()?;
        for t in &self.targets {
            if t.birth > t.death || t.death > self.num_steps {
                return Err(ScenarioError::Invalid(format!(
                    "target {} lives from {} to {} in a {}-step scenario",
                    t.name, t.birth, t.death, self.num_steps
                )));
            }
            if t.class_index >= self.num_classes {
                return Err(ScenarioError::Invalid(format!(
                    "target {} has class {} of {}",
                    t.name,
                    t.class_index + 1,
                    self.num_classes
                )));
            }
        }
        if self.class_transition.num_classes() != self.num_classes {
            return Err(ScenarioError::Invalid("class transition matrix size".into()));
        }
        for s in &self.sensors {
            s.validate()?;
            if s.num_classes() != self.num_classes {
                return Err(ScenarioError::Invalid("sensor class count".into()));
            }
        }
        if !(self.step_s > 0.0 && self.speed >= 0.0 && self.initial_radius >= 0.0) {
            return Err(ScenarioError::Invalid("step, speed and radius must be positive".into()));
        }
        Ok(())
    }

    /// Step at which the heading of `target` changes.
    pub fn turn_step(&self, target: usize) -> usize {
        match self.turn {
            TurnOnset::AtStep(n) => n,
            TurnOnset::ClosestApproach => {
                let per_step = self.speed * self.step_s;
                let inbound_steps = if per_step == 0.0 {
                    0
                } else {
                    (self.initial_radius / per_step).round() as usize
                };
                self.targets[target].birth + inbound_steps
            }
        }
    }

    /// Kinematic state of a target at step `n`, whether or not it exists then.
    /// The target is on the initial circle at its birth step, heading for the
    /// center.
    pub fn trajectory_state(&self, target: usize, n: usize) -> KinematicState {
        let t = &self.targets[target];
        let (c, s) = (t.start_angle.cos(), t.start_angle.sin());
        let start = [self.initial_radius * c, self.initial_radius * s];
        let inbound = [-self.speed * c, -self.speed * s];
        let turn = self.turn_step(target);
        let dt = self.step_s;
        let since = |m: usize| (m as f64 - t.birth as f64) * dt;
        if n < turn {
            let k = since(n);
            return KinematicState::new([start[0] + inbound[0] * k, start[1] + inbound[1] * k], inbound);
        }
        let k = since(turn);
        let at_turn = [start[0] + inbound[0] * k, start[1] + inbound[1] * k];
        let (ca, sa) = (self.turn_angle.cos(), self.turn_angle.sin());
        let outbound = [ca * inbound[0] - sa * inbound[1], sa * inbound[0] + ca * inbound[1]];
        let k = (n - turn) as f64 * dt;
        KinematicState::new([at_turn[0] + outbound[0] * k, at_turn[1] + outbound[1] * k], outbound)
    }

    pub fn is_alive(&self, target: usize, n: usize) -> bool {
        let t = &self.targets[target];
        (t.birth..=t.death).contains(&n)
    }

    /// `(target index, state)` of every target alive at step `n`.
    pub fn truth_at(&self, n: usize) -> Vec<(usize, KinematicState)> {
        (0..self.targets.len())
            .filter(|&i| self.is_alive(i, n))
            .map(|i| (i, self.trajectory_state(i, n)))
            .collect()
    }

    /// Truth positions at steps `1..=num_steps`, labelled by target index.
    pub fn truth_sets(&self) -> Vec<PointSet> {
        (1..=self.num_steps)
            .map(|n| {
                let mut set = PointSet::new();
                for (i, x) in self.truth_at(n) {
                    set.push(x.position, Some(i as u64));
                }
                set
            })
            .collect()
    }

    pub fn roi_area_km2(&self) -> f64 {
        self.roi.area() * 1e-6
    }

    pub fn tracker_models(&self, opts: &TrackerModelOptions) -> Result<crate::engine::TrackerModels, ScenarioError> {
        let motion = MotionModel::constant_velocity(
            self.step_s,
            opts.accel_std,
            opts.survival_prob,
            opts.birth_prob,
            BirthPdf {
                roi: self.roi,
                velocity_std: opts.birth_velocity_std,
            },
        )?;
        Ok(crate::engine::TrackerModels {
            motion,
            class_transition: self.class_transition.clone(),
            sensors: self.sensors.clone(),
        })
    }
}

/// Measurements of one sensor at one step, in random order. `origins[i]` is
/// the generating target of `measurements[i]`, `None` for clutter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub time: usize,
    pub sensor: usize,
    pub measurements: Vec<AugmentedMeasurement>,
    pub origins: Vec<Option<usize>>,
}

fn sample_zeta<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(probabilities).map(|d| d.sample(rng)).unwrap_or(0)
}

pub fn generate_frame<R: Rng + ?Sized>(scenario: &Scenario, n: usize, s: usize, rng: &mut R) -> MeasurementFrame {
    let sensor = &scenario.sensors[s];
    let range_noise = Normal::new(0.0, sensor.sigma_range).expect("validated sigma");
    let bearing_noise = Normal::new(0.0, sensor.sigma_bearing).expect("validated sigma");
    let mut tagged: Vec<(AugmentedMeasurement, Option<usize>)> = Vec::new();
    for (i, x) in scenario.truth_at(n) {
        if !rng.random_bool(sensor.detection_prob) {
            continue;
        }
        let Some((r, b)) = sensor.polar(x.position) else {
            continue;
        };
        let zeta = sample_zeta(&sensor.confusion.column(scenario.targets[i].class_index), rng);
        let z = AugmentedMeasurement::new(r + range_noise.sample(rng), b + bearing_noise.sample(rng), zeta);
        tagged.push((z, Some(i)));
    }
    let count = if sensor.clutter_mean > 0.0 {
        Poisson::new(sensor.clutter_mean)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    for _ in 0..count {
        let p = sensor.roi.sample(rng);
        let (r, b) = sensor.polar(p).unwrap_or((0.0, 0.0));
        let zeta = sample_zeta(sensor.clutter_class_pmf.probabilities(), rng);
        tagged.push((AugmentedMeasurement::new(r, b, zeta), None));
    }
    tagged.shuffle(rng);
    let (measurements, origins) = tagged.into_iter().unzip();
    MeasurementFrame {
        time: n,
        sensor: s,
        measurements,
        origins,
    }
}

/// All frames of a run, indexed `[n - 1][s]`.
pub fn generate_run(scenario: &Scenario, run_seed: u64) -> Vec<Vec<MeasurementFrame>> {
    (1..=scenario.num_steps)
        .map(|n| {
            (0..scenario.sensors.len())
                .map(|s| generate_frame(scenario, n, s, &mut frame_rng(run_seed, n, s)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_assignments() {
        let s = build_paper_scenario(3, 1, 20.0, 0).unwrap();
        assert_eq!(s.targets[0].class_index, s.targets[3].class_index);
        assert_eq!(s.targets[0].class_index, 0);
        assert!(build_paper_scenario(4, 1, 20.0, 0).is_err());
        assert!(build_paper_scenario(3, 3, 20.0, 0).is_err());
    }

    #[test]
    fn lifetimes() {
        let s = build_paper_scenario(3, 1, 20.0, 0).unwrap();
        assert!(s.is_alive(1, 1));
        assert!(!s.is_alive(1, 121));
        assert!(!s.is_alive(0, 9));
        assert!(s.is_alive(0, 130));
        assert!(!s.is_alive(0, 131));
        assert_eq!(s.truth_sets().len(), 140);
    }

    #[test]
    fn constant_speed_and_right_turn() {
        let s = build_paper_scenario(3, 1, 20.0, 0).unwrap();
        let onsets: Vec<usize> = (0..6).map(|i| s.turn_step(i)).collect();
        assert_eq!(onsets, vec![85, 76, 85, 76, 85, 76]);
        for i in 0..6 {
            let birth = s.targets[i].birth;
            let p = s.trajectory_state(i, birth).position;
            assert!((p[0].hypot(p[1]) - 150.0).abs() < 1e-9);
            for n in birth..=140 {
                let v = s.trajectory_state(i, n).velocity;
                assert!((v[0].hypot(v[1]) - 1.0).abs() < 1e-9);
                if n > birth {
                    let a = s.trajectory_state(i, n - 1).position;
                    let b = s.trajectory_state(i, n).position;
                    assert!(((b[0] - a[0]).hypot(b[1] - a[1]) - 2.0).abs() < 1e-9);
                }
            }
            let turn = onsets[i];
            let p = s.trajectory_state(i, turn).position;
            assert!(p[0].hypot(p[1]) < 1e-9);
            let vin = s.trajectory_state(i, turn - 1).velocity;
            let vout = s.trajectory_state(i, turn).velocity;
            // cross product negative: clockwise, i.e. a right turn
            let cross = vin[0] * vout[1] - vin[1] * vout[0];
            let dot = vin[0] * vout[0] + vin[1] * vout[1];
            assert!((cross.atan2(dot) + PI / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_onset_applies_to_every_target() {
        let mut s = build_paper_scenario(3, 1, 20.0, 0).unwrap();
        s.turn = TurnOnset::AtStep(70);
        assert!((0..6).all(|i| s.turn_step(i) == 70));
    }

    #[test]
    fn supplementary_confusions() {
        let (g, p0) = build_supplementary_confusions(3, ConfusionRegime::FixedDiag).unwrap();
        assert!((g.get(1, 0) - 0.85).abs() < 1e-15);
        assert!((g.get(2, 0) - 0.05).abs() < 1e-15);
        assert!((g.get(0, 2) - 0.05).abs() < 1e-15);
        assert!((p0.get(0) - 0.85).abs() < 1e-15);
        let (g, p0) = build_supplementary_confusions(6, ConfusionRegime::FixedOffDiag).unwrap();
        assert!((g.get(4, 3) - 0.4).abs() < 1e-12);
        assert!((g.get(0, 3) - 0.1).abs() < 1e-15);
        assert!((p0.get(0) - 0.4).abs() < 1e-12);
        let (g, _) = build_supplementary_confusions(1, ConfusionRegime::FixedDiag).unwrap();
        assert!((g.get(0, 0) - 0.15).abs() < 1e-15);
        assert!((g.get(1, 0) - 0.85).abs() < 1e-15);
    }

    #[test]
    fn sensors_on_circle() {
        let p = sensor_positions(2, 3000.0);
        assert!((p[0][1] + 3000.0).abs() < 1e-9);
        assert!((p[1][1] - 3000.0).abs() < 1e-9);
    }

    #[test]
    fn frames_are_reproducible() {
        let s = build_paper_scenario(3, 2, 20.0, 0).unwrap();
        let a = generate_frame(&s, 30, 1, &mut frame_rng(9, 30, 1));
        let b = generate_frame(&s, 30, 1, &mut frame_rng(9, 30, 1));
        assert_eq!(a, b);
        let c = generate_frame(&s, 30, 0, &mut frame_rng(9, 30, 1));
        assert_ne!(a, c);
    }

    #[test]
    fn empty_frames_without_detection_or_clutter() {
        let mut s = build_paper_scenario(3, 1, 0.0, 0).unwrap();
        s.sensors[0].detection_prob = 0.0;
        for n in 1..20 {
            assert!(generate_frame(&s, n, 0, &mut frame_rng(1, n, 0))
                .measurements
                .is_empty());
        }
    }
}
