//! One filtering step: prediction, per-sensor measurement evaluation,
//! association, measurement update and belief fusion.
//!
//! Each PT belief keeps shared kinematic particles `x_j` and a per-particle
//! class-weight row `w_{j,c}`, plus the scalar mass of non-existence.

use std::ops::Deref;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::association::{run_bp, AssociationError, BetaTable, BpOptions, EtaTable};
use crate::estimator::{detect_and_estimate, TrackEstimate};
use crate::model::{
    clutter_density, AugmentedMeasurement, ClassFactorTable, ClassTransitionMatrix, ModelError, MotionModel,
    SensorModel,
};

/// Clutter intensity used by the tracker when a sensor reports `μ = 0`, which
/// keeps likelihood ratios finite.
pub const MIN_CLUTTER_MEAN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error("non-finite measurement evaluation for measurement {measurement} (0 = missed detection)")]
    NonFiniteBeta { measurement: usize },
    #[error("belief has no probability mass")]
    DegenerateBelief,
    #[error("{0}")]
    Mismatch(String),
}

/// Particle representation of `f̃(x, r, ℓ)` for one PT.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBelief {
    /// `[x, y, ẋ, ẏ]` per particle.
    pub particles: Vec<[f64; 4]>,
    /// Row-major `J × C` weights of `f̃(x_j, 1, c)`.
    pub class_weights: Vec<f64>,
    pub nonexistence: f64,
    num_classes: usize,
}

impl AugmentedBelief {
    pub fn new(
        particles: Vec<[f64; 4]>,
        class_weights: Vec<f64>,
        nonexistence: f64,
        num_classes: usize,
    ) -> Result<Self, EngineError> {
        if num_classes == 0 || particles.is_empty() || class_weights.len() != particles.len() * num_classes {
            return Err(EngineError::Mismatch(format!(
                "{} particles, {} weights, {num_classes} classes",
                particles.len(),
                class_weights.len()
            )));
        }
        Ok(Self {
            particles,
            class_weights,
            nonexistence,
            num_classes,
        })
    }

    /// A PT that certainly does not exist.
    pub fn nonexistent(num_classes: usize) -> Self {
        Self {
            particles: vec![[0.0; 4]],
            class_weights: vec![0.0; num_classes],
            nonexistence: 1.0,
            num_classes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_particles(&self) -> usize {
        self.particles.len()
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.class_weights[j * self.num_classes..(j + 1) * self.num_classes]
    }

    /// `Σ_{j,c} w_{j,c}`.
    pub fn existence_prob(&self) -> f64 {
        self.class_weights.iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.existence_prob() + self.nonexistence
    }

    /// Column sums of the class weights.
    pub fn class_marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes];
        for row in self.class_weights.chunks(self.num_classes) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w;
            }
        }
        out
    }

    fn scale(&mut self, factor: f64) {
        self.class_weights.iter_mut().for_each(|w| *w *= factor);
        self.nonexistence *= factor;
    }
}

/// `α(x, r, ℓ)`: the predicted belief, normalized, still carrying the birth
/// particles.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedMessage(AugmentedBelief);

impl PredictedMessage {
    pub fn into_inner(self) -> AugmentedBelief {
        self.0
    }
}

impl Deref for PredictedMessage {
    type Target = AugmentedBelief;
    fn deref(&self) -> &AugmentedBelief {
        &self.0
    }
}

impl From<AugmentedBelief> for PredictedMessage {
    fn from(b: AugmentedBelief) -> Self {
        Self(b)
    }
}

/// `γ^(s)` for one PT: a value per particle and class plus the `r = 0` value.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFactor {
    pub weights: Vec<f64>,
    pub nonexistence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerModels {
    pub motion: MotionModel,
    pub class_transition: ClassTransitionMatrix,
    pub sensors: Vec<SensorModel>,
}

impl TrackerModels {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.motion.validate()?;
        if self.sensors.is_empty() {
            return Err(EngineError::Mismatch("at least one sensor is required".into()));
        }
        let c = self.class_transition.num_classes();
        for s in &self.sensors {
            s.validate()?;
            if s.num_classes() != c {
                return Err(EngineError::Mismatch(format!(
                    "sensor confusion matrix has {} classes, class transition matrix has {c}",
                    s.num_classes()
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_transition.num_classes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaParams {
    /// Number of potential targets `K`.
    pub num_pts: usize,
    /// Particles per PT after resampling, `J`.
    pub particles: usize,
    /// Birth particles drawn per PT and step, `J_b`.
    pub birth_particles: usize,
    pub bp: BpOptions,
    /// Existence probability above which a PT is reported.
    pub detection_threshold: f64,
    /// When false the classifier output is ignored (the baseline tracker).
    pub classifier_enabled: bool,
    /// Likelihoods of particles whose squared normalized innovation exceeds
    /// this are treated as zero. `f64::INFINITY` disables gating.
    pub gate_sq: f64,
}

impl Default for SpaParams {
    fn default() -> Self {
        Self {
            num_pts: 20,
            particles: 3000,
            birth_particles: 300,
            bp: BpOptions::default(),
            detection_threshold: 0.5,
            classifier_enabled: true,
            gate_sq: 100.0,
        }
    }
}

impl SpaParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.num_pts == 0 || self.particles == 0 || self.birth_particles == 0 {
            return Err(EngineError::Mismatch(
                "num_pts, particles and birth_particles must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err(EngineError::Mismatch("detection_threshold must lie in [0, 1]".into()));
        }
        if !(self.gate_sq > 0.0) {
            return Err(EngineError::Mismatch("gate_sq must be positive".into()));
        }
        Ok(())
    }
}

/// Prediction: survival with class mixing by `D`, death, and birth of
/// `birth_particles` fresh particles carrying mass `p_b · N`. Particles
/// without weight are dropped. The result is renormalized.
pub fn predict<R: Rng + ?Sized>(
    prev: &AugmentedBelief,
    motion: &MotionModel,
    d: &ClassTransitionMatrix,
    birth_particles: usize,
    rng: &mut R,
) -> Result<PredictedMessage, EngineError> {
    let c = prev.num_classes;
    if d.num_classes() != c {
        return Err(EngineError::Mismatch(format!(
            "belief has {c} classes, class transition matrix has {}",
            d.num_classes()
        )));
    }
    let total = prev.total_mass();
    if !(total > 0.0 && total.is_finite()) {
        return Err(EngineError::DegenerateBelief);
    }
    let ps = motion.survival_prob;
    let pb = motion.birth_prob;
    let born_mass = pb * prev.nonexistence;
    let births = if born_mass > 0.0 { birth_particles.max(1) } else { 0 };

    let mut particles = Vec::with_capacity(prev.particles.len() + births);
    let mut weights = Vec::with_capacity((prev.particles.len() + births) * c);
    let mut existing = 0.0;
    let mut mixed = vec![0.0; c];
    for (j, x) in prev.particles.iter().enumerate() {
        let row = prev.row(j);
        let mass: f64 = row.iter().sum();
        if mass == 0.0 {
            continue;
        }
        existing += mass;
        d.mix_into(row, &mut mixed);
        particles.push(motion.sample_next(x, rng));
        weights.extend(mixed.iter().map(|w| ps * w));
    }
    let per_birth = if births > 0 {
        born_mass / (c * births) as f64
    } else {
        0.0
    };
    for _ in 0..births {
        particles.push(motion.birth.sample(rng));
        weights.extend(std::iter::repeat_n(per_birth, c));
    }
    let nonexistence = (1.0 - ps) * existing + (1.0 - pb) * prev.nonexistence;
    if particles.is_empty() {
        return Ok(AugmentedBelief::nonexistent(c).into());
    }
    let mut belief = AugmentedBelief {
        particles,
        class_weights: weights,
        nonexistence,
        num_classes: c,
    };
    belief.scale(1.0 / total);
    Ok(belief.into())
}

/// A measurement prepared for likelihood evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedMeasurement {
    pub range: f64,
    pub bearing: f64,
    pub zeta: usize,
    /// `ln(1 / (2π σ_r σ_b)) - ln(μ f₀(q))`.
    pub log_offset: f64,
    /// Index in the original scan.
    pub source_index: usize,
}

/// Validates a scan and drops measurements the clutter model gives zero
/// density (outside the surveillance region).
pub fn prepare_scan(
    measurements: &[AugmentedMeasurement],
    sensor: &SensorModel,
) -> Result<Vec<PreparedMeasurement>, EngineError> {
    let classes = sensor.num_classes();
    let mu = sensor.clutter_mean.max(MIN_CLUTTER_MEAN);
    let peak = sensor.log_likelihood_peak();
    let mut out = Vec::with_capacity(measurements.len());
    for (i, z) in measurements.iter().enumerate() {
        if z.class_estimate > classes {
            return Err(ModelError::ClassEstimateOutOfRange {
                zeta: z.class_estimate,
                classes,
            }
            .into());
        }
        let f0 = clutter_density(z.range, z.bearing, sensor);
        if f0 <= 0.0 {
            continue;
        }
        out.push(PreparedMeasurement {
            range: z.range,
            bearing: z.bearing,
            zeta: z.class_estimate,
            log_offset: peak - (mu * f0).ln(),
            source_index: i,
        });
    }
    Ok(out)
}

/// Kinematic likelihood ratio `f(q|x_j) / (μ f₀(q))` for a gated-in
/// (particle, measurement) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub particle: usize,
    pub measurement: usize,
    pub ratio: f64,
}

/// `β` for one PT and sensor, plus the nonzero kinematic ratios reused by the
/// measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub beta: Vec<f64>,
    pub hits: Vec<Hit>,
}

/// Measurement evaluation: `β(m) = Σ_{j,c} P_d · ratio(z_m, x_j, c) · w_{j,c}`
/// and `β(0) = (1 - P_d) Σ w + N`.
pub fn measurement_evaluation(
    pred: &PredictedMessage,
    measurements: &[PreparedMeasurement],
    sensor: &SensorModel,
    factors: &ClassFactorTable,
    gate_sq: f64,
) -> Result<Evaluation, EngineError> {
    let c = pred.num_classes;
    let pd = sensor.detection_prob;
    let mut beta = vec![0.0; measurements.len() + 1];
    let mut hits = Vec::new();
    let range_gate = gate_sq.sqrt() * sensor.sigma_range;
    let inv_var_r = 1.0 / (sensor.sigma_range * sensor.sigma_range);
    let inv_var_b = 1.0 / (sensor.sigma_bearing * sensor.sigma_bearing);

    if !measurements.is_empty() && pd > 0.0 {
        let mut v = vec![0.0; c + 1];
        for (j, x) in pred.particles.iter().enumerate() {
            let row = pred.row(j);
            if row.iter().all(|w| *w == 0.0) {
                continue;
            }
            let Some((pr, pb)) = sensor.polar([x[0], x[1]]) else {
                continue;
            };
            let mut have_v = false;
            for (m, z) in measurements.iter().enumerate() {
                let dr = z.range - pr;
                if dr.abs() > range_gate {
                    continue;
                }
                let mut db = z.bearing - pb;
                if db > std::f64::consts::PI {
                    db -= 2.0 * std::f64::consts::PI;
                } else if db < -std::f64::consts::PI {
                    db += 2.0 * std::f64::consts::PI;
                }
                let d2 = dr * dr * inv_var_r + db * db * inv_var_b;
                if d2 > gate_sq {
                    continue;
                }
                if !have_v {
                    for (zeta, vz) in v.iter_mut().enumerate() {
                        *vz = factors.row(zeta).iter().zip(row).map(|(g, w)| g * w).sum();
                    }
                    have_v = true;
                }
                let ratio = (z.log_offset - 0.5 * d2).exp();
                if ratio == 0.0 {
                    continue;
                }
                beta[m + 1] += pd * ratio * v[z.zeta];
                hits.push(Hit {
                    particle: j,
                    measurement: m,
                    ratio,
                });
            }
        }
    }
    beta[0] = (1.0 - pd) * pred.existence_prob() + pred.nonexistence;
    if let Some(m) = beta.iter().position(|b| !b.is_finite() || *b < 0.0) {
        let measurement = if m == 0 {
            0
        } else {
            measurements[m - 1].source_index + 1
        };
        return Err(EngineError::NonFiniteBeta { measurement });
    }
    Ok(Evaluation { beta, hits })
}

/// Measurement update: `γ_{j,c} = (1 - P_d) η(0) + Σ_m P_d · ratio · η(m)`,
/// with `η(0)` for the non-existence branch.
pub fn measurement_update(
    pred: &PredictedMessage,
    evaluation: &Evaluation,
    eta: &[f64],
    measurements: &[PreparedMeasurement],
    sensor: &SensorModel,
    factors: &ClassFactorTable,
) -> Result<SensorFactor, EngineError> {
    if eta.len() != measurements.len() + 1 || evaluation.beta.len() != eta.len() {
        return Err(EngineError::Mismatch(format!(
            "η has {} entries for {} measurements",
            eta.len(),
            measurements.len()
        )));
    }
    let c = pred.num_classes;
    let pd = sensor.detection_prob;
    let mut weights = vec![(1.0 - pd) * eta[0]; pred.particles.len() * c];
    for hit in &evaluation.hits {
        let z = &measurements[hit.measurement];
        let scale = pd * hit.ratio * eta[hit.measurement + 1];
        let out = &mut weights[hit.particle * c..(hit.particle + 1) * c];
        for (o, g) in out.iter_mut().zip(factors.row(z.zeta)) {
            *o += scale * g;
        }
    }
    Ok(SensorFactor {
        weights,
        nonexistence: eta[0],
    })
}

/// Unnormalized fused belief `α ∏_s γ^(s)`, particles unchanged.
pub fn fuse_weights(pred: &PredictedMessage, factors: &[SensorFactor]) -> Result<AugmentedBelief, EngineError> {
    if factors.is_empty() {
        return Err(EngineError::Mismatch("at least one sensor factor is required".into()));
    }
    let mut belief = pred.0.clone();
    for f in factors {
        if f.weights.len() != belief.class_weights.len() {
            return Err(EngineError::Mismatch(format!(
                "sensor factor has {} entries, belief has {}",
                f.weights.len(),
                belief.class_weights.len()
            )));
        }
        belief
            .class_weights
            .iter_mut()
            .zip(&f.weights)
            .for_each(|(w, g)| *w *= g);
        belief.nonexistence *= f.nonexistence;
    }
    Ok(belief)
}

/// Systematic resampling of the flattened `(j, c)` weights into `j_out`
/// one-hot atoms of equal weight. Returns the nonexistent belief when there
/// is no existing mass.
pub fn resample<R: Rng + ?Sized>(belief: &AugmentedBelief, j_out: usize, rng: &mut R) -> AugmentedBelief {
    let c = belief.num_classes;
    let existing = belief.existence_prob();
    if existing <= 0.0 {
        let mut out = AugmentedBelief::nonexistent(c);
        out.nonexistence = belief.nonexistence;
        return out;
    }
    let step = existing / j_out as f64;
    let mut u = rng.random::<f64>() * step;
    let mut particles = Vec::with_capacity(j_out);
    let mut weights = vec![0.0; j_out * c];
    let mut cumulative = 0.0;
    let mut idx = 0;
    let last_nonzero = belief.class_weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    for i in 0..j_out {
        while idx < last_nonzero && cumulative + belief.class_weights[idx] <= u {
            cumulative += belief.class_weights[idx];
            idx += 1;
        }
        particles.push(belief.particles[idx / c]);
        weights[i * c + idx % c] = step;
        u += step;
    }
    AugmentedBelief {
        particles,
        class_weights: weights,
        nonexistence: belief.nonexistence,
        num_classes: c,
    }
}

/// Belief calculation: multiplies the predicted message by every sensor
/// factor, normalizes and resamples to `j_out` particles. If no mass is left
/// the PT is reset to certain non-existence.
pub fn fuse_and_normalize<R: Rng + ?Sized>(
    pred: &PredictedMessage,
    factors: &[SensorFactor],
    j_out: usize,
    rng: &mut R,
) -> Result<AugmentedBelief, EngineError> {
    let mut fused = fuse_weights(pred, factors)?;
    let total = fused.total_mass();
    if !(total > 0.0 && total.is_finite()) {
        warn!("fused belief has total mass {total}; resetting to non-existence");
        return Ok(AugmentedBelief::nonexistent(pred.num_classes));
    }
    fused.scale(1.0 / total);
    Ok(resample(&fused, j_out, rng))
}

/// Per-sensor processing for all PTs: evaluation, association and update.
pub fn sensor_factors(
    predicted: &[PredictedMessage],
    measurements: &[AugmentedMeasurement],
    sensor: &SensorModel,
    factors: &ClassFactorTable,
    params: &SpaParams,
) -> Result<(Vec<SensorFactor>, EtaTable), EngineError> {
    let prepared = prepare_scan(measurements, sensor)?;
    let evaluations = predicted
        .iter()
        .map(|p| measurement_evaluation(p, &prepared, sensor, factors, params.gate_sq))
        .collect::<Result<Vec<_>, _>>()?;
    let beta = BetaTable::new(
        predicted.len(),
        prepared.len(),
        evaluations.iter().flat_map(|e| e.beta.iter().copied()).collect(),
    )?;
    let eta = run_bp(&beta, &params.bp)?;
    let out = predicted
        .iter()
        .zip(&evaluations)
        .enumerate()
        .map(|(k, (p, e))| measurement_update(p, e, eta.row(k), &prepared, sensor, factors))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((out, eta))
}

/// One full time step for all PTs. `scans[s]` holds the measurements of
/// sensor `s`; sensors are processed independently and fused at the end.
pub fn step<R: Rng + ?Sized>(
    beliefs: &[AugmentedBelief],
    scans: &[Vec<AugmentedMeasurement>],
    models: &TrackerModels,
    factors: &[ClassFactorTable],
    params: &SpaParams,
    rng: &mut R,
) -> Result<Vec<AugmentedBelief>, EngineError> {
    if scans.len() != models.sensors.len() || factors.len() != models.sensors.len() {
        return Err(EngineError::Mismatch(format!(
            "{} scans and {} factor tables for {} sensors",
            scans.len(),
            factors.len(),
            models.sensors.len()
        )));
    }
    let predicted = beliefs
        .iter()
        .map(|b| predict(b, &models.motion, &models.class_transition, params.birth_particles, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let mut per_pt: Vec<Vec<SensorFactor>> = vec![Vec::with_capacity(scans.len()); beliefs.len()];
    for ((scan, sensor), table) in scans.iter().zip(&models.sensors).zip(factors) {
        let (sensor_out, _) = sensor_factors(&predicted, scan, sensor, table, params)?;
        for (dst, f) in per_pt.iter_mut().zip(sensor_out) {
            dst.push(f);
        }
    }
    predicted
        .iter()
        .zip(&per_pt)
        .map(|(p, f)| fuse_and_normalize(p, f, params.particles, rng))
        .collect()
}

/// A complete tracker: models, parameters, PT beliefs and its random stream.
#[derive(Debug, Clone)]
pub struct SpaTracker {
    models: TrackerModels,
    params: SpaParams,
    factors: Vec<ClassFactorTable>,
    beliefs: Vec<AugmentedBelief>,
    rng: ChaCha8Rng,
    time: usize,
}

impl SpaTracker {
    /// All PTs start out certainly non-existent.
    pub fn new(models: TrackerModels, params: SpaParams, seed: u64) -> Result<Self, EngineError> {
        Self::with_rng(models, params, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(models: TrackerModels, params: SpaParams, rng: ChaCha8Rng) -> Result<Self, EngineError> {
        models.validate()?;
        params.validate()?;
        let factors = models
            .sensors
            .iter()
            .map(|s| ClassFactorTable::new(s, params.classifier_enabled))
            .collect();
        let beliefs = vec![AugmentedBelief::nonexistent(models.num_classes()); params.num_pts];
        Ok(Self {
            models,
            params,
            factors,
            beliefs,
            rng,
            time: 0,
        })
    }

    pub fn models(&self) -> &TrackerModels {
        &self.models
    }

    pub fn params(&self) -> &SpaParams {
        &self.params
    }

    pub fn beliefs(&self) -> &[AugmentedBelief] {
        &self.beliefs
    }

    /// Replaces the PT beliefs, e.g. to start from a non-default prior.
    pub fn set_beliefs(&mut self, beliefs: Vec<AugmentedBelief>) -> Result<(), EngineError> {
        let c = self.models.num_classes();
        if beliefs.len() != self.params.num_pts || beliefs.iter().any(|b| b.num_classes != c) {
            return Err(EngineError::Mismatch("belief count or class count differs".into()));
        }
        self.beliefs = beliefs;
        Ok(())
    }

    /// Index of the last processed step.
    pub fn time(&self) -> usize {
        self.time
    }

    pub fn step(&mut self, scans: &[Vec<AugmentedMeasurement>]) -> Result<(), EngineError> {
        self.beliefs = step(
            &self.beliefs,
            scans,
            &self.models,
            &self.factors,
            &self.params,
            &mut self.rng,
        )?;
        self.time += 1;
        Ok(())
    }

    pub fn estimates(&self) -> Vec<TrackEstimate> {
        detect_and_estimate(&self.beliefs, self.params.detection_threshold, self.time)
    }
}
