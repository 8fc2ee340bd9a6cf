//! Domain types and the generative / statistical models.
//!
//! Class indices `ℓ` are zero based (`0..C`). Classifier outputs `ζ` live in
//! `0..=C`: `0` is the "clutter" verdict and `c + 1` is the verdict for class
//! `c`. Rows of a [`ConfusionMatrix`] and entries of a [`ClutterClassPmf`] are
//! indexed by `ζ` in that convention.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix4, SMatrix, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = [f64; 2];

/// Column sums further than this from one are rejected by the matrix constructors.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid {what}: {reason}")]
    InvalidMatrix { what: &'static str, reason: String },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("classifier output {zeta} out of range for {classes} classes")]
    ClassEstimateOutOfRange { zeta: usize, classes: usize },
    #[error("likelihood ratio is infinite for classifier output {zeta}: clutter model assigns zero density")]
    InfiniteRatio { zeta: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

fn invalid_param(name: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut w = angle.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    /// Position (m).
    pub position: Vec2,
    /// Velocity (m/s).
    pub velocity: Vec2,
}

impl KinematicState {
    pub fn new(position: Vec2, velocity: Vec2) -> Self {
        Self { position, velocity }
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self {
            position: [x[0], x[1]],
            velocity: [x[2], x[3]],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// `(x, r, ℓ)` for one potential target. A class is carried even when the
/// target does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    pub kinematics: KinematicState,
    pub exists: bool,
    pub class_index: usize,
}

/// Validates a column-stochastic matrix stored row major and renormalizes its
/// columns so that they sum to one up to rounding.
fn validate_column_stochastic(
    what: &'static str,
    rows: usize,
    cols: usize,
    data: &mut [f64],
) -> Result<(), ModelError> {
    let bad = |reason: String| ModelError::InvalidMatrix { what, reason };
    if rows == 0 || cols == 0 {
        return Err(bad("empty matrix".into()));
    }
    if data.len() != rows * cols {
        return Err(bad(format!(
            "expected {rows}x{cols} = {} entries, got {}",
            rows * cols,
            data.len()
        )));
    }
    if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
        return Err(bad(format!("entry {v} outside [0, 1]")));
    }
    for j in 0..cols {
        let sum: f64 = (0..rows).map(|i| data[i * cols + j]).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(bad(format!("column {j} sums to {sum}")));
        }
        for i in 0..rows {
            data[i * cols + j] /= sum;
        }
    }
    Ok(())
}

/// `D[i][j] = p(ℓ_n = i | r_{n-1} = 1, ℓ_{n-1} = j)`; columns sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ClassTransitionMatrix {
    classes: usize,
    data: Vec<f64>,
}

impl ClassTransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(ModelError::InvalidMatrix {
                what: "class transition matrix",
                reason: "matrix is not square".into(),
            });
        }
        let mut data: Vec<f64> = rows.into_iter().flatten().collect();
        validate_column_stochastic("class transition matrix", classes, classes, &mut data)?;
        Ok(Self { classes, data })
    }

    pub fn identity(classes: usize) -> Self {
        let mut data = vec![0.0; classes * classes];
        for i in 0..classes {
            data[i * classes + i] = 1.0;
        }
        Self { classes, data }
    }

    /// Diagonal `stay`, off-diagonal entries sharing `1 - stay` equally.
    /// A single class gets `[[1]]`.
    pub fn sticky(classes: usize, stay: f64) -> Result<Self, ModelError> {
        if classes == 0 {
            return Err(invalid_param("classes", "must be at least 1"));
        }
        if classes == 1 {
            return Ok(Self::identity(1));
        }
        let off = (1.0 - stay) / (classes as f64 - 1.0);
        let rows = (0..classes)
            .map(|i| (0..classes).map(|j| if i == j { stay } else { off }).collect())
            .collect();
        Self::from_rows(rows)
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, to: usize, from: usize) -> f64 {
        self.data[to * self.classes + from]
    }

    /// Applies the matrix to a class-weight row: `out[i] = Σ_j D[i][j] w[j]`.
    #[inline]
    pub fn mix_into(&self, weights: &[f64], out: &mut [f64]) {
        let c = self.classes;
        for (i, o) in out.iter_mut().enumerate().take(c) {
            let row = &self.data[i * c..(i + 1) * c];
            *o = row.iter().zip(weights).map(|(d, w)| d * w).sum();
        }
    }

    /// Matrix with classes relabelled: class `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let c = self.classes;
        let mut data = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                data[perm[i] * c + perm[j]] = self.get(i, j);
            }
        }
        Self { classes: c, data }
    }
}

impl TryFrom<Vec<Vec<f64>>> for ClassTransitionMatrix {
    type Error = ModelError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(rows)
    }
}

impl From<ClassTransitionMatrix> for Vec<Vec<f64>> {
    fn from(m: ClassTransitionMatrix) -> Self {
        m.data.chunks(m.classes).map(|r| r.to_vec()).collect()
    }
}

/// `G[ζ][j] = p(ζ | target of class j)`, a `(C+1) × C` column-stochastic matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ConfusionMatrix {
    classes: usize,
    data: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let what = "confusion matrix";
        if rows.len() < 2 {
            return Err(ModelError::InvalidMatrix {
                what,
                reason: "need at least two rows (clutter verdict plus one class)".into(),
            });
        }
        let classes = rows.len() - 1;
        if rows.iter().any(|r| r.len() != classes) {
            return Err(ModelError::InvalidMatrix {
                what,
                reason: format!("expected {} rows of length {classes}", classes + 1),
            });
        }
        let mut data: Vec<f64> = rows.into_iter().flatten().collect();
        validate_column_stochastic(what, classes + 1, classes, &mut data)?;
        Ok(Self { classes, data })
    }

    /// Every column equal to `pmf`: the classifier carries no information
    /// beyond what clutter verdicts already look like.
    pub fn uninformative(pmf: &ClutterClassPmf) -> Self {
        let classes = pmf.num_classes();
        let data = pmf
            .probabilities()
            .iter()
            .flat_map(|p| std::iter::repeat_n(*p, classes))
            .collect();
        Self { classes, data }
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, zeta: usize, class_index: usize) -> f64 {
        self.data[zeta * self.classes + class_index]
    }

    pub fn column(&self, class_index: usize) -> Vec<f64> {
        (0..=self.classes).map(|z| self.get(z, class_index)).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let c = self.classes;
        let mut data = vec![0.0; (c + 1) * c];
        for z in 0..=c {
            let nz = if z == 0 { 0 } else { perm[z - 1] + 1 };
            for j in 0..c {
                data[nz * c + perm[j]] = self.get(z, j);
            }
        }
        Self { classes: c, data }
    }
}

impl TryFrom<Vec<Vec<f64>>> for ConfusionMatrix {
    type Error = ModelError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(rows)
    }
}

impl From<ConfusionMatrix> for Vec<Vec<f64>> {
    fn from(m: ConfusionMatrix) -> Self {
        m.data.chunks(m.classes).map(|r| r.to_vec()).collect()
    }
}

/// `p₀[ζ]`: distribution of classifier verdicts on clutter measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClutterClassPmf {
    probabilities: Vec<f64>,
}

impl ClutterClassPmf {
    pub fn new(mut probabilities: Vec<f64>) -> Result<Self, ModelError> {
        if probabilities.len() < 2 {
            return Err(ModelError::InvalidMatrix {
                what: "clutter class pmf",
                reason: "need at least two entries".into(),
            });
        }
        let n = probabilities.len();
        validate_column_stochastic("clutter class pmf", n, 1, &mut probabilities)?;
        Ok(Self { probabilities })
    }

    pub fn num_classes(&self) -> usize {
        self.probabilities.len() - 1
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    #[inline]
    pub fn get(&self, zeta: usize) -> f64 {
        self.probabilities[zeta]
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut probabilities = self.probabilities.clone();
        for (c, &p) in perm.iter().enumerate() {
            probabilities[p + 1] = self.probabilities[c + 1];
        }
        Self { probabilities }
    }
}

impl TryFrom<Vec<f64>> for ClutterClassPmf {
    type Error = ModelError;
    fn try_from(p: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<ClutterClassPmf> for Vec<f64> {
    fn from(p: ClutterClassPmf) -> Self {
        p.probabilities
    }
}

/// Range/bearing measurement `q` plus classifier output `ζ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentedMeasurement {
    /// Range (m), non-negative.
    pub range: f64,
    /// Bearing (rad) in `(-π, π]`.
    pub bearing: f64,
    /// Classifier output: `0` clutter, `c + 1` class `c`.
    pub class_estimate: usize,
}

impl AugmentedMeasurement {
    pub fn new(range: f64, bearing: f64, class_estimate: usize) -> Self {
        Self {
            range: range.max(0.0),
            bearing: wrap_angle(bearing),
            class_estimate,
        }
    }
}

/// Axis-aligned rectangle (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Roi {
    fn default() -> Self {
        Self {
            x_min: -200.0,
            x_max: 200.0,
            y_min: -150.0,
            y_max: 150.0,
        }
    }
}

impl Roi {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, ModelError> {
        let roi = Self {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(invalid_param("roi", format!("{self:?} has no positive area")));
        }
        Ok(())
    }

    /// Area (m²).
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    #[inline]
    pub fn contains(&self, p: Vec2) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        [
            rng.random_range(self.x_min..self.x_max),
            rng.random_range(self.y_min..self.y_max),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// Sensor position (m).
    pub position: Vec2,
    /// Range noise standard deviation (m).
    pub sigma_range: f64,
    /// Bearing noise standard deviation (rad).
    pub sigma_bearing: f64,
    pub detection_prob: f64,
    /// Mean number of clutter measurements per scan.
    pub clutter_mean: f64,
    pub roi: Roi,
    pub confusion: ConfusionMatrix,
    pub clutter_class_pmf: ClutterClassPmf,
}

impl SensorModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.sigma_range > 0.0 && self.sigma_range.is_finite()) {
            return Err(invalid_param("sigma_range", "must be positive"));
        }
        if !(self.sigma_bearing > 0.0 && self.sigma_bearing.is_finite()) {
            return Err(invalid_param("sigma_bearing", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.detection_prob) {
            return Err(invalid_param("detection_prob", "must lie in [0, 1]"));
        }
        if !(self.clutter_mean >= 0.0 && self.clutter_mean.is_finite()) {
            return Err(invalid_param("clutter_mean", "must be non-negative"));
        }
        self.roi.validate()?;
        if self.confusion.num_classes() != self.clutter_class_pmf.num_classes() {
            return Err(invalid_param(
                "clutter_class_pmf",
                "class count differs from the confusion matrix",
            ));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.num_classes()
    }

    /// Noise-free `(range, bearing)` of a position, `None` when it coincides
    /// with the sensor.
    #[inline]
    pub fn polar(&self, position: Vec2) -> Option<(f64, f64)> {
        let dx = position[0] - self.position[0];
        let dy = position[1] - self.position[1];
        if dx == 0.0 && dy == 0.0 {
            return None;
        }
        Some((dx.hypot(dy), dy.atan2(dx)))
    }

    #[inline]
    pub fn to_cartesian(&self, range: f64, bearing: f64) -> Vec2 {
        [
            self.position[0] + range * bearing.cos(),
            self.position[1] + range * bearing.sin(),
        ]
    }

    /// `ln(1 / (2π σ_r σ_b))`, the log of the measurement density at its mode.
    pub fn log_likelihood_peak(&self) -> f64 {
        -(2.0 * PI * self.sigma_range * self.sigma_bearing).ln()
    }
}

/// Uniform position over a rectangle times zero-mean Gaussian velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthPdf {
    pub roi: Roi,
    /// Per-component velocity standard deviation (m/s).
    pub velocity_std: f64,
}

impl BirthPdf {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 4] {
        let p = self.roi.sample(rng);
        let vx: f64 = rng.sample(StandardNormal);
        let vy: f64 = rng.sample(StandardNormal);
        [p[0], p[1], self.velocity_std * vx, self.velocity_std * vy]
    }
}

/// Nearly constant velocity dynamics `x' = A x + W u`, `u ~ N(0, σ² I₂)`,
/// together with the survival/birth existence model.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub transition: Matrix4<f64>,
    pub noise_gain: SMatrix<f64, 4, 2>,
    /// Per-component acceleration noise standard deviation (m/s²).
    pub accel_std: f64,
    /// Time step (s).
    pub step: f64,
    pub survival_prob: f64,
    pub birth_prob: f64,
    pub birth: BirthPdf,
}

impl MotionModel {
    /// Discrete white-noise-acceleration model for state `[x, y, ẋ, ẏ]`.
    pub fn constant_velocity(
        step: f64,
        accel_std: f64,
        survival_prob: f64,
        birth_prob: f64,
        birth: BirthPdf,
    ) -> Result<Self, ModelError> {
        let t = step;
        #[rustfmt::skip]
        let transition = Matrix4::new(
            1.0, 0.0, t,   0.0,
            0.0, 1.0, 0.0, t,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let noise_gain = SMatrix::<f64, 4, 2>::new(
            0.5 * t * t, 0.0,
            0.0,         0.5 * t * t,
            t,           0.0,
            0.0,         t,
        );
        let model = Self {
            transition,
            noise_gain,
            accel_std,
            step,
            survival_prob,
            birth_prob,
            birth,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self
            .transition
            .iter()
            .chain(self.noise_gain.iter())
            .all(|v| v.is_finite())
        {
            return Err(invalid_param("transition", "non-finite entries"));
        }
        if !(self.accel_std >= 0.0 && self.accel_std.is_finite()) {
            return Err(invalid_param("accel_std", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.survival_prob) {
            return Err(invalid_param("survival_prob", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.birth_prob) {
            return Err(invalid_param("birth_prob", "must lie in [0, 1]"));
        }
        if !(self.birth.velocity_std >= 0.0) {
            return Err(invalid_param("birth.velocity_std", "must be non-negative"));
        }
        self.birth.roi.validate()
    }

    /// `A x + W u` for a given noise realization.
    #[inline]
    pub fn propagate(&self, x: &[f64; 4], u: [f64; 2]) -> [f64; 4] {
        let a = &self.transition;
        let w = &self.noise_gain;
        let mut out = [0.0; 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = a[(i, 0)] * x[0]
                + a[(i, 1)] * x[1]
                + a[(i, 2)] * x[2]
                + a[(i, 3)] * x[3]
                + w[(i, 0)] * u[0]
                + w[(i, 1)] * u[1];
        }
        out
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, x: &[f64; 4], rng: &mut R) -> [f64; 4] {
        let u0: f64 = rng.sample(StandardNormal);
        let u1: f64 = rng.sample(StandardNormal);
        self.propagate(x, [self.accel_std * u0, self.accel_std * u1])
    }
}

/// Transition density `f(x_next | x_prev, ℓ)`.
///
/// The process noise enters through the 4×2 gain `W`, so the density is
/// supported on the plane `A x_prev + range(W)`. The value returned is the
/// density with respect to area on that plane: zero off the plane, and
/// `N(u; 0, σ² I) / sqrt(det WᵀW)` at `x_next = A x_prev + W u`. The
/// dynamics here do not depend on the class.
pub fn kinematic_transition_density(
    x_next: &KinematicState,
    x_prev: &KinematicState,
    model: &MotionModel,
    _class_index: usize,
) -> f64 {
    let next = Vector4::from(x_next.to_array());
    let prev = Vector4::from(x_prev.to_array());
    let residual = next - model.transition * prev;
    if !residual.iter().all(|v| v.is_finite()) {
        return 0.0;
    }
    let w = &model.noise_gain;
    let gram: Matrix2<f64> = w.transpose() * w;
    let Some(gram_inv) = gram.try_inverse() else {
        return 0.0;
    };
    let u: Vector2<f64> = gram_inv * (w.transpose() * residual);
    let off_plane = residual - w * u;
    let scale = 1.0 + residual.norm();
    if off_plane.norm() > 1e-9 * scale {
        return 0.0;
    }
    let sigma = model.accel_std;
    if sigma == 0.0 {
        return if u.norm() == 0.0 { f64::INFINITY } else { 0.0 };
    }
    let var = sigma * sigma;
    let density = (-0.5 * u.norm_squared() / var).exp() / (2.0 * PI * var) / gram.determinant().sqrt();
    if density.is_finite() {
        density
    } else {
        0.0
    }
}

/// `p(ℓ_n | x_{n-1}, r_{n-1}, ℓ_{n-1})`: uniform for a non-existing target,
/// otherwise column `prev_class` of `D`.
pub fn class_transition_pmf(
    prev_exists: bool,
    prev_class: usize,
    _x_prev: &KinematicState,
    transition: &ClassTransitionMatrix,
) -> Result<Vec<f64>, ModelError> {
    let c = transition.num_classes();
    if prev_class >= c {
        return Err(ModelError::ClassOutOfRange {
            index: prev_class,
            classes: c,
        });
    }
    if !prev_exists {
        return Ok(vec![1.0 / c as f64; c]);
    }
    Ok((0..c).map(|i| transition.get(i, prev_class)).collect())
}

/// Gaussian range/bearing likelihood `f(q | x)`; the bearing residual is
/// wrapped to `(-π, π]`. Zero when the target sits on the sensor.
pub fn measurement_likelihood(range: f64, bearing: f64, x: &KinematicState, sensor: &SensorModel) -> f64 {
    let Some((pr, pb)) = sensor.polar(x.position) else {
        return 0.0;
    };
    let dr = (range - pr) / sensor.sigma_range;
    let db = wrap_angle(bearing - pb) / sensor.sigma_bearing;
    (sensor.log_likelihood_peak() - 0.5 * (dr * dr + db * db)).exp()
}

/// Clutter density `f₀(q)` in range/bearing coordinates: proportional to
/// range and uniform in bearing on the image of the ROI, zero elsewhere.
///
/// Since `dA = r dr dθ`, this is the uniform Cartesian density over the ROI
/// mapped into polar coordinates, so the normalizer is the ROI area.
pub fn clutter_density(range: f64, bearing: f64, sensor: &SensorModel) -> f64 {
    if range < 0.0 || !range.is_finite() || !bearing.is_finite() {
        return 0.0;
    }
    let p = sensor.to_cartesian(range, bearing);
    if sensor.roi.contains(p) {
        range / sensor.roi.area()
    } else {
        0.0
    }
}

/// `G[ζ][ℓ] f(q|x) / (μ p₀[ζ] f₀(q))`: the per-measurement likelihood ratio of
/// an existing target of class `ℓ` against clutter.
pub fn augmented_likelihood_ratio(
    z: &AugmentedMeasurement,
    x: &KinematicState,
    class_index: usize,
    sensor: &SensorModel,
) -> Result<f64, ModelError> {
    let classes = sensor.num_classes();
    if class_index >= classes {
        return Err(ModelError::ClassOutOfRange {
            index: class_index,
            classes,
        });
    }
    if z.class_estimate > classes {
        return Err(ModelError::ClassEstimateOutOfRange {
            zeta: z.class_estimate,
            classes,
        });
    }
    let numerator =
        sensor.confusion.get(z.class_estimate, class_index) * measurement_likelihood(z.range, z.bearing, x, sensor);
    let denominator = sensor.clutter_mean
        * sensor.clutter_class_pmf.get(z.class_estimate)
        * clutter_density(z.range, z.bearing, sensor);
    if numerator == 0.0 {
        return Ok(0.0);
    }
    if denominator == 0.0 {
        return Err(ModelError::InfiniteRatio { zeta: z.class_estimate });
    }
    Ok(numerator / denominator)
}

/// Precomputed classifier factors `G[ζ][ℓ] / p₀[ζ]`, or all ones when the
/// classifier output is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFactorTable {
    classes: usize,
    factors: Vec<f64>,
}

impl ClassFactorTable {
    pub fn new(sensor: &SensorModel, enabled: bool) -> Self {
        let classes = sensor.num_classes();
        let mut factors = vec![1.0; (classes + 1) * classes];
        if enabled {
            for z in 0..=classes {
                let p0 = sensor.clutter_class_pmf.get(z);
                for c in 0..classes {
                    let g = sensor.confusion.get(z, c);
                    factors[z * classes + c] = if g == 0.0 {
                        0.0
                    } else if p0 == 0.0 {
                        f64::INFINITY
                    } else {
                        g / p0
                    };
                }
            }
        }
        Self { classes, factors }
    }

    pub fn disabled(classes: usize) -> Self {
        Self {
            classes,
            factors: vec![1.0; (classes + 1) * classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    /// Factors for one classifier output, indexed by class.
    #[inline]
    pub fn row(&self, zeta: usize) -> &[f64] {
        &self.factors[zeta * self.classes..(zeta + 1) * self.classes]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn standard_confusion() -> (ConfusionMatrix, ClutterClassPmf) {
        let g = ConfusionMatrix::from_rows(vec![
            vec![0.05, 0.05, 0.05],
            vec![0.85, 0.05, 0.05],
            vec![0.05, 0.85, 0.05],
            vec![0.05, 0.05, 0.85],
        ])
        .unwrap();
        let p0 = ClutterClassPmf::new(vec![0.85, 0.05, 0.05, 0.05]).unwrap();
        (g, p0)
    }

    fn sensor() -> SensorModel {
        let (confusion, clutter_class_pmf) = standard_confusion();
        SensorModel {
            position: [0.0, -3000.0],
            sigma_range: 5.0,
            sigma_bearing: 0.1f64.to_radians(),
            detection_prob: 0.9,
            clutter_mean: 20.0,
            roi: Roi::default(),
            confusion,
            clutter_class_pmf,
        }
    }

    fn motion() -> MotionModel {
        let birth = BirthPdf {
            roi: Roi::default(),
            velocity_std: 1.0,
        };
        MotionModel::constant_velocity(2.0, 0.1, 0.999, 0.01, birth).unwrap()
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(359f64.to_radians()), -1f64.to_radians(), epsilon = 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn stochastic_constructors_validate() {
        assert!(ClassTransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.6, 0.5]]).is_err());
        assert!(ClassTransitionMatrix::from_rows(vec![vec![1.2, 0.0], vec![-0.2, 1.0]]).is_err());
        assert!(ConfusionMatrix::from_rows(vec![vec![0.5], vec![0.5], vec![0.1]]).is_err());
        assert!(ClutterClassPmf::new(vec![0.3, 0.3]).is_err());
        // within 1e-6: accepted and renormalized
        let d = ClassTransitionMatrix::from_rows(vec![vec![0.5 + 4e-7, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!((d.get(0, 0) + d.get(1, 0) - 1.0).abs() < 1e-12);
        let (g, _) = standard_confusion();
        for j in 0..3 {
            let s: f64 = g.column(j).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sticky_single_class_is_identity() {
        let d = ClassTransitionMatrix::sticky(1, 0.95).unwrap();
        assert_eq!(d.get(0, 0), 1.0);
        let d = ClassTransitionMatrix::sticky(3, 0.95).unwrap();
        assert_relative_eq!(d.get(1, 0), 0.025, epsilon = 1e-15);
    }

    #[test]
    fn class_transition_cases() {
        let x = KinematicState::new([0.0, 0.0], [0.0, 0.0]);
        let d = ClassTransitionMatrix::sticky(3, 0.95).unwrap();
        let p = class_transition_pmf(false, 0, &x, &d).unwrap();
        for v in p {
            assert_relative_eq!(v, 1.0 / 3.0);
        }
        let p = class_transition_pmf(true, 1, &x, &ClassTransitionMatrix::identity(3)).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
        // class 2 in one-based labels
        let p = class_transition_pmf(true, 1, &x, &d).unwrap();
        assert_relative_eq!(p[0], 0.025, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.95, epsilon = 1e-15);
        assert_relative_eq!(p[2], 0.025, epsilon = 1e-15);
        assert!(matches!(
            class_transition_pmf(true, 3, &x, &d),
            Err(ModelError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn transition_density_mode_and_symmetry() {
        let m = motion();
        let prev = KinematicState::new([10.0, -5.0], [1.0, 0.5]);
        let mean = KinematicState::from_array(m.propagate(&prev.to_array(), [0.0, 0.0]));
        let mode = kinematic_transition_density(&mean, &prev, &m, 0);
        // W for a 2 s step: WᵀW = 8 I, sqrt(det) = 8
        let expected = 1.0 / (2.0 * PI * 0.01) / 8.0;
        assert_relative_eq!(mode, expected, max_relative = 1e-12);

        let plus = KinematicState::from_array(m.propagate(&prev.to_array(), [0.1, 0.0]));
        let minus = KinematicState::from_array(m.propagate(&prev.to_array(), [-0.1, 0.0]));
        let dp = kinematic_transition_density(&plus, &prev, &m, 0);
        let dm = kinematic_transition_density(&minus, &prev, &m, 0);
        assert_relative_eq!(dp, dm, max_relative = 1e-12);
        assert_relative_eq!(dp, mode * (-0.5f64).exp(), max_relative = 1e-9);

        // off the noise plane
        let mut off = mean;
        off.position[0] += 1.0;
        assert_eq!(kinematic_transition_density(&off, &prev, &m, 0), 0.0);
        // far away underflows to zero, not NaN
        let far = KinematicState::from_array(m.propagate(&prev.to_array(), [1e3, 0.0]));
        assert_eq!(kinematic_transition_density(&far, &prev, &m, 0), 0.0);
    }

    #[test]
    fn transition_density_integrates_to_one() {
        // Midpoint quadrature over the noise plane x = A x_prev + W u with
        // area element sqrt(det WᵀW) du, |u_i| ≤ 5σ.
        let m = motion();
        let prev = KinematicState::new([3.0, 4.0], [-1.0, 0.2]);
        let sigma = m.accel_std;
        let n = 400;
        let h = 10.0 * sigma / n as f64;
        let area_element = 8.0;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let u = [-5.0 * sigma + (i as f64 + 0.5) * h, -5.0 * sigma + (j as f64 + 0.5) * h];
                let x = KinematicState::from_array(m.propagate(&prev.to_array(), u));
                total += kinematic_transition_density(&x, &prev, &m, 0) * area_element * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn likelihood_mode_offset_and_wrap() {
        let s = sensor();
        let x = KinematicState::new([30.0, 40.0], [0.0, 0.0]);
        let (r, b) = s.polar(x.position).unwrap();
        let peak = 1.0 / (2.0 * PI * s.sigma_range * s.sigma_bearing);
        assert_relative_eq!(measurement_likelihood(r, b, &x, &s), peak, max_relative = 1e-12);
        assert_relative_eq!(
            measurement_likelihood(r + 5.0, b, &x, &s),
            peak * (-0.5f64).exp(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            measurement_likelihood(r, b + 2.0 * PI, &x, &s),
            measurement_likelihood(r, b, &x, &s),
            max_relative = 1e-9
        );
        let on_sensor = KinematicState::new(s.position, [0.0, 0.0]);
        assert_eq!(measurement_likelihood(r, b, &on_sensor, &s), 0.0);
    }

    #[test]
    fn bearing_residual_wraps_across_pi() {
        let mut s = sensor();
        s.position = [3000.0, 0.0];
        // target straight west of the sensor: bearing π
        let x = KinematicState::new([0.0, 0.0], [0.0, 0.0]);
        let b = PI - 0.5f64.to_radians();
        let near = measurement_likelihood(3000.0, b, &x, &s);
        let wrapped = measurement_likelihood(3000.0, b - 2.0 * PI, &x, &s);
        assert!(near > 0.0);
        assert_relative_eq!(near, wrapped, max_relative = 1e-9);
        // 359° residual behaves as -1°
        let m1 = measurement_likelihood(3000.0, PI + 359f64.to_radians(), &x, &s);
        let m2 = measurement_likelihood(3000.0, PI - 1f64.to_radians(), &x, &s);
        assert_relative_eq!(m1, m2, max_relative = 1e-9);
    }

    #[test]
    fn clutter_density_support_and_ratio() {
        let s = sensor();
        assert_eq!(clutter_density(3500.0, PI / 2.0, &s), 0.0);
        let (r1, b1) = s.polar([0.0, -100.0]).unwrap();
        let (r2, b2) = s.polar([50.0, 120.0]).unwrap();
        let ratio = clutter_density(r1, b1, &s) / clutter_density(r2, b2, &s);
        assert_relative_eq!(ratio, r1 / r2, max_relative = 1e-12);
    }

    #[test]
    fn clutter_density_integrates_to_one_monte_carlo() {
        // Uniform sampling of the bounding (range, bearing) box of the ROI.
        let s = sensor();
        let corners = [
            [s.roi.x_min, s.roi.y_min],
            [s.roi.x_min, s.roi.y_max],
            [s.roi.x_max, s.roi.y_min],
            [s.roi.x_max, s.roi.y_max],
        ];
        let polar: Vec<_> = corners.iter().map(|c| s.polar(*c).unwrap()).collect();
        let nearest = [
            s.position[0].clamp(s.roi.x_min, s.roi.x_max),
            s.position[1].clamp(s.roi.y_min, s.roi.y_max),
        ];
        let r_min = s.polar(nearest).unwrap().0 - 1.0;
        let r_max = polar.iter().map(|p| p.0).fold(0.0, f64::max) + 1.0;
        let b_min = polar.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - 1e-3;
        let b_max = polar.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let r = rng.random_range(r_min..r_max);
            let b = rng.random_range(b_min..b_max);
            acc += clutter_density(r, b, &s);
        }
        let integral = acc / n as f64 * (r_max - r_min) * (b_max - b_min);
        assert!((integral - 1.0).abs() < 1e-2, "integral {integral}");
    }

    #[test]
    fn augmented_ratio_classifier_factor() {
        let s = sensor();
        let x = KinematicState::new([10.0, 20.0], [0.0, 0.0]);
        let (r, b) = s.polar(x.position).unwrap();
        let kin = measurement_likelihood(r + 2.0, b, &x, &s) / (s.clutter_mean * clutter_density(r + 2.0, b, &s));
        for c in 0..3 {
            let z = AugmentedMeasurement::new(r + 2.0, b, c + 1);
            let ratio = augmented_likelihood_ratio(&z, &x, c, &s).unwrap();
            assert_relative_eq!(ratio, kin * 17.0, max_relative = 1e-12);
            let z0 = AugmentedMeasurement::new(r + 2.0, b, 0);
            let ratio0 = augmented_likelihood_ratio(&z0, &x, c, &s).unwrap();
            assert_relative_eq!(ratio0, kin * 0.05 / 0.85, max_relative = 1e-12);
        }
        // uninformative classifier reduces to the kinematic ratio
        let mut flat = s.clone();
        flat.confusion = ConfusionMatrix::uninformative(&flat.clutter_class_pmf);
        for zeta in 0..=3 {
            let z = AugmentedMeasurement::new(r + 2.0, b, zeta);
            assert_relative_eq!(
                augmented_likelihood_ratio(&z, &x, 1, &flat).unwrap(),
                kin,
                max_relative = 1e-12
            );
        }
        // doubling μ halves the ratio
        let mut double = s.clone();
        double.clutter_mean *= 2.0;
        let z = AugmentedMeasurement::new(r + 2.0, b, 2);
        let a = augmented_likelihood_ratio(&z, &x, 1, &s).unwrap();
        let h = augmented_likelihood_ratio(&z, &x, 1, &double).unwrap();
        assert_eq!(a, 2.0 * h);
    }

    #[test]
    fn augmented_ratio_degenerate_clutter_model() {
        let mut s = sensor();
        s.clutter_class_pmf = ClutterClassPmf::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let x = KinematicState::new([10.0, 20.0], [0.0, 0.0]);
        let (r, b) = s.polar(x.position).unwrap();
        let z = AugmentedMeasurement::new(r, b, 1);
        assert_eq!(
            augmented_likelihood_ratio(&z, &x, 0, &s),
            Err(ModelError::InfiniteRatio { zeta: 1 })
        );
        let z = AugmentedMeasurement::new(r, b, 7);
        assert!(matches!(
            augmented_likelihood_ratio(&z, &x, 0, &s),
            Err(ModelError::ClassEstimateOutOfRange { .. })
        ));
    }

    #[test]
    fn uninformative_factor_table_is_exactly_one() {
        let mut s = sensor();
        s.confusion = ConfusionMatrix::uninformative(&s.clutter_class_pmf);
        let t = ClassFactorTable::new(&s, true);
        assert_eq!(t, ClassFactorTable::disabled(3));
    }

    #[test]
    fn sensor_validation() {
        let mut s = sensor();
        assert!(s.validate().is_ok());
        s.sigma_range = 0.0;
        assert!(s.validate().is_err());
        let mut s = sensor();
        s.roi.x_max = s.roi.x_min;
        assert!(s.validate().is_err());
    }

    #[test]
    fn permutation_helpers_roundtrip_columns() {
        let (g, p0) = standard_confusion();
        let perm = [2, 0, 1];
        let gp = g.permuted(&perm);
        for z in 0..=3 {
            for c in 0..3 {
                let nz = if z == 0 { 0 } else { perm[z - 1] + 1 };
                assert_eq!(gp.get(nz, perm[c]), g.get(z, c));
            }
        }
        let pp = p0.permuted(&perm);
        assert_eq!(pp.get(0), p0.get(0));
    }
}
