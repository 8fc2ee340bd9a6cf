//! Set-valued tracking error metrics and the assignment solver behind them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("sequences differ in length: {truth} truth steps, {estimate} estimate steps")]
    LengthMismatch { truth: usize, estimate: usize },
    #[error("every point needs a label for track metrics (step {step})")]
    MissingLabel { step: usize },
    #[error("invalid metric parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub position: [f64; 2],
    pub label: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub points: Vec<LabeledPoint>,
}

impl PointSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_positions(positions: &[[f64; 2]]) -> Self {
        Self {
            points: positions
                .iter()
                .map(|&position| LabeledPoint { position, label: None })
                .collect(),
        }
    }

    pub fn push(&mut self, position: [f64; 2], label: Option<u64>) {
        self.points.push(LabeledPoint { position, label });
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, column)` pairs, one per row when rows ≤ columns.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Minimum-cost matching of `min(rows, cols)` pairs (Hungarian method with
/// shortest augmenting paths, `O(n² m)`).
pub fn optimal_assignment(cost: &[Vec<f64>]) -> Assignment {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            cost: 0.0,
        };
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        let t = optimal_assignment(&transposed);
        let mut pairs: Vec<_> = t.pairs.into_iter().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        return Assignment { pairs, cost: t.cost };
    }
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    Assignment { pairs, cost: total }
}

fn check_params(order: f64, cutoff: f64) {
    assert!(order >= 1.0 && cutoff > 0.0, "order must be ≥ 1 and cutoff positive");
}

/// `Σ_{assigned} min(d, c)^p` under the optimal assignment with a custom
/// base distance.
fn assigned_cost<F>(x: &PointSet, y: &PointSet, order: f64, base: F) -> f64
where
    F: Fn(&LabeledPoint, &LabeledPoint) -> f64,
{
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    let matrix: Vec<Vec<f64>> = x
        .points
        .iter()
        .map(|a| y.points.iter().map(|b| base(a, b).powf(order)).collect())
        .collect();
    optimal_assignment(&matrix).cost
}

/// OSPA distance of order `p` with cutoff `c` (m).
pub fn ospa(truth: &PointSet, est: &PointSet, order: f64, cutoff: f64) -> f64 {
    check_params(order, cutoff);
    ospa_with(truth, est, order, cutoff, |a, b| {
        dist(a.position, b.position).min(cutoff)
    })
}

fn ospa_with<F>(x: &PointSet, y: &PointSet, order: f64, cutoff: f64, base: F) -> f64
where
    F: Fn(&LabeledPoint, &LabeledPoint) -> f64,
{
    let n = x.len().max(y.len());
    if n == 0 {
        return 0.0;
    }
    let unmatched = x.len().abs_diff(y.len()) as f64;
    let total = assigned_cost(x, y, order, base) + cutoff.powf(order) * unmatched;
    (total / n as f64).powf(1.0 / order)
}

/// GOSPA distance with `α = 2`: unmatched points cost `c^p / 2` each and the
/// sum is not normalized by cardinality.
pub fn gospa(truth: &PointSet, est: &PointSet, order: f64, cutoff: f64) -> f64 {
    check_params(order, cutoff);
    let unmatched = truth.len().abs_diff(est.len()) as f64;
    let total = assigned_cost(truth, est, order, |a, b| dist(a.position, b.position).min(cutoff))
        + 0.5 * cutoff.powf(order) * unmatched;
    total.powf(1.0 / order)
}

fn require_labels(seq: &[PointSet]) -> Result<(), MetricError> {
    for (step, set) in seq.iter().enumerate() {
        if set.points.iter().any(|p| p.label.is_none()) {
            return Err(MetricError::MissingLabel { step });
        }
    }
    Ok(())
}

/// Sorted distinct labels of a sequence.
fn labels_of(seq: &[PointSet]) -> Vec<u64> {
    let mut labels: Vec<u64> = seq
        .iter()
        .flat_map(|s| s.points.iter().filter_map(|p| p.label))
        .collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}

/// Correspondence from estimate labels to truth labels minimizing the
/// time-summed track distance.
pub fn label_correspondence(
    truth: &[PointSet],
    est: &[PointSet],
    order: f64,
    cutoff: f64,
) -> Result<Vec<(u64, u64)>, MetricError> {
    if truth.len() != est.len() {
        return Err(MetricError::LengthMismatch {
            truth: truth.len(),
            estimate: est.len(),
        });
    }
    require_labels(truth)?;
    require_labels(est)?;
    let truth_labels = labels_of(truth);
    let est_labels = labels_of(est);
    if truth_labels.is_empty() || est_labels.is_empty() {
        return Ok(Vec::new());
    }
    let cp = cutoff.powf(order);
    let mut matrix = vec![vec![0.0; est_labels.len()]; truth_labels.len()];
    for (t, e) in truth.iter().zip(est) {
        for (i, &tl) in truth_labels.iter().enumerate() {
            let tp = t.points.iter().find(|p| p.label == Some(tl));
            for (j, &el) in est_labels.iter().enumerate() {
                let ep = e.points.iter().find(|p| p.label == Some(el));
                matrix[i][j] += match (tp, ep) {
                    (Some(a), Some(b)) => dist(a.position, b.position).min(cutoff).powf(order),
                    (None, None) => 0.0,
                    _ => cp,
                };
            }
        }
    }
    let a = optimal_assignment(&matrix);
    Ok(a.pairs
        .into_iter()
        .map(|(i, j)| (est_labels[j], truth_labels[i]))
        .collect())
}

/// Per-step OSPA-T: OSPA whose base distance adds `label_penalty` to pairs
/// whose labels disagree with the global track correspondence.
pub fn ospa_t(
    truth: &[PointSet],
    est: &[PointSet],
    order: f64,
    cutoff: f64,
    label_penalty: f64,
) -> Result<Vec<f64>, MetricError> {
    check_params(order, cutoff);
    let correspondence = label_correspondence(truth, est, order, cutoff)?;
    let mapped = |l: Option<u64>| correspondence.iter().find(|(e, _)| Some(*e) == l).map(|(_, t)| *t);
    let lp = label_penalty.powf(order);
    Ok(truth
        .iter()
        .zip(est)
        .map(|(t, e)| {
            ospa_with(t, e, order, cutoff, |a, b| {
                let d = dist(a.position, b.position);
                let mismatch = mapped(b.label) != a.label;
                if mismatch {
                    (d.powf(order) + lp).powf(1.0 / order).min(cutoff)
                } else {
                    d.min(cutoff)
                }
            })
        })
        .collect())
}

/// Estimates not matched to a truth point within `gate` under the per-step
/// optimal assignment.
pub fn false_estimates(truth: &PointSet, est: &PointSet, cutoff: f64, gate: f64) -> usize {
    if est.is_empty() {
        return 0;
    }
    if truth.is_empty() {
        return est.len();
    }
    let matrix: Vec<Vec<f64>> = est
        .points
        .iter()
        .map(|e| {
            truth
                .points
                .iter()
                .map(|t| dist(e.position, t.position).min(cutoff))
                .collect()
        })
        .collect();
    let a = optimal_assignment(&matrix);
    let good = a
        .pairs
        .iter()
        .filter(|&&(i, j)| dist(est.points[i].position, truth.points[j].position) <= gate)
        .count();
    est.len() - good
}

/// False estimate-steps per unit area (km²) per unit time (s).
pub fn far(
    truth: &[PointSet],
    est: &[PointSet],
    roi_area_km2: f64,
    duration_s: f64,
    cutoff: f64,
    gate: f64,
) -> Result<f64, MetricError> {
    if truth.len() != est.len() {
        return Err(MetricError::LengthMismatch {
            truth: truth.len(),
            estimate: est.len(),
        });
    }
    if !(roi_area_km2 > 0.0 && duration_s > 0.0) {
        return Err(MetricError::InvalidParameter(
            "area and duration must be positive".into(),
        ));
    }
    let count: usize = truth
        .iter()
        .zip(est)
        .map(|(t, e)| false_estimates(t, e, cutoff, gate))
        .sum();
    Ok(count as f64 / (roi_area_km2 * duration_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub order: f64,
    /// Cutoff `c` (m).
    pub cutoff: f64,
    /// OSPA-T label penalty (m).
    pub label_penalty: f64,
    /// Distance (m) beyond which an estimate counts as false.
    pub far_gate: f64,
    pub roi_area_km2: f64,
    /// Duration of one step (s).
    pub step_s: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            order: 1.0,
            cutoff: 20.0,
            label_penalty: 20.0,
            far_gate: 20.0,
            roi_area_km2: 0.12,
            step_s: 2.0,
        }
    }
}

/// Time-averaged errors of one run (or the run average of several) together
/// with their per-step series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// m
    pub mgospa: f64,
    /// m
    pub mospa: f64,
    /// m
    pub mospa_t: f64,
    /// km⁻² s⁻¹
    pub far: f64,
    pub gospa_series: Vec<f64>,
    pub ospa_series: Vec<f64>,
    pub ospa_t_series: Vec<f64>,
    pub false_series: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl MetricReport {
    pub fn evaluate(truth: &[PointSet], est: &[PointSet], params: &MetricParams) -> Result<Self, MetricError> {
        if truth.len() != est.len() {
            return Err(MetricError::LengthMismatch {
                truth: truth.len(),
                estimate: est.len(),
            });
        }
        let (p, c) = (params.order, params.cutoff);
        let gospa_series: Vec<f64> = truth.iter().zip(est).map(|(t, e)| gospa(t, e, p, c)).collect();
        let ospa_series: Vec<f64> = truth.iter().zip(est).map(|(t, e)| ospa(t, e, p, c)).collect();
        let ospa_t_series = ospa_t(truth, est, p, c, params.label_penalty)?;
        let false_series: Vec<f64> = truth
            .iter()
            .zip(est)
            .map(|(t, e)| false_estimates(t, e, c, params.far_gate) as f64)
            .collect();
        let duration = truth.len() as f64 * params.step_s;
        let far = if duration > 0.0 {
            false_series.iter().sum::<f64>() / (params.roi_area_km2 * duration)
        } else {
            0.0
        };
        Ok(Self {
            mgospa: mean(&gospa_series),
            mospa: mean(&ospa_series),
            mospa_t: mean(&ospa_t_series),
            far,
            gospa_series,
            ospa_series,
            ospa_t_series,
            false_series,
        })
    }

    /// Element-wise mean of several reports of equal length.
    pub fn average(reports: &[MetricReport]) -> Option<Self> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let avg_series = |f: fn(&MetricReport) -> &Vec<f64>| -> Vec<f64> {
            (0..f(first).len())
                .map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / n)
                .collect()
        };
        Some(Self {
            mgospa: reports.iter().map(|r| r.mgospa).sum::<f64>() / n,
            mospa: reports.iter().map(|r| r.mospa).sum::<f64>() / n,
            mospa_t: reports.iter().map(|r| r.mospa_t).sum::<f64>() / n,
            far: reports.iter().map(|r| r.far).sum::<f64>() / n,
            gospa_series: avg_series(|r| &r.gospa_series),
            ospa_series: avg_series(|r| &r.ospa_series),
            ospa_t_series: avg_series(|r| &r.ospa_t_series),
            false_series: avg_series(|r| &r.false_series),
        })
    }
}
