//! Iterative probabilistic data association for one sensor and one scan.
//!
//! PT `k` has association variable `a_k ∈ {0..M}` (0: no measurement) and
//! measurement `m` has `b_m ∈ {0..K}` (0: clutter). PTs and measurements are
//! numbered from 1 in those domains, and stored from 0 in the tables.
//!
//! Because the consistency indicator only distinguishes "a = m" from "a ≠ m"
//! (and "b = k" from "b ≠ k"), every message takes just two distinct values.
//! [`run_bp`] passes their ratios; [`run_bp_literal`] evaluates the full sums
//! over the message domains and serves as its reference.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssociationError {
    #[error("row {row}: {reason}")]
    InvalidBeta { row: usize, reason: String },
    #[error("non-finite message at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("{configurations} association configurations exceed the enumeration limit")]
    TooLarge { configurations: f64 },
}

/// `β_k(a)` for `K` PTs and `M` measurements, stored as `K` rows of length `M + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaTable {
    num_targets: usize,
    num_measurements: usize,
    data: Vec<f64>,
}

impl BetaTable {
    pub fn new(num_targets: usize, num_measurements: usize, data: Vec<f64>) -> Result<Self, AssociationError> {
        let width = num_measurements + 1;
        if data.len() != num_targets * width {
            return Err(AssociationError::InvalidBeta {
                row: 0,
                reason: format!("expected {} entries, got {}", num_targets * width, data.len()),
            });
        }
        for (k, row) in data.chunks(width).enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(AssociationError::InvalidBeta {
                    row: k,
                    reason: "entries must be finite and non-negative".into(),
                });
            }
            if row.iter().all(|v| *v == 0.0) {
                return Err(AssociationError::InvalidBeta {
                    row: k,
                    reason: "all entries are zero".into(),
                });
            }
        }
        Ok(Self {
            num_targets,
            num_measurements,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssociationError> {
        let m = rows.first().map_or(0, |r| r.len().saturating_sub(1));
        if rows.iter().any(|r| r.len() != m + 1) {
            return Err(AssociationError::InvalidBeta {
                row: 0,
                reason: "rows differ in length".into(),
            });
        }
        Self::new(rows.len(), m, rows.concat())
    }

    pub fn num_targets(&self) -> usize {
        self.num_targets
    }

    pub fn num_measurements(&self) -> usize {
        self.num_measurements
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.num_measurements + 1;
        &self.data[k * w..(k + 1) * w]
    }
}

/// `η_k(a)`, normalized per PT to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaTable {
    num_targets: usize,
    num_measurements: usize,
    data: Vec<f64>,
    /// Iterations actually run.
    pub iterations: usize,
    pub converged: bool,
}

impl EtaTable {
    pub fn num_targets(&self) -> usize {
        self.num_targets
    }

    pub fn num_measurements(&self) -> usize {
        self.num_measurements
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.num_measurements + 1;
        &self.data[k * w..(k + 1) * w]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    pub max_iterations: usize,
    /// Stop once the largest change of a normalized ν message drops below this.
    pub tolerance: f64,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            tolerance: 1e-6,
        }
    }
}

/// `Ψ_{km}(a, b)`: zero iff exactly one of `a = m`, `b = k` holds.
/// `k ∈ 1..=K`, `m ∈ 1..=M`, `a ∈ 0..=M`, `b ∈ 0..=K`.
pub fn consistency_indicator(
    a: usize,
    b: usize,
    k: usize,
    m: usize,
    num_targets: usize,
    num_measurements: usize,
) -> Result<u8, AssociationError> {
    if k == 0 || k > num_targets || m == 0 || m > num_measurements {
        return Err(AssociationError::OutOfRange(format!(
            "k = {k}, m = {m} for K = {num_targets}, M = {num_measurements}"
        )));
    }
    if a > num_measurements || b > num_targets {
        return Err(AssociationError::OutOfRange(format!(
            "a = {a}, b = {b} for K = {num_targets}, M = {num_measurements}"
        )));
    }
    Ok(psi(a, b, k, m))
}

#[inline]
fn psi(a: usize, b: usize, k: usize, m: usize) -> u8 {
    u8::from((a == m) == (b == k))
}

/// Normalized ν_{m→k} as (value at a = m, value at any other a).
#[inline]
fn normalized_nu(rho: f64, num_measurements: usize) -> (f64, f64) {
    let z = rho + num_measurements as f64;
    (rho / z, 1.0 / z)
}

/// Association message passing in ratio form, `O(K·M·(K + M))` per iteration.
///
/// `ρ_{mk} = ν_{m→k}(m) / ν_{m→k}(a≠m)` and `σ_{km} = ζ_{k→m}(k) / ζ_{k→m}(b≠k)`:
///
/// - `ρ_{mk} = 1 / (1 + Σ_{k'≠k} σ_{k'm})`
/// - `σ_{km} = β_k(m) / (β_k(0) + Σ_{a∉{0,m}} β_k(a) ρ_{ak})`
///
/// and `η_k ∝ (1, ρ_{1k}, …, ρ_{Mk})`.
pub fn run_bp(beta: &BetaTable, options: &BpOptions) -> Result<EtaTable, AssociationError> {
    let kk = beta.num_targets;
    let mm = beta.num_measurements;
    let mut sigma = vec![0.0; kk * mm];
    let mut rho = vec![1.0; kk * mm];
    let mut prev_rho = vec![f64::NAN; kk * mm];

    update_sigma(beta, &rho, &mut sigma);
    let mut iterations = 0;
    let mut converged = false;
    for p in 1..=options.max_iterations.max(1) {
        iterations = p;
        for m in 0..mm {
            for k in 0..kk {
                let others: f64 = (0..kk).filter(|&q| q != k).map(|q| sigma[q * mm + m]).sum();
                let r = 1.0 / (1.0 + others);
                if r.is_nan() {
                    return Err(AssociationError::NonFinite { iteration: p });
                }
                rho[k * mm + m] = r;
            }
        }
        let delta = rho
            .iter()
            .zip(&prev_rho)
            .map(|(&r, &q)| {
                let (a, b) = normalized_nu(r, mm);
                let (c, d) = normalized_nu(q, mm);
                (a - c).abs().max((b - d).abs())
            })
            .fold(0.0, f64::max);
        if p > 1 && delta < options.tolerance {
            converged = true;
            break;
        }
        if p == options.max_iterations.max(1) {
            break;
        }
        prev_rho.copy_from_slice(&rho);
        update_sigma(beta, &rho, &mut sigma);
    }

    let mut data = Vec::with_capacity(kk * (mm + 1));
    for k in 0..kk {
        let start = data.len();
        data.push(1.0);
        data.extend((0..mm).map(|m| rho[k * mm + m]));
        let total: f64 = data[start..].iter().sum();
        data[start..].iter_mut().for_each(|v| *v /= total);
    }
    Ok(EtaTable {
        num_targets: kk,
        num_measurements: mm,
        data,
        iterations,
        converged,
    })
}

fn update_sigma(beta: &BetaTable, rho: &[f64], sigma: &mut [f64]) {
    let mm = beta.num_measurements;
    for k in 0..beta.num_targets {
        let row = beta.row(k);
        let rho_k = &rho[k * mm..(k + 1) * mm];
        for m in 0..mm {
            let numerator = row[m + 1];
            sigma[k * mm + m] = if numerator == 0.0 {
                0.0
            } else {
                let mut denominator = row[0];
                for a in 0..mm {
                    if a != m {
                        denominator += row[a + 1] * rho_k[a];
                    }
                }
                numerator / denominator
            };
        }
    }
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
}

/// The same message schedule as [`run_bp`], evaluated with full sums over the
/// message domains and the indicator `Ψ`.
pub fn run_bp_literal(beta: &BetaTable, options: &BpOptions) -> Result<EtaTable, AssociationError> {
    let kk = beta.num_targets;
    let mm = beta.num_measurements;
    // zeta[k][m][b], b ∈ 0..=K ; nu[m][k][a], a ∈ 0..=M
    let mut zeta = vec![vec![vec![0.0; kk + 1]; mm]; kk];
    let mut nu = vec![vec![vec![1.0; mm + 1]; kk]; mm];
    let mut prev_nu: Option<Vec<Vec<Vec<f64>>>> = None;

    let zeta_update = |nu: &Vec<Vec<Vec<f64>>>, zeta: &mut Vec<Vec<Vec<f64>>>, initial: bool| {
        for k in 0..kk {
            let row = beta.row(k);
            for m in 0..mm {
                for b in 0..=kk {
                    let mut s = 0.0;
                    for (a, &ba) in row.iter().enumerate() {
                        if psi(a, b, k + 1, m + 1) == 0 {
                            continue;
                        }
                        let mut prod = ba;
                        if !initial {
                            for (mp, nu_mp) in nu.iter().enumerate() {
                                if mp != m {
                                    prod *= nu_mp[k][a];
                                }
                            }
                        }
                        s += prod;
                    }
                    zeta[k][m][b] = s;
                }
                normalize(&mut zeta[k][m]);
            }
        }
    };

    zeta_update(&nu, &mut zeta, true);
    let mut iterations = 0;
    let mut converged = false;
    for p in 1..=options.max_iterations.max(1) {
        iterations = p;
        for m in 0..mm {
            for k in 0..kk {
                for a in 0..=mm {
                    let mut s = 0.0;
                    for b in 0..=kk {
                        if psi(a, b, k + 1, m + 1) == 0 {
                            continue;
                        }
                        let mut prod = 1.0;
                        for (kp, zeta_kp) in zeta.iter().enumerate() {
                            if kp != k {
                                prod *= zeta_kp[m][b];
                            }
                        }
                        s += prod;
                    }
                    nu[m][k][a] = s;
                }
                normalize(&mut nu[m][k]);
                if nu[m][k].iter().any(|v| !v.is_finite()) {
                    return Err(AssociationError::NonFinite { iteration: p });
                }
            }
        }
        if let Some(prev) = &prev_nu {
            let delta = nu
                .iter()
                .flatten()
                .flatten()
                .zip(prev.iter().flatten().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if delta < options.tolerance {
                converged = true;
                break;
            }
        }
        if p == options.max_iterations.max(1) {
            break;
        }
        prev_nu = Some(nu.clone());
        zeta_update(&nu, &mut zeta, false);
    }

    let mut data = Vec::with_capacity(kk * (mm + 1));
    for k in 0..kk {
        let mut eta: Vec<f64> = (0..=mm).map(|a| nu.iter().map(|nu_m| nu_m[k][a]).product()).collect();
        normalize(&mut eta);
        data.extend(eta);
    }
    Ok(EtaTable {
        num_targets: kk,
        num_measurements: mm,
        data,
        iterations,
        converged,
    })
}

/// Approximate association marginals `p(a_k) ∝ β_k(a) η_k(a)`, one row per PT.
pub fn association_marginals(beta: &BetaTable, eta: &EtaTable) -> Vec<Vec<f64>> {
    (0..beta.num_targets)
        .map(|k| {
            let mut p: Vec<f64> = beta.row(k).iter().zip(eta.row(k)).map(|(b, e)| b * e).collect();
            normalize(&mut p);
            p
        })
        .collect()
}

/// Largest number of joint configurations [`exact_association_oracle`] enumerates.
pub const ORACLE_LIMIT: f64 = 1e7;

fn count_matchings(k: usize, m: usize) -> f64 {
    // Σ_j C(K, j) C(M, j) j!
    let mut total = 0.0;
    let mut term = 1.0;
    for j in 0..=k.min(m) {
        total += term;
        term *= (k - j) as f64 * (m - j) as f64 / (j + 1) as f64;
    }
    total
}

/// Exact association marginals by enumeration of every one-to-one partial
/// matching `(a_1, …, a_K)`, each weighted by `∏_k β_k(a_k)`.
pub fn exact_association_oracle(beta: &BetaTable) -> Result<Vec<Vec<f64>>, AssociationError> {
    let kk = beta.num_targets;
    let mm = beta.num_measurements;
    let configurations = count_matchings(kk, mm);
    if configurations > ORACLE_LIMIT {
        return Err(AssociationError::TooLarge { configurations });
    }
    let mut marginals = vec![vec![0.0; mm + 1]; kk];
    let mut used = vec![false; mm + 1];
    let mut assignment = vec![0usize; kk];

    fn recurse(
        k: usize,
        weight: f64,
        beta: &BetaTable,
        used: &mut [bool],
        assignment: &mut [usize],
        marginals: &mut [Vec<f64>],
    ) {
        if k == assignment.len() {
            for (q, &a) in assignment.iter().enumerate() {
                marginals[q][a] += weight;
            }
            return;
        }
        let row = beta.row(k);
        for a in 0..row.len() {
            if a > 0 && used[a] {
                continue;
            }
            let w = weight * row[a];
            if w == 0.0 {
                continue;
            }
            if a > 0 {
                used[a] = true;
            }
            assignment[k] = a;
            recurse(k + 1, w, beta, used, assignment, marginals);
            if a > 0 {
                used[a] = false;
            }
        }
    }

    recurse(0, 1.0, beta, &mut used, &mut assignment, &mut marginals);
    for row in &mut marginals {
        normalize(row);
    }
    Ok(marginals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_beta(rng: &mut ChaCha8Rng, k: usize, m: usize) -> BetaTable {
        let data = (0..k * (m + 1)).map(|_| rng.random_range(0.01..3.0)).collect();
        BetaTable::new(k, m, data).unwrap()
    }

    #[test]
    fn indicator_truth_table() {
        assert_eq!(consistency_indicator(1, 1, 1, 1, 2, 2).unwrap(), 1);
        assert_eq!(consistency_indicator(1, 2, 1, 1, 2, 2).unwrap(), 0);
        assert_eq!(consistency_indicator(1, 0, 1, 1, 2, 2).unwrap(), 0);
        assert_eq!(consistency_indicator(2, 1, 1, 1, 2, 2).unwrap(), 0);
        assert_eq!(consistency_indicator(0, 0, 1, 1, 2, 2).unwrap(), 1);
        assert_eq!(consistency_indicator(2, 2, 1, 1, 2, 2).unwrap(), 1);
        assert!(consistency_indicator(3, 0, 1, 1, 2, 2).is_err());
        assert!(consistency_indicator(0, 0, 0, 1, 2, 2).is_err());
        assert!(consistency_indicator(0, 3, 1, 1, 2, 2).is_err());
    }

    #[test]
    fn oracle_hand_cases() {
        let beta = BetaTable::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let p = exact_association_oracle(&beta).unwrap();
        assert_relative_eq!(p[0][0], 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(p[0][1], 2.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(p[0][2], 3.0 / 6.0, epsilon = 1e-15);

        let beta = BetaTable::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let p = exact_association_oracle(&beta).unwrap();
        for row in p {
            assert_relative_eq!(row[0], 2.0 / 3.0, epsilon = 1e-15);
            assert_relative_eq!(row[1], 1.0 / 3.0, epsilon = 1e-15);
        }

        let beta = BetaTable::from_rows(&[vec![0.4], vec![2.0]]).unwrap();
        assert_eq!(exact_association_oracle(&beta).unwrap(), vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let beta = BetaTable::new(12, 12, vec![1.0; 12 * 13]).unwrap();
        assert!(matches!(
            exact_association_oracle(&beta),
            Err(AssociationError::TooLarge { .. })
        ));
        assert_eq!(count_matchings(1, 2), 3.0);
        assert_eq!(count_matchings(2, 2), 7.0);
    }

    #[test]
    fn beta_validation() {
        assert!(BetaTable::from_rows(&[vec![0.0, 0.0]]).is_err());
        assert!(BetaTable::from_rows(&[vec![1.0, f64::NAN]]).is_err());
        assert!(BetaTable::from_rows(&[vec![1.0, -1.0]]).is_err());
        assert!(BetaTable::from_rows(&[vec![1.0, 1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn single_pt_single_measurement() {
        let beta = BetaTable::from_rows(&[vec![0.3, 0.9]]).unwrap();
        let eta = run_bp(&beta, &BpOptions::default()).unwrap();
        let p = association_marginals(&beta, &eta);
        assert_relative_eq!(p[0][1], 0.9 / 1.2, epsilon = 1e-15);
    }

    #[test]
    fn no_detection_evidence() {
        let beta = BetaTable::from_rows(&[vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let eta = run_bp(&beta, &BpOptions::default()).unwrap();
        for k in 0..2 {
            for &v in eta.row(k) {
                assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
            }
        }
        let p = association_marginals(&beta, &eta);
        assert_eq!(p[0][0], 1.0);
    }

    #[test]
    fn swap_symmetry() {
        let beta = BetaTable::from_rows(&[vec![0.5, 2.0, 0.7], vec![0.5, 0.7, 2.0]]).unwrap();
        let eta = run_bp(&beta, &BpOptions::default()).unwrap();
        assert_relative_eq!(eta.row(0)[0], eta.row(1)[0], epsilon = 1e-15);
        assert_relative_eq!(eta.row(0)[1], eta.row(1)[2], epsilon = 1e-15);
        assert_relative_eq!(eta.row(0)[2], eta.row(1)[1], epsilon = 1e-15);
    }

    #[test]
    fn tree_instances_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let options = BpOptions {
            max_iterations: 200,
            tolerance: 1e-13,
        };
        for _ in 0..20 {
            for (k, m) in [(1, 4), (4, 1), (1, 1)] {
                let beta = random_beta(&mut rng, k, m);
                let eta = run_bp(&beta, &options).unwrap();
                let bp = association_marginals(&beta, &eta);
                let exact = exact_association_oracle(&beta).unwrap();
                for (r, e) in bp.iter().zip(&exact) {
                    for (a, b) in r.iter().zip(e) {
                        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn ratio_and_literal_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let k = rng.random_range(1..5);
            let m = rng.random_range(0..5);
            let mut beta = random_beta(&mut rng, k, m);
            // exercise zero entries
            if m > 0 && rng.random_bool(0.5) {
                beta.data[m] = 0.0;
            }
            let fast = run_bp(&beta, &BpOptions::default()).unwrap();
            let slow = run_bp_literal(&beta, &BpOptions::default()).unwrap();
            assert_eq!(fast.iterations, slow.iterations);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn deterministic_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta = random_beta(&mut rng, 3, 4);
        let a = run_bp(&beta, &BpOptions::default()).unwrap();
        let b = run_bp(&beta, &BpOptions::default()).unwrap();
        assert_eq!(a, b);
        let mut scaled = beta.clone();
        scaled.data[5..10].iter_mut().for_each(|v| *v *= 37.0);
        let c = run_bp(&scaled, &BpOptions::default()).unwrap();
        for (x, y) in a.data.iter().zip(&c.data) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12);
        }
    }
}
