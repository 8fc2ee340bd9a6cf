//! Oracle and invariant checks behind the `validate` verb.

use std::time::Instant;

use anyhow::Result;
use catrack_core::association::{association_marginals, exact_association_oracle, run_bp, BetaTable, BpOptions};
use catrack_core::engine::{
    fuse_weights, predict, sensor_factors, AugmentedBelief, PredictedMessage, SpaParams, SpaTracker, TrackerModels,
};
use catrack_core::metrics::{gospa, optimal_assignment, ospa, ospa_t, PointSet};
use catrack_core::model::{AugmentedMeasurement, ClassFactorTable, ConfusionMatrix, MotionModel};
use catrack_core::simulator::{build_paper_scenario, generate_run, tracker_rng, TrackerModelOptions};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

fn random_beta(kk: usize, mm: usize, rng: &mut ChaCha8Rng) -> BetaTable {
    let rows: Vec<Vec<f64>> = (0..kk)
        .map(|_| {
            let mut row = vec![rng.random_range(0.05..1.0)];
            // Log-uniform over four decades so strong and weak hypotheses mix.
            row.extend((0..mm).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))));
            row
        })
        .collect();
    BetaTable::from_rows(&rows).expect("valid random β")
}

/// BP marginals against exhaustive enumeration on every tree-shaped
/// instance (`K = 1, M ≤ 5` and `M = 1, K ≤ 5`).
pub fn check_association_trees(seeds: u64, tolerance: f64) -> Result<Check> {
    let start = Instant::now();
    let options = BpOptions {
        max_iterations: 50,
        tolerance: 0.0,
    };
    let mut shapes: Vec<(usize, usize)> = (0..=5).map(|m| (1, m)).collect();
    shapes.extend((2..=5).map(|k| (k, 1)));
    let mut worst = 0.0f64;
    let mut instances = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &(kk, mm) in &shapes {
            let beta = random_beta(kk, mm, &mut rng);
            let eta = run_bp(&beta, &options)?;
            let bp = association_marginals(&beta, &eta);
            let exact = exact_association_oracle(&beta)?;
            for (a, b) in bp.iter().flatten().zip(exact.iter().flatten()) {
                worst = worst.max((a - b).abs());
            }
            instances += 1;
        }
    }
    let elapsed = start.elapsed();
    Ok(Check::new(
        "association BP matches enumeration on trees",
        worst <= tolerance && elapsed.as_secs_f64() < 1.0,
        format!(
            "{instances} instances, max |Δ| = {worst:.2e}, {:.3} s",
            elapsed.as_secs_f64()
        ),
    ))
}

/// A full run where the classifier carries no information must leave every
/// belief bitwise equal to the baseline tracker's.
pub fn check_reduction(steps: usize, particles: usize) -> Result<Check> {
    let start = Instant::now();
    let scenario = build_paper_scenario(3, 2, 20.0, 0)?;
    let frames = generate_run(&scenario, 7);
    let mut models = scenario.tracker_models(&TrackerModelOptions::default())?;
    for s in &mut models.sensors {
        s.confusion = ConfusionMatrix::uninformative(&s.clutter_class_pmf);
    }
    let params = SpaParams {
        particles,
        birth_particles: (particles / 10).max(1),
        ..SpaParams::default()
    };
    let baseline_params = SpaParams {
        classifier_enabled: false,
        ..params
    };
    let mut proposed = SpaTracker::with_rng(models.clone(), params, tracker_rng(7))?;
    let mut baseline = SpaTracker::with_rng(models, baseline_params, tracker_rng(7))?;
    let mut first_difference = None;
    for (n, step) in frames.iter().take(steps).enumerate() {
        let scans: Vec<Vec<AugmentedMeasurement>> = step.iter().map(|f| f.measurements.clone()).collect();
        proposed.step(&scans)?;
        baseline.step(&scans)?;
        if proposed.beliefs() != baseline.beliefs() {
            first_difference = Some(n + 1);
            break;
        }
    }
    let elapsed = start.elapsed();
    let detail = match first_difference {
        None => format!(
            "{} steps identical, {:.1} s",
            steps.min(frames.len()),
            elapsed.as_secs_f64()
        ),
        Some(n) => format!("beliefs differ at step {n}"),
    };
    Ok(Check::new(
        "uninformative classifier reduces to baseline",
        first_difference.is_none() && elapsed.as_secs_f64() < 60.0,
        detail,
    ))
}

/// Exhaustive minimum over all injective row→column maps.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        return brute_force_assignment(&transposed);
    }
    fn go(i: usize, cost: &[Vec<f64>], used: &mut [bool], acc: f64, best: &mut f64) {
        if i == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, cost, used, acc + cost[i][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, cost, &mut vec![false; cols], 0.0, &mut best);
    best
}

fn labeled(points: &[([f64; 2], u64)]) -> PointSet {
    let mut set = PointSet::new();
    for &(p, l) in points {
        set.push(p, Some(l));
    }
    set
}

pub fn check_metric_oracles() -> Result<Check> {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(1..=6);
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(0.0..100.0)).collect())
            .collect();
        let fast = optimal_assignment(&cost).cost;
        worst = worst.max((fast - brute_force_assignment(&cost)).abs());
    }
    if worst > 1e-9 {
        failures.push(format!("assignment off by {worst:.2e}"));
    }

    let origin = PointSet::from_positions(&[[0.0, 0.0]]);
    let near = PointSet::from_positions(&[[3.0, 4.0]]);
    let empty = PointSet::new();
    let pair_plus_false = PointSet::from_positions(&[[3.0, 4.0], [500.0, 0.0]]);
    let hand = [
        ("ospa identical", ospa(&near, &near, 1.0, 20.0), 0.0),
        ("ospa single pair", ospa(&origin, &near, 1.0, 20.0), 5.0),
        ("ospa missed", ospa(&origin, &empty, 1.0, 20.0), 20.0),
        ("ospa empty", ospa(&empty, &empty, 1.0, 20.0), 0.0),
        ("gospa identical", gospa(&near, &near, 1.0, 20.0), 0.0),
        ("gospa missed", gospa(&origin, &empty, 1.0, 20.0), 10.0),
        (
            "gospa pair and false",
            gospa(&origin, &pair_plus_false, 1.0, 20.0),
            15.0,
        ),
    ];
    for (name, got, want) in hand {
        if (got - want).abs() > 1e-12 {
            failures.push(format!("{name}: {got} != {want}"));
        }
    }

    // Two crossing-free tracks with noisy estimates and stable labels.
    let mut truth = Vec::new();
    let mut est = Vec::new();
    for n in 0..30 {
        let t = n as f64;
        truth.push(labeled(&[([t, 0.0], 0), ([t, 100.0], 1)]));
        let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-3.0..3.0);
        let mut e = vec![([t + jitter(&mut rng), jitter(&mut rng)], 7)];
        if n % 4 != 0 {
            e.push(([t + jitter(&mut rng), 100.0 + jitter(&mut rng)], 9));
        }
        est.push(labeled(&e));
    }
    let with_labels = ospa_t(&truth, &est, 1.0, 20.0, 20.0)?;
    for (n, (t, e)) in truth.iter().zip(&est).enumerate() {
        let plain = ospa(t, e, 1.0, 20.0);
        if (with_labels[n] - plain).abs() > 1e-12 {
            failures.push(format!("ospa_t differs from ospa at step {n}"));
            break;
        }
    }

    let elapsed = start.elapsed();
    let passed = failures.is_empty() && elapsed.as_secs_f64() < 10.0;
    let detail = if failures.is_empty() {
        format!(
            "200 assignments, 7 hand cases, no-switch sequence; {:.3} s",
            elapsed.as_secs_f64()
        )
    } else {
        failures.join("; ")
    };
    Ok(Check::new("metric oracles", passed, detail))
}

fn small_setup(classes: usize, seed: u64) -> Result<(TrackerModels, Vec<Vec<Vec<AugmentedMeasurement>>>)> {
    let scenario = build_paper_scenario(classes, 2, 10.0, 0)?;
    let models = scenario.tracker_models(&TrackerModelOptions::default())?;
    let frames = generate_run(&scenario, seed)
        .into_iter()
        .take(15)
        .map(|step| step.into_iter().map(|f| f.measurements).collect())
        .collect();
    Ok((models, frames))
}

fn small_params() -> SpaParams {
    SpaParams {
        num_pts: 8,
        particles: 200,
        birth_particles: 20,
        ..SpaParams::default()
    }
}

/// Beliefs are normalized, association rows sum to one.
fn normalization_case(seed: u64) -> Result<Option<String>> {
    let (models, frames) = small_setup(3, seed)?;
    let mut tracker = SpaTracker::with_rng(models, small_params(), tracker_rng(seed))?;
    for scans in &frames {
        tracker.step(scans)?;
        for b in tracker.beliefs() {
            let total = b.total_mass();
            if (total - 1.0).abs() > 1e-9 || b.class_weights.iter().any(|w| *w < 0.0) || b.nonexistence < 0.0 {
                return Ok(Some(format!("belief mass {total} at step {}", tracker.time())));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (kk, mm) = (rng.random_range(1..=6), rng.random_range(0..=6));
    let beta = random_beta(kk, mm, &mut rng);
    let eta = run_bp(&beta, &BpOptions::default())?;
    for row in association_marginals(&beta, &eta) {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Ok(Some(format!("association row sums to {s}")));
        }
    }
    Ok(None)
}

/// Relabelling classes (model and measurements alike) relabels the fused
/// class weights and nothing else.
fn class_permutation_case(seed: u64) -> Result<Option<String>> {
    let (models, frames) = small_setup(3, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..3).collect();
    perm.shuffle(&mut rng);
    let permuted_models = TrackerModels {
        motion: models.motion.clone(),
        class_transition: models.class_transition.permuted(&perm),
        sensors: models
            .sensors
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.confusion = s.confusion.permuted(&perm);
                s.clutter_class_pmf = s.clutter_class_pmf.permuted(&perm);
                s
            })
            .collect(),
    };
    let params = small_params();
    let mut tracker = SpaTracker::with_rng(models.clone(), params, tracker_rng(seed))?;
    for scans in frames.iter().take(8) {
        tracker.step(scans)?;
    }
    let beliefs = tracker.beliefs().to_vec();
    let scans = &frames[8];
    let predicted: Vec<PredictedMessage> = beliefs
        .iter()
        .map(|b| {
            predict(
                b,
                &models.motion,
                &models.class_transition,
                params.birth_particles,
                &mut ChaCha8Rng::seed_from_u64(seed ^ 0x55),
            )
        })
        .collect::<Result<_, _>>()?;
    let permute_belief = |b: &AugmentedBelief| -> AugmentedBelief {
        let mut w = vec![0.0; b.class_weights.len()];
        for (j, row) in b.class_weights.chunks(3).enumerate() {
            for (c, v) in row.iter().enumerate() {
                w[j * 3 + perm[c]] = *v;
            }
        }
        AugmentedBelief::new(b.particles.clone(), w, b.nonexistence, 3).expect("same shape")
    };
    let permuted_predicted: Vec<PredictedMessage> = predicted.iter().map(|p| permute_belief(p).into()).collect();
    let fuse = |models: &TrackerModels,
                predicted: &[PredictedMessage],
                scans: &[Vec<AugmentedMeasurement>]|
     -> Result<Vec<AugmentedBelief>> {
        let mut per_pt = vec![Vec::new(); predicted.len()];
        for (scan, sensor) in scans.iter().zip(&models.sensors) {
            let table = ClassFactorTable::new(sensor, true);
            let (factors, _) = sensor_factors(predicted, scan, sensor, &table, &params)?;
            for (dst, f) in per_pt.iter_mut().zip(factors) {
                dst.push(f);
            }
        }
        predicted
            .iter()
            .zip(&per_pt)
            .map(|(p, f)| Ok(fuse_weights(p, f)?))
            .collect()
    };
    let permuted_scans: Vec<Vec<AugmentedMeasurement>> = scans
        .iter()
        .map(|scan| {
            scan.iter()
                .map(|z| {
                    let zeta = if z.class_estimate == 0 {
                        0
                    } else {
                        perm[z.class_estimate - 1] + 1
                    };
                    AugmentedMeasurement::new(z.range, z.bearing, zeta)
                })
                .collect()
        })
        .collect();
    let plain = fuse(&models, &predicted, scans)?;
    let relabelled = fuse(&permuted_models, &permuted_predicted, &permuted_scans)?;
    for (a, b) in plain.iter().zip(&relabelled) {
        let expected = permute_belief(a);
        let scale = a.total_mass().max(f64::MIN_POSITIVE);
        let worst = expected
            .class_weights
            .iter()
            .zip(&b.class_weights)
            .map(|(x, y)| (x - y).abs())
            .fold((expected.nonexistence - b.nonexistence).abs(), f64::max);
        if worst > 1e-12 * scale {
            return Ok(Some(format!("class relabelling changed weights by {worst:.2e}")));
        }
    }
    Ok(None)
}

/// Same seed, same beliefs.
fn determinism_case(seed: u64) -> Result<Option<String>> {
    let (models, frames) = small_setup(2, seed)?;
    let run = || -> Result<Vec<AugmentedBelief>> {
        let mut tracker = SpaTracker::with_rng(models.clone(), small_params(), tracker_rng(seed))?;
        for scans in &frames {
            tracker.step(scans)?;
        }
        Ok(tracker.beliefs().to_vec())
    };
    Ok((run()? != run()?).then(|| "two runs with one seed disagree".to_string()))
}

/// With zero process noise, prediction moves particles by `A` exactly and
/// splits mass between survival, death, birth and staying absent.
fn mass_conservation_case(seed: u64) -> Result<Option<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (models, _) = small_setup(3, seed)?;
    let ps = rng.random_range(0.5..1.0);
    let pb = rng.random_range(0.0..0.5);
    let motion = MotionModel::constant_velocity(2.0, 0.0, ps, pb, models.motion.birth.clone())?;
    let j = rng.random_range(1..20);
    let particles: Vec<[f64; 4]> = (0..j)
        .map(|_| std::array::from_fn(|_| rng.random_range(-100.0..100.0)))
        .collect();
    let mut weights: Vec<f64> = (0..j * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let existence = rng.random_range(0.01..0.99);
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w *= existence / sum);
    let belief = AugmentedBelief::new(particles.clone(), weights, 1.0 - existence, 3)?;
    let pred = predict(&belief, &motion, &models.class_transition, 5, &mut rng)?;
    let want_existing = ps * existence + pb * (1.0 - existence);
    let want_absent = (1.0 - ps) * existence + (1.0 - pb) * (1.0 - existence);
    if (pred.existence_prob() - want_existing).abs() > 1e-12 || (pred.nonexistence - want_absent).abs() > 1e-12 {
        return Ok(Some(format!(
            "existence {} vs {want_existing}, absent {} vs {want_absent}",
            pred.existence_prob(),
            pred.nonexistence
        )));
    }
    for (x, y) in particles.iter().zip(&pred.particles) {
        let moved = [x[0] + 2.0 * x[2], x[1] + 2.0 * x[3], x[2], x[3]];
        if moved.iter().zip(y).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Ok(Some("particle not moved by the transition matrix".into()));
        }
    }
    Ok(None)
}

fn run_property(name: &str, cases: u64, f: fn(u64) -> Result<Option<String>>) -> Result<Check> {
    for seed in 0..cases {
        if let Some(why) = f(seed)? {
            return Ok(Check::new(name, false, format!("case {seed}: {why}")));
        }
    }
    Ok(Check::new(name, true, format!("{cases} seeded cases")))
}

/// Seeded invariant suite: normalization, class permutation equivariance,
/// determinism and mass conservation.
pub fn check_invariants(cases: u64) -> Result<Vec<Check>> {
    Ok(vec![
        run_property("normalization", cases, normalization_case)?,
        run_property("class permutation equivariance", cases, class_permutation_case)?,
        run_property("determinism", cases, determinism_case)?,
        run_property("mass conservation", cases, mass_conservation_case)?,
    ])
}

/// Everything `validate` runs.
pub fn run_suite(invariant_cases: u64) -> Result<Vec<Check>> {
    let mut checks = vec![
        check_association_trees(100, 1e-9)?,
        check_reduction(140, 1000)?,
        check_metric_oracles()?,
    ];
    checks.extend(check_invariants(invariant_cases)?);
    Ok(checks)
}
