use catrack_core::simulator::{build_paper_scenario, frame_rng, generate_frame, generate_run};
use proptest::prelude::*;

#[test]
fn clutter_count_is_poisson_with_the_configured_mean() {
    let scenario = build_paper_scenario(3, 1, 20.0, 0).unwrap();
    let mut counts = Vec::new();
    // Step 135 has no live targets.
    for seed in 0..4000u64 {
        let f = generate_frame(&scenario, 135, 0, &mut frame_rng(seed, 135, 0));
        counts.push(f.measurements.len() as f64);
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 20.0).abs() < 0.5, "mean {mean}");
    assert!((var / mean - 1.0).abs() < 0.1, "dispersion {}", var / mean);
}

#[test]
fn class_estimates_follow_the_confusion_matrix() {
    let scenario = build_paper_scenario(3, 1, 20.0, 0).unwrap();
    let sensor = &scenario.sensors[0];
    let classes = scenario.num_classes;
    // counts[origin class or clutter][zeta]
    let mut counts = vec![vec![0usize; classes + 1]; classes + 1];
    for seed in 0..1500u64 {
        for n in [40, 60, 100] {
            let f = generate_frame(&scenario, n, 0, &mut frame_rng(seed, n, 0));
            for (z, origin) in f.measurements.iter().zip(&f.origins) {
                let row = origin.map_or(0, |t| scenario.targets[t].class_index + 1);
                counts[row][z.class_estimate] += 1;
            }
        }
    }
    for (row, c) in counts.iter().enumerate() {
        let total: usize = c.iter().sum();
        assert!(total > 5000, "row {row} has only {total} samples");
        for (zeta, &k) in c.iter().enumerate() {
            let freq = k as f64 / total as f64;
            let want = if row == 0 {
                sensor.clutter_class_pmf.get(zeta)
            } else {
                sensor.confusion.get(zeta, row - 1)
            };
            assert!((freq - want).abs() < 0.02, "row {row} zeta {zeta}: {freq} vs {want}");
        }
    }
}

#[test]
fn detection_rate_is_within_binomial_bounds() {
    let scenario = build_paper_scenario(3, 2, 5.0, 0).unwrap();
    let mut detected = 0usize;
    let mut opportunities = 0usize;
    for seed in 0..200u64 {
        for step in generate_run(&scenario, seed) {
            for f in step {
                opportunities += scenario.truth_at(f.time).len();
                detected += f.origins.iter().filter(|o| o.is_some()).count();
            }
        }
    }
    let n = opportunities as f64;
    let rate = detected as f64 / n;
    let sigma = (0.9 * 0.1 / n).sqrt();
    assert!((rate - 0.9).abs() < 3.0 * sigma, "rate {rate}, 3σ = {}", 3.0 * sigma);
}

#[test]
fn turn_is_sixty_degrees_to_the_right() {
    let scenario = build_paper_scenario(3, 1, 20.0, 0).unwrap();
    for t in 0..scenario.targets.len() {
        let onset = scenario.turn_step(t);
        let before = scenario.trajectory_state(t, onset - 5).velocity;
        let after = scenario.trajectory_state(t, onset + 5).velocity;
        let turn = (after[1].atan2(after[0]) - before[1].atan2(before[0])).to_degrees();
        let turn = (turn + 540.0) % 360.0 - 180.0;
        assert!((turn + 60.0).abs() < 1e-9, "target {t} turns {turn}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frames_are_reproducible(seed in any::<u64>(), n in 1usize..=140, s in 0usize..2) {
        let scenario = build_paper_scenario(2, 2, 10.0, 0).unwrap();
        let a = generate_frame(&scenario, n, s, &mut frame_rng(seed, n, s));
        let b = generate_frame(&scenario, n, s, &mut frame_rng(seed, n, s));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn measurements_of_targets_lie_near_them(seed in any::<u64>(), n in 20usize..=110) {
        let scenario = build_paper_scenario(3, 1, 5.0, 0).unwrap();
        let f = generate_frame(&scenario, n, 0, &mut frame_rng(seed, n, 0));
        let sensor = &scenario.sensors[0];
        for (z, origin) in f.measurements.iter().zip(&f.origins) {
            if let Some(t) = origin {
                let truth = scenario.trajectory_state(*t, n).position;
                let p = sensor.to_cartesian(z.range, z.bearing);
                prop_assert!((p[0] - truth[0]).hypot(p[1] - truth[1]) < 60.0);
            }
        }
    }
}
