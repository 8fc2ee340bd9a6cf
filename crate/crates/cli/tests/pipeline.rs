use catrack::config::ExperimentConfig;
use catrack::experiment::{run_experiment, run_once, Setup};
use catrack::output::{write_mospa_t_series, write_runs, write_series};

fn small(text: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml_str(text).unwrap();
    c.experiment.num_runs = 2;
    c.experiment.workers = 1;
    c.tracker.particles = 300;
    c.tracker.birth_particles = 30;
    c
}

#[test]
fn identical_configs_write_identical_files() {
    let mut config = small("scenario.sensors = 2\nsensor.clutter_mean = 10.0\n");
    config.experiment.workers = 2;
    let write = |dir: &std::path::Path| {
        let r = run_experiment(&config).unwrap();
        write_runs(&dir.join("runs.csv"), &r.runs).unwrap();
        write_series(&dir.join("series.csv"), &r.proposed).unwrap();
        write_mospa_t_series(&dir.join("mospa_t.csv"), r.baseline.as_ref().unwrap(), &r.proposed).unwrap();
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write(a.path());
    write(b.path());
    for name in ["runs.csv", "series.csv", "mospa_t.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs");
    }
}

/// Steady-state posterior position std of a per-axis constant-velocity
/// Kalman filter, by iterating the Riccati recursion.
fn kalman_position_std(step_s: f64, accel_std: f64, meas_var: f64) -> f64 {
    let (t, q) = (step_s, accel_std * accel_std);
    let (q11, q12, q22) = (q * t.powi(4) / 4.0, q * t.powi(3) / 2.0, q * t * t);
    let (mut p11, mut p12, mut p22) = (1e4, 0.0, 1e2);
    for _ in 0..2000 {
        let a11 = p11 + 2.0 * t * p12 + t * t * p22 + q11;
        let a12 = p12 + t * p22 + q12;
        let a22 = p22 + q22;
        let s = a11 + meas_var;
        p11 = a11 - a11 * a11 / s;
        p12 = a12 - a11 * a12 / s;
        p22 = a22 - a12 * a12 / s;
    }
    p11.sqrt()
}

#[test]
fn clean_data_is_tracked_at_the_filtering_bound() {
    let mut config = small("sensor.clutter_mean = 0.0\nsensor.detection_prob = 1.0\n");
    config.tracker.particles = 1000;
    config.tracker.birth_particles = 100;
    let setup = Setup::from_config(&config).unwrap();
    let outcome = run_once(&setup, 0, 3, false).unwrap();
    let cross_range = config.sensor.circle_radius_m * config.sensor.sigma_bearing_deg.to_radians();
    let worst_var = cross_range.max(config.sensor.sigma_range_m).powi(2);
    let sigma = kalman_position_std(2.0, config.tracker.accel_std_mps2, worst_var);
    let bound = (std::f64::consts::PI / 2.0).sqrt() * sigma;
    // Steps between acquisition and the convergence at the center, and after
    // the targets have separated again; neighbours are then over 30 m apart.
    for window in [20..=60, 96..=115] {
        for report in [&outcome.proposed, outcome.baseline.as_ref().unwrap()] {
            let ospa = &report.ospa_series[window.start() - 1..*window.end()];
            let mean = ospa.iter().sum::<f64>() / ospa.len() as f64;
            assert!(mean < 1.25 * bound, "mean OSPA {mean} over {window:?}, bound {bound}");
            let falses: f64 = report.false_series[window.start() - 1..*window.end()].iter().sum();
            assert_eq!(falses, 0.0, "false estimates over {window:?}");
        }
    }
}

#[test]
fn disabling_the_classifier_reproduces_the_baseline() {
    let config = small("tracker.classifier_enabled = false\nsensor.clutter_mean = 20.0\n");
    let r = run_experiment(&config).unwrap();
    for run in &r.runs {
        assert_eq!(Some(&run.proposed), run.baseline.as_ref());
    }
    let b = r.baseline.unwrap();
    assert_eq!(b.ospa_t_series, r.proposed.ospa_t_series);
}

#[test]
fn runs_use_consecutive_seeds() {
    let config = small("experiment.base_seed = 40\nexperiment.run_baseline = false\n");
    let r = run_experiment(&config).unwrap();
    let seeds: Vec<u64> = r.runs.iter().map(|o| o.seed).collect();
    assert_eq!(seeds, vec![40, 41]);
    let setup = Setup::from_config(&config).unwrap();
    assert_eq!(run_once(&setup, 1, 41, false).unwrap().proposed, r.runs[1].proposed);
    assert!(r.baseline.is_none());
}
