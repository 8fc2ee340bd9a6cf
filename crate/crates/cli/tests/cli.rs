use std::path::Path;
use std::process::{Command, Output};

fn catrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catrack"))
        .args(args)
        .output()
        .expect("spawning catrack")
}

fn quick_config(dir: &Path) -> String {
    let path = dir.join("quick.toml");
    std::fs::write(
        &path,
        "[experiment]\nnum_runs = 1\nworkers = 1\n[tracker]\nparticles = 200\nbirth_particles = 20\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn single_writes_headed_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let out = dir.path().join("out");
    let o = catrack(&[
        "single",
        "--config",
        &config,
        "--mu",
        "5",
        "--sensors",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for (name, schema) in [
        ("frames.csv", "frames"),
        ("tracks_proposed.csv", "tracks"),
        ("tracks_baseline.csv", "tracks"),
        ("series_proposed.csv", "series"),
    ] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(format!("# schema=catrack.{schema}.v1").as_str()));
        assert!(lines.count() > 1, "{name} has no rows");
    }
    let frames = std::fs::read_to_string(out.join("frames.csv")).unwrap();
    assert!(frames.lines().nth(1).unwrap().contains("range_m"));
}

#[test]
fn table_prints_both_trackers() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let out = dir.path().join("t");
    let o = catrack(&[
        "table",
        "--config",
        &config,
        "--regime",
        "fixed_offdiag",
        "--classes",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("baseline") && stdout.contains("proposed"));
    let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert!(table.contains("far_per_km2_s"));
    assert!(table.contains("fixed_offdiag"));
    assert!(out.join("runs_s1_mu20_c2_fixed_offdiag.csv").exists());
}

#[test]
fn bad_configuration_fails_with_the_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "sensor.detection_prob = 1.5\n").unwrap();
    let o = catrack(&["table", "--config", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("sensor.detection_prob"));
}

#[test]
fn out_of_range_flags_are_rejected() {
    assert!(!catrack(&["table", "--sensors", "3"]).status.success());
    assert!(!catrack(&["table", "--classes", "4"]).status.success());
    assert!(!catrack(&["table", "--regime", "diagonal"]).status.success());
    assert!(!catrack(&["single"]).status.success());
}
