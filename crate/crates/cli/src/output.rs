//! CSV writers. Every file starts with a `# schema=catrack.<name>.v1` line;
//! units are part of the column names.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use catrack_core::estimator::TrackEstimate;
use catrack_core::metrics::MetricReport;
use catrack_core::simulator::MeasurementFrame;

use crate::experiment::RunOutcome;

/// One aggregated row of a reproduced table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub tracker: &'static str,
    pub sensors: usize,
    pub clutter_mean: f64,
    pub classes: usize,
    pub regime: String,
    pub runs: usize,
    pub report: MetricReport,
}

fn writer(path: &Path, schema: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# schema=catrack.{schema}.v1")?;
    Ok(csv::Writer::from_writer(out))
}

fn finish(w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.into_inner()
        .map_err(|e| anyhow::anyhow!("flushing {}: {}", path.display(), e.error()))?
        .flush()
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = writer(path, "table")?;
    w.write_record([
        "tracker",
        "sensors",
        "clutter_mean",
        "classes",
        "regime",
        "runs",
        "mgospa_m",
        "mospa_m",
        "mospa_t_m",
        "far_per_km2_s",
    ])?;
    for r in rows {
        w.write_record([
            r.tracker.to_string(),
            r.sensors.to_string(),
            r.clutter_mean.to_string(),
            r.classes.to_string(),
            r.regime.clone(),
            r.runs.to_string(),
            r.report.mgospa.to_string(),
            r.report.mospa.to_string(),
            r.report.mospa_t.to_string(),
            r.report.far.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Per-run time-averaged metrics for both trackers.
pub fn write_runs(path: &Path, runs: &[RunOutcome]) -> Result<()> {
    let mut w = writer(path, "runs")?;
    w.write_record([
        "run",
        "seed",
        "tracker",
        "mgospa_m",
        "mospa_m",
        "mospa_t_m",
        "far_per_km2_s",
    ])?;
    for r in runs {
        let reports = std::iter::once(("proposed", &r.proposed)).chain(r.baseline.as_ref().map(|b| ("baseline", b)));
        for (name, m) in reports {
            w.write_record([
                r.run.to_string(),
                r.seed.to_string(),
                name.to_string(),
                m.mgospa.to_string(),
                m.mospa.to_string(),
                m.mospa_t.to_string(),
                m.far.to_string(),
            ])?;
        }
    }
    finish(w, path)
}

/// Per-step MOSPA-T of both trackers; `n` starts at 1.
pub fn write_mospa_t_series(path: &Path, baseline: &MetricReport, proposed: &MetricReport) -> Result<()> {
    let mut w = writer(path, "mospa_t_series")?;
    w.write_record(["n", "baseline_mospa_t_m", "proposed_mospa_t_m"])?;
    for (i, (b, p)) in baseline.ospa_t_series.iter().zip(&proposed.ospa_t_series).enumerate() {
        w.write_record([(i + 1).to_string(), b.to_string(), p.to_string()])?;
    }
    finish(w, path)
}

/// All per-step series of one tracker.
pub fn write_series(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = writer(path, "series")?;
    w.write_record(["n", "gospa_m", "ospa_m", "ospa_t_m", "false_estimates"])?;
    for i in 0..report.gospa_series.len() {
        w.write_record([
            (i + 1).to_string(),
            report.gospa_series[i].to_string(),
            report.ospa_series[i].to_string(),
            report.ospa_t_series[i].to_string(),
            report.false_series[i].to_string(),
        ])?;
    }
    finish(w, path)
}

/// Track estimates; `class_pmf` is `;`-separated in class order.
pub fn write_tracks(path: &Path, run: usize, tracker: &str, tracks: &[Vec<TrackEstimate>]) -> Result<()> {
    let mut w = writer(path, "tracks")?;
    w.write_record([
        "run",
        "tracker",
        "n",
        "label",
        "x_m",
        "y_m",
        "vx_mps",
        "vy_mps",
        "existence_prob",
        "class_pmf",
    ])?;
    for step in tracks {
        for e in step {
            let pmf: Vec<String> = e.class_pmf.iter().map(f64::to_string).collect();
            w.write_record([
                run.to_string(),
                tracker.to_string(),
                e.time.to_string(),
                e.label.to_string(),
                e.position[0].to_string(),
                e.position[1].to_string(),
                e.velocity[0].to_string(),
                e.velocity[1].to_string(),
                e.existence_prob.to_string(),
                pmf.join(";"),
            ])?;
        }
    }
    finish(w, path)
}

/// Measurements with their true origin (target index or `clutter`).
pub fn write_frames(path: &Path, run: usize, frames: &[Vec<MeasurementFrame>]) -> Result<()> {
    let mut w = writer(path, "frames")?;
    w.write_record(["run", "n", "s", "range_m", "bearing_rad", "zeta", "origin"])?;
    for f in frames.iter().flatten() {
        for (z, origin) in f.measurements.iter().zip(&f.origins) {
            w.write_record([
                run.to_string(),
                f.time.to_string(),
                f.sensor.to_string(),
                z.range.to_string(),
                z.bearing.to_string(),
                z.class_estimate.to_string(),
                origin.map_or_else(|| "clutter".to_string(), |o| o.to_string()),
            ])?;
        }
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_file_has_schema_and_units() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let r = MetricReport {
            mgospa: 1.0,
            mospa: 1.0,
            mospa_t: 1.0,
            far: 0.0,
            gospa_series: vec![1.0, 2.0],
            ospa_series: vec![1.0, 2.0],
            ospa_t_series: vec![3.0, 4.0],
            false_series: vec![0.0, 0.0],
        };
        write_mospa_t_series(&path, &r, &r).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# schema=catrack.mospa_t_series.v1");
        assert_eq!(lines[1], "n,baseline_mospa_t_m,proposed_mospa_t_m");
        assert_eq!(lines[2], "1,3,3");
        assert_eq!(lines.len(), 4);
    }
}
