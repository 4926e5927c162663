//! CSV and JSON artifacts for each scenario, plus the combined
//! run-and-write entry point used by the CLI.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, Scenario};
use super::{run_calibrate, run_fringe, run_longrun, run_probe, CalibrateOutcome, FringeOutcome, LongrunOutcome, ProbeOutcome};
use crate::error::{Error, Result};
use crate::scheduler::{EntryKind, LinkTimeline};

fn csv_err(e: csv::Error) -> Error {
    Error::Output(e.to_string())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Output(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_probe(dir: &Path, out: &ProbeOutcome) -> Result<()> {
    let mut w = csv_writer(&dir.join("probe.csv"))?;
    w.write_record(["t_s", "s1", "s2", "s3", "fidelity"]).map_err(csv_err)?;
    for s in &out.trace.samples {
        let [s1, s2, s3] = s.stokes.components();
        w.write_record([s.t_s, s1, s2, s3, s.fidelity].map(|x| x.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timeline(dir: &Path, timeline: &LinkTimeline) -> Result<()> {
    let mut w = csv_writer(&dir.join("timeline.csv"))?;
    w.write_record(["start_s", "end_s", "kind", "outcome", "min_f_after"]).map_err(csv_err)?;
    for e in timeline.entries() {
        let kind = match e.kind {
            EntryKind::Compensation => "compensation",
            EntryKind::Uptime => "uptime",
        };
        let (outcome, min_f) = match &e.session {
            Some(s) => (s.outcome.as_str().to_string(), s.min_fidelity_after.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([e.start_s.to_string(), e.end_s.to_string(), kind.to_string(), outcome, min_f])
            .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("sessions.csv"))?;
    w.write_record(["start_time_s", "outcome", "duration_s", "min_f_before", "min_f_after", "iterations"])
        .map_err(csv_err)?;
    for s in timeline.sessions() {
        w.write_record([
            s.start_time_s.to_string(),
            s.outcome.as_str().to_string(),
            s.duration_s.to_string(),
            s.min_fidelity_before.to_string(),
            s.min_fidelity_after.to_string(),
            s.iterations.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fringe(dir: &Path, out: &FringeOutcome) -> Result<()> {
    let mut w = csv_writer(&dir.join("fringe.csv"))?;
    w.write_record(["nist_basis_deg", "umd_angle_deg", "counts", "duration_s", "post_timeout_flag"])
        .map_err(csv_err)?;
    for d in &out.datasets {
        for p in &d.points {
            w.write_record([
                d.nist_basis.angle_deg().to_string(),
                p.umd_angle_deg.to_string(),
                p.counts.to_string(),
                p.duration_s.to_string(),
                u8::from(p.post_timeout).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("fringe_sessions.csv"))?;
    w.write_record(["nist_basis_deg", "umd_angle_deg", "outcome", "duration_s", "min_f_before", "min_f_after"])
        .map_err(csv_err)?;
    for f in &out.sessions {
        w.write_record([
            f.nist_basis_deg.to_string(),
            f.umd_angle_deg.to_string(),
            f.session.outcome.as_str().to_string(),
            f.session.duration_s.to_string(),
            f.session.min_fidelity_before.to_string(),
            f.session.min_fidelity_after.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    write_json(&dir.join("chsh.json"), &out.chsh)?;
    write_json(&dir.join("chsh_corrected.json"), &out.chsh_corrected)?;
    write_timeline(dir, &out.timeline)
}

pub fn write_longrun(dir: &Path, out: &LongrunOutcome) -> Result<()> {
    let mut w = csv_writer(&dir.join("series.csv"))?;
    w.write_record(["t_s", "S", "sigma_S", "min_ref_fidelity", "compensation_time_s", "post_timeout_flag"])
        .map_err(csv_err)?;
    for p in &out.series {
        w.write_record([
            p.t_s.to_string(),
            p.s.to_string(),
            p.sigma_s.to_string(),
            p.min_ref_fidelity.to_string(),
            p.compensation_time_s.to_string(),
            u8::from(p.post_timeout).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let h = &out.summary.compensation_histogram;
    let mut w = csv_writer(&dir.join("compensation_histogram.csv"))?;
    w.write_record(["lower_s", "upper_s", "count"]).map_err(csv_err)?;
    for (k, c) in h.counts.iter().enumerate() {
        w.write_record([h.edges[k].to_string(), h.edges[k + 1].to_string(), c.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    write_timeline(dir, &out.timeline)
}

pub fn write_calibrate(dir: &Path, out: &CalibrateOutcome) -> Result<()> {
    write_json(&dir.join("calibration.json"), out)
}

fn probe_results(out: &ProbeOutcome) -> Value {
    json!({
        "samples": out.trace.samples.len(),
        "first_crossing_s": out.first_crossing_s,
        "final_fidelity": out.trace.samples.last().map(|s| s.fidelity),
    })
}

fn fringe_results(out: &FringeOutcome) -> Value {
    let post_timeout = out.datasets.iter().flat_map(|d| &d.points).filter(|p| p.post_timeout).count();
    json!({
        "chsh": out.chsh,
        "chsh_corrected": out.chsh_corrected,
        "violation": out.chsh.violation(),
        "points": out.datasets.iter().map(|d| d.points.len()).sum::<usize>(),
        "post_timeout_points": post_timeout,
        "uptime_fraction": out.timeline.uptime_fraction().ok(),
    })
}

/// Runs `scenario` on the resolved config, writes all artifacts plus
/// `resolved_config.toml` and `summary.json` into `dir`, and returns the
/// summary.
pub fn run_to_dir(cfg: &ExperimentConfig, scenario: Scenario, seed: u64, dir: &Path) -> Result<Value> {
    let cfg = cfg.resolved(scenario, seed);
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let results = match scenario {
        Scenario::Probe => {
            let out = run_probe(&cfg)?;
            write_probe(dir, &out)?;
            probe_results(&out)
        }
        Scenario::Fringe => {
            let out = run_fringe(&cfg)?;
            write_fringe(dir, &out)?;
            fringe_results(&out)
        }
        Scenario::Longrun => {
            let out = run_longrun(&cfg)?;
            write_longrun(dir, &out)?;
            serde_json::to_value(&out.summary).map_err(|e| Error::Output(e.to_string()))?
        }
        Scenario::Calibrate => {
            let out = run_calibrate(&cfg)?;
            write_calibrate(dir, &out)?;
            serde_json::to_value(&out).map_err(|e| Error::Output(e.to_string()))?
        }
    };
    fs::write(dir.join("resolved_config.toml"), cfg.to_toml_string()?)?;
    let summary = json!({
        "scenario": scenario.as_str(),
        "seed": seed,
        "config": cfg,
        "results": results,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}
