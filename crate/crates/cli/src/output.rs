//! CSV writers for the command outputs. Column meanings are listed in
//! `docs/outputs.md`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use evprofile::experiment::{CapacityDensities, ForecastExperiment, HourBin, HourlySocErrors, ScenarioReport};
use evprofile::metrics::DistributionSummary;

use crate::run::CmdResult;

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn summary_fields(s: Option<&DistributionSummary>) -> [String; 6] {
    match s {
        Some(s) => [
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.lo.to_string(),
            s.hi.to_string(),
            s.n.to_string(),
        ],
        None => Default::default(),
    }
}

const SUMMARY_HEADER: [&str; 6] = ["q1", "median", "q3", "lo", "hi", "n"];

/// One row per iteration label. The normalizer goes in a leading comment.
pub fn emae_by_iteration(path: &Path, fe: &ForecastExperiment) -> CmdResult {
    let mut f = BufWriter::new(File::create(path)?);
    let norm = serde_json::to_value(fe.normalizer).expect("enum serializes");
    writeln!(f, "# emae_normalizer={}", norm.as_str().unwrap_or_default())?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["iteration"].iter().chain(&SUMMARY_HEADER))?;
    for it in &fe.iterations {
        let mut row = vec![it.label.clone()];
        row.extend(summary_fields(it.summary.as_ref()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-session EMAE, one column per iteration label; blank where the
/// session ended before that refinement.
pub fn emae_by_session(path: &Path, fe: &ForecastExperiment) -> CmdResult {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["session_id".to_string(), "estimated_capacity_kwh".to_string()];
    header.extend(fe.iterations.iter().map(|i| format!("emae_{}", i.label)));
    w.write_record(&header)?;
    for s in &fe.sessions {
        let mut row = vec![s.session_id.clone(), s.estimated_capacity.to_string()];
        row.extend(s.emae.iter().map(|e| opt(*e)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn capacity_kde(path: &Path, d: &CapacityDensities) -> CmdResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["capacity_kwh", "real_density", "predicted_density"])?;
    for ((x, r), p) in d.grid.iter().zip(&d.real).zip(&d.predicted) {
        w.write_record([x.to_string(), r.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn soc_errors_by_hour(path: &Path, h: &HourlySocErrors) -> CmdResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["target", "hour"].iter().chain(&SUMMARY_HEADER).chain(&["populated"]))?;
    let mut put = |target: &str, bins: &[HourBin]| -> CmdResult {
        for b in bins {
            let mut row = vec![target.to_string(), b.hour.to_string()];
            row.extend(summary_fields(b.summary.as_ref()));
            row.push(b.populated().to_string());
            w.write_record(&row)?;
        }
        Ok(())
    };
    put("arrival", &h.arrival)?;
    put("departure", &h.departure)?;
    w.flush()?;
    Ok(())
}

/// Every (scenario, session, draw) row.
pub fn ablation_metrics(path: &Path, reports: &[ScenarioReport]) -> CmdResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario",
        "session_id",
        "emae_pct",
        "time_err_pu",
        "energy_err_pu",
        "draw",
    ])?;
    for r in reports {
        let scenario = r.flags.to_string();
        for row in &r.rows {
            w.write_record([
                scenario.clone(),
                row.session_id.clone(),
                row.emae_pct.to_string(),
                row.time_err_pu.to_string(),
                opt(row.energy_err_pu),
                row.seed_index.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Box statistics per scenario and metric.
pub fn ablation_summary(path: &Path, reports: &[ScenarioReport]) -> CmdResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "metric"].iter().chain(&SUMMARY_HEADER))?;
    for r in reports {
        for (metric, s) in [
            ("emae_pct", r.emae),
            ("time_err_pu", r.time_err),
            ("energy_err_pu", r.energy_err),
        ] {
            let mut row = vec![r.flags.to_string(), metric.to_string()];
            row.extend(summary_fields(s.as_ref()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
