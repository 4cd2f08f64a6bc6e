//! Shared acceptance checks.

#![allow(dead_code)]

use std::path::Path;
use std::time::Instant;

use evprofile::dataset::{filter_uncontrolled, load_sessions, ChargingSession, WeatherTable};
use evprofile::experiment::{capacity_densities, run_ablation, run_forecast_experiment, soc_error_by_hour};
use evprofile::pipeline::{prepare, train_models, RunConfig};
use evprofile::transpose::ScenarioFlags;
use evprofile::Result;

/// Outcome of one criterion: name, pass flag, detail.
pub type Check = (String, bool, String);

pub fn check(name: &str, ok: bool, detail: impl Into<String>) -> Check {
    (name.to_string(), ok, detail.into())
}

pub fn report(checks: &[Check]) -> usize {
    let mut failed = 0;
    for (name, ok, detail) in checks {
        println!("{} {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    failed
}

pub fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

/// Reproduction checks on a real dataset. `counts` carries the expected
/// (sessions, records) from ingestion, when known.
pub fn reproduction_checks(
    sessions: Vec<ChargingSession>,
    rows: (usize, usize),
    weather: &WeatherTable,
    cfg: &RunConfig,
    counts: Option<(usize, usize)>,
) -> Result<Vec<Check>> {
    let start = Instant::now();
    let mut out = Vec::new();
    if let Some((ns, nr)) = counts {
        out.push(check(
            "ingest_counts",
            rows == (ns, nr),
            format!("{} sessions / {} records (want {ns} / {nr})", rows.0, rows.1),
        ));
    }

    let data = prepare(sessions, weather, &cfg.split)?;
    let unc = filter_uncontrolled(&data.split.test);
    out.push(check(
        "uncontrolled_test_count",
        in_range(unc.len() as f64, 147.0, 177.0),
        format!("{} (want 162 +/- 15)", unc.len()),
    ));

    let models = train_models(&data.split.train, cfg)?;
    let fe = run_forecast_experiment(
        &models,
        &data.split.test,
        cfg.forecast_iterations,
        cfg.emae_normalizer,
        cfg.seed,
    )?;
    let med = |label: &str| fe.stats(label).map_or(f64::NAN, |s| s.median);
    let (m0, m0c, m10) = (med("0"), med("0C"), med("10"));
    out.push(check(
        "forecast_unconnected_estimated_median",
        in_range(m0, 35.0, 45.0),
        format!("{m0:.2} % (want [35, 45])"),
    ));
    out.push(check(
        "forecast_known_capacity_gain",
        in_range(m0 - m0c, 5.0, 15.0),
        format!("{:.2} pp (want [5, 15])", m0 - m0c),
    ));
    out.push(check(
        "forecast_iteration_10_median",
        in_range(m10, 12.0, 20.0),
        format!("{m10:.2} % (want [12, 20])"),
    ));
    let meds: Vec<f64> = (2..=10).map(|i| med(&i.to_string())).collect();
    out.push(check(
        "forecast_medians_non_increasing_2_to_10",
        meds.windows(2).all(|w| w[1] <= w[0]),
        format!("{meds:.2?}"),
    ));

    let real: Vec<f64> = data.split.test.iter().map(|s| s.capacity_kwh).collect();
    let pred: Vec<f64> = fe.sessions.iter().map(|s| s.estimated_capacity).collect();
    let tv = capacity_densities(&real, &pred)?.total_variation();
    out.push(check(
        "capacity_kde_total_variation",
        tv < 0.25,
        format!("{tv:.3} (want < 0.25)"),
    ));

    let hourly = soc_error_by_hour(&data.split.test, &models.soc, cfg.ablation_seeds, cfg.seed);
    let bins: Vec<f64> = hourly
        .arrival
        .iter()
        .chain(&hourly.departure)
        .filter_map(|b| b.summary.map(|s| s.median))
        .collect();
    let frac = bins.iter().filter(|m| m.abs() <= 25.0).count() as f64 / bins.len().max(1) as f64;
    out.push(check(
        "hourly_soc_error_medians",
        frac >= 0.8,
        format!(
            "{:.0} % of {} populated hours within 25 % (want >= 80 %)",
            100.0 * frac,
            bins.len()
        ),
    ));

    let reports = run_ablation(&models, &unc, cfg.ablation_seeds, cfg.dt_minutes, cfg.seed)?;
    let find = |f: ScenarioFlags| reports.iter().find(|r| r.flags == f).expect("all eight scenarios");
    let (perfect, none) = (find(ScenarioFlags::PERFECT), find(ScenarioFlags::NONE));
    let p_med = perfect.emae.map_or(f64::NAN, |s| s.median);
    let n_med = none.emae.map_or(f64::NAN, |s| s.median);
    out.push(check(
        "scenario_perfect_emae_median",
        in_range(p_med, 38.0, 52.0),
        format!("{p_med:.2} % (want [38, 52])"),
    ));
    out.push(check(
        "scenario_perfect_below_none",
        p_med < n_med,
        format!("{p_med:.2} % vs {n_med:.2} %"),
    ));
    let pooled: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.rows.iter().map(|x| x.time_err_pu))
        .collect();
    let t_med = evprofile::metrics::DistributionSummary::from_samples(&pooled).map_or(f64::NAN, |s| s.median);
    out.push(check(
        "scenario_time_error_median",
        in_range(t_med, 0.2, 0.4),
        format!("{t_med:.3} (want [0.2, 0.4])"),
    ));
    let none_iqr = none.energy_err.map_or(f64::NAN, |s| s.iqr());
    let singles: Vec<(String, f64)> = reports
        .iter()
        .filter(|r| r.flags.known_count() == 1)
        .map(|r| (r.flags.to_string(), r.energy_err.map_or(f64::NAN, |s| s.iqr())))
        .collect();
    out.push(check(
        "scenario_energy_iqr_single_known_below_none",
        singles.iter().all(|(_, iqr)| *iqr < none_iqr),
        format!("{singles:.3?} vs none {none_iqr:.3}"),
    ));
    let secs = start.elapsed().as_secs_f64();
    out.push(check(
        "reproduction_runtime",
        secs < 600.0,
        format!("{secs:.1} s (want < 600 s)"),
    ));
    Ok(out)
}

/// Sessions, their (session, record) counts, weather and config.
pub type LoadedDir = (Vec<ChargingSession>, (usize, usize), WeatherTable, RunConfig);

/// Loads `sessions.csv` and `weather.csv` from a directory, with an optional
/// `config.json` next to them.
pub fn load_dir(dir: &Path) -> Result<LoadedDir> {
    let cfg_path = dir.join("config.json");
    let cfg: RunConfig = if cfg_path.exists() {
        serde_json::from_reader(std::fs::File::open(cfg_path)?)?
    } else {
        RunConfig::default()
    };
    let report = load_sessions(dir.join("sessions.csv"), &cfg.schema)?;
    let weather = WeatherTable::load(dir.join("weather.csv"))?;
    let rows = (report.sessions.len(), report.accepted_records());
    Ok((report.sessions, rows, weather, cfg))
}
