//! One function per subcommand.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use evprofile::dataset::{
    filter_uncontrolled, load_sessions, resample_to_soc_grid, write_sessions_csv, write_weather_csv, ChargingSession,
};
use evprofile::experiment::{
    capacity_densities, forecast_session, run_ablation, run_forecast_experiment, soc_error_by_hour,
};
use evprofile::metrics::DistributionSummary;
use evprofile::pipeline::{unconnected_samples, IngestSummary, RunConfig};
use evprofile::refiner::run_rolling_session;
use evprofile::rf::{predict_unconnected, tune::write_trial_log, tune_rf, RfHyperparams, SearchSpace};
use evprofile::seed::derive_seed;
use evprofile::synth::{generate, SynthConfig};

use crate::fetch;
use crate::output;
use crate::run::{train_and_save, write_json, CmdResult, Context, Failure};

pub fn ingest(ctx: &Context) -> CmdResult {
    let report = load_sessions(ctx.sessions_path()?, &ctx.cfg.schema)?;
    let summary = IngestSummary::from_report(&report);
    for r in &report.rejected {
        log::info!("rejected session {}: {}", r.session_id, r.reason);
    }
    println!(
        "{} sessions ({} uncontrolled), {} records, {} rejected",
        summary.sessions, summary.uncontrolled, summary.records, summary.rejected
    );
    let path = ctx.out_path("ingest_summary.json")?;
    write_json(&path, &summary)?;
    ctx.record("ingest", &[&path])
}

pub fn fetch_weather(ctx: &Context, url: &str, lat: f64, lon: f64, start: &str, end: &str) -> CmdResult {
    let table = fetch::fetch(url, lat, lon, start, end)?;
    let path = match &ctx.cfg.weather_path {
        Some(p) => p.clone(),
        None => ctx.out_path("weather.csv")?,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_weather_csv(BufWriter::new(File::create(&path)?), &table)?;
    println!("{} hourly temperatures -> {}", table.temps.len(), path.display());
    ctx.record("fetch-weather", &[&path])
}

#[derive(Serialize)]
struct SplitIds<'a> {
    train: Vec<&'a str>,
    test: Vec<&'a str>,
    skipped: &'a [(String, String)],
}

#[derive(Serialize)]
struct TrainSummary {
    train_sessions: usize,
    test_sessions: usize,
    capacity_components: usize,
    hourly_arrival_models: usize,
    hourly_departure_models: usize,
    history_rows: usize,
    trees: usize,
}

pub fn train(ctx: &Context) -> CmdResult {
    let data = ctx.prepared()?;
    let (m, mut outputs) = train_and_save(ctx, &data)?;
    let summary = TrainSummary {
        train_sessions: data.split.train.len(),
        test_sessions: data.split.test.len(),
        capacity_components: m.capacity.n_components(),
        hourly_arrival_models: m.soc.arrival.iter().flatten().count(),
        hourly_departure_models: m.soc.departure.iter().flatten().count(),
        history_rows: m.matrix.len(),
        trees: m.rf.trees.len(),
    };
    println!(
        "trained on {} sessions: {} trees, {} capacity components, {} history rows",
        summary.train_sessions, summary.trees, summary.capacity_components, summary.history_rows
    );
    let split_path = ctx.out_path("split.json")?;
    write_json(
        &split_path,
        &SplitIds {
            train: ids(&data.split.train),
            test: ids(&data.split.test),
            skipped: &data.skipped,
        },
    )?;
    let summary_path = ctx.out_path("train_summary.json")?;
    write_json(&summary_path, &summary)?;
    outputs.push(split_path);
    outputs.push(summary_path);
    ctx.record("train", &refs(&outputs))
}

fn ids(v: &[ChargingSession]) -> Vec<&str> {
    v.iter().map(|s| s.session_id.as_str()).collect()
}

fn refs(paths: &[PathBuf]) -> Vec<&Path> {
    paths.iter().map(PathBuf::as_path).collect()
}

#[derive(Serialize)]
struct SimulationSummary {
    session_id: String,
    in_test_split: bool,
    capacity_kwh: f64,
    estimated_capacity_kwh: f64,
    soc_arrival: f64,
    soc_departure: f64,
    iterations: Vec<SimulatedIteration>,
}

#[derive(Serialize)]
struct SimulatedIteration {
    iteration: String,
    soc_start: usize,
    soc_end: usize,
    source_session: Option<String>,
    emae_pct: Option<f64>,
}

pub fn simulate(ctx: &Context, session_id: &str) -> CmdResult {
    let data = ctx.prepared()?;
    let m = ctx.models(&data)?;
    let (index, in_test, session) = match data.split.test.iter().position(|s| s.session_id == session_id) {
        Some(i) => (i, true, &data.split.test[i]),
        None => {
            let s = data
                .split
                .train
                .iter()
                .find(|s| s.session_id == session_id)
                .ok_or_else(|| Failure::Data(format!("no usable session `{session_id}`")))?;
            log::warn!("session {session_id} is in the training split; its own profile is in the history matrix");
            (data.split.test.len(), false, s)
        }
    };
    let cfg = &ctx.cfg;
    let n = cfg.max_refinements;
    let fc = forecast_session(&m, session, n, cfg.emae_normalizer, cfg.seed, index as u64)?;
    let temp = session.temp_at_arrival.expect("prepared sessions carry a temperature");
    let est = predict_unconnected(&m.rf, temp, fc.estimated_capacity);
    let known = predict_unconnected(&m.rf, temp, session.capacity_kwh);
    let updates = run_rolling_session(&m.matrix, session, &est, n)?;
    let real = resample_to_soc_grid(session)?;

    let csv_path = ctx.out_path(&format!("simulate_{session_id}.csv"))?;
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["iteration", "soc", "predicted_kw", "realized_kw"])?;
    let mut put = |label: &str, from: usize, powers: &[f64]| -> CmdResult {
        for (k, p) in powers.iter().enumerate() {
            let soc = from + k;
            w.write_record([
                label.to_string(),
                soc.to_string(),
                p.to_string(),
                real.at(soc).to_string(),
            ])?;
        }
        Ok(())
    };
    let first = &updates[0];
    put("0", first.soc_start, &first.powers)?;
    put("0C", first.soc_start, known.slice(first.soc_start, first.soc_end))?;
    for u in &updates[1..] {
        put(&u.iteration.to_string(), u.soc_start, &u.powers)?;
    }
    w.flush()?;
    drop(w);

    let mut iterations = vec![
        SimulatedIteration {
            iteration: "0".into(),
            soc_start: first.soc_start,
            soc_end: first.soc_end,
            source_session: None,
            emae_pct: fc.emae[0],
        },
        SimulatedIteration {
            iteration: "0C".into(),
            soc_start: first.soc_start,
            soc_end: first.soc_end,
            source_session: None,
            emae_pct: fc.emae[1],
        },
    ];
    iterations.extend(updates[1..].iter().map(|u| SimulatedIteration {
        iteration: u.iteration.to_string(),
        soc_start: u.soc_start,
        soc_end: u.soc_end,
        source_session: u.source_session.clone(),
        emae_pct: fc.emae[u.iteration + 1],
    }));
    let summary = SimulationSummary {
        session_id: session_id.to_string(),
        in_test_split: in_test,
        capacity_kwh: session.capacity_kwh,
        estimated_capacity_kwh: fc.estimated_capacity,
        soc_arrival: session.soc_a(),
        soc_departure: session.soc_d(),
        iterations,
    };
    let json_path = ctx.out_path(&format!("simulate_{session_id}.json"))?;
    write_json(&json_path, &summary)?;
    for it in &summary.iterations {
        match it.emae_pct {
            Some(e) => println!(
                "{:>3}  SoC {:>3}..{:<3}  EMAE {e:6.2} %",
                it.iteration, it.soc_start, it.soc_end
            ),
            None => println!("{:>3}  SoC {:>3}..{:<3}", it.iteration, it.soc_start, it.soc_end),
        }
    }
    ctx.record("simulate-session", &[&csv_path, &json_path])
}

#[derive(Serialize)]
struct EvaluationSummary {
    test_sessions: usize,
    capacity_components: usize,
    capacity_kde_total_variation: f64,
    real_bandwidth: f64,
    predicted_bandwidth: f64,
    median_emae_by_iteration: Vec<(String, Option<f64>)>,
}

pub fn evaluate(ctx: &Context) -> CmdResult {
    let cfg = &ctx.cfg;
    let data = ctx.prepared()?;
    let m = ctx.models(&data)?;
    let test = &data.split.test;
    let fe = run_forecast_experiment(&m, test, cfg.forecast_iterations, cfg.emae_normalizer, cfg.seed)?;

    let real: Vec<f64> = test.iter().map(|s| s.capacity_kwh).collect();
    let pred: Vec<f64> = fe.sessions.iter().map(|s| s.estimated_capacity).collect();
    let dens = capacity_densities(&real, &pred)?;
    let hourly = soc_error_by_hour(test, &m.soc, cfg.ablation_seeds, cfg.seed);

    let p_iter = ctx.out_path("emae_by_iteration.csv")?;
    let p_sess = ctx.out_path("emae_by_session.csv")?;
    let p_kde = ctx.out_path("capacity_kde.csv")?;
    let p_hour = ctx.out_path("soc_errors_by_hour.csv")?;
    let p_sum = ctx.out_path("evaluation_summary.json")?;
    output::emae_by_iteration(&p_iter, &fe)?;
    output::emae_by_session(&p_sess, &fe)?;
    output::capacity_kde(&p_kde, &dens)?;
    output::soc_errors_by_hour(&p_hour, &hourly)?;

    let summary = EvaluationSummary {
        test_sessions: test.len(),
        capacity_components: m.capacity.n_components(),
        capacity_kde_total_variation: dens.total_variation(),
        real_bandwidth: dens.real_bandwidth,
        predicted_bandwidth: dens.predicted_bandwidth,
        median_emae_by_iteration: fe
            .iterations
            .iter()
            .map(|i| (i.label.clone(), i.summary.map(|s| s.median)))
            .collect(),
    };
    write_json(&p_sum, &summary)?;
    for (label, med) in summary.median_emae_by_iteration.iter().take(12) {
        if let Some(med) = med {
            println!("iteration {label:>3}: median EMAE {med:6.2} %");
        }
    }
    println!(
        "capacity density total variation {:.3}",
        summary.capacity_kde_total_variation
    );
    ctx.record("evaluate", &[&p_iter, &p_sess, &p_kde, &p_hour, &p_sum])
}

pub fn ablate(ctx: &Context) -> CmdResult {
    let cfg = &ctx.cfg;
    let data = ctx.prepared()?;
    let m = ctx.models(&data)?;
    let unc = filter_uncontrolled(&data.split.test);
    let reports = run_ablation(&m, &unc, cfg.ablation_seeds, cfg.dt_minutes, cfg.seed)?;
    let p_rows = ctx.out_path("ablation_metrics.csv")?;
    let p_sum = ctx.out_path("ablation_summary.csv")?;
    output::ablation_metrics(&p_rows, &reports)?;
    output::ablation_summary(&p_sum, &reports)?;
    for r in &reports {
        let med = |s: Option<DistributionSummary>| s.map_or("n/a".to_string(), |s| format!("{:+.3}", s.median));
        println!(
            "{:<24} EMAE {:6.2} %  time {} pu  energy {} pu",
            r.flags.to_string(),
            r.emae.map_or(f64::NAN, |s| s.median),
            med(r.time_err),
            med(r.energy_err)
        );
    }
    ctx.record("ablate", &[&p_rows, &p_sum])
}

#[derive(Serialize)]
struct BestHyperparams {
    params: RfHyperparams,
    cv_profile_mae_kw: f64,
    trials: usize,
}

pub fn tune(ctx: &Context, trials: Option<usize>) -> CmdResult {
    let cfg = &ctx.cfg;
    let n_trials = trials.unwrap_or(cfg.tune.n_trials);
    if n_trials < 1 {
        return Err(Failure::Config("--trials must be >= 1".into()));
    }
    let data = ctx.prepared()?;
    let samples = unconnected_samples(&data.split.train)?;
    let res = tune_rf(
        &samples,
        &SearchSpace::default(),
        n_trials,
        cfg.tune.k_folds,
        derive_seed(cfg.seed, &[12]),
    )?;
    let p_best = ctx.out_path("best_hyperparams.json")?;
    let p_log = ctx.out_path("tune_trials.csv")?;
    write_json(
        &p_best,
        &BestHyperparams {
            params: res.best,
            cv_profile_mae_kw: res.best_score,
            trials: res.trials.len(),
        },
    )?;
    write_trial_log(BufWriter::new(File::create(&p_log)?), &res.trials)?;
    println!(
        "best cross-validated profile MAE {:.4} kW over {n_trials} trials",
        res.best_score
    );
    ctx.record("tune", &[&p_best, &p_log])
}

pub fn gen_synth(ctx: &Context, n_sessions: usize) -> CmdResult {
    if n_sessions < 1 {
        return Err(Failure::Config("--sessions must be >= 1".into()));
    }
    let fleet = generate(&SynthConfig {
        n_sessions,
        seed: ctx.cfg.seed,
        ..SynthConfig::default()
    });
    let dir = ctx.out_dir()?;
    let p_sess = dir.join("sessions.csv");
    let p_weather = dir.join("weather.csv");
    let p_cfg = dir.join("config.json");
    write_sessions_csv(BufWriter::new(File::create(&p_sess)?), &fleet.sessions)?;
    write_weather_csv(BufWriter::new(File::create(&p_weather)?), &fleet.weather)?;
    let run_cfg = RunConfig {
        sessions_path: Some("sessions.csv".into()),
        weather_path: Some("weather.csv".into()),
        out_dir: "run".into(),
        ..ctx.cfg.clone()
    };
    write_json(&p_cfg, &run_cfg)?;
    println!("{n_sessions} synthetic sessions -> {}", dir.display());
    ctx.record("gen-synth", &[&p_sess, &p_weather, &p_cfg])
}
