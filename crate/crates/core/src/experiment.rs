//! Experiment drivers: rolling forecast accuracy per iteration, the eight
//! information scenarios, hourly SoC imputation errors and capacity
//! densities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{resample_to_soc_grid, ChargingSession};
use crate::error::{Error, Result};
use crate::gmm::{estimate_capacity, estimate_soc, GmmModel, HourlySocModels, TargetKind, HOURS};
use crate::metrics::{
    emae_padded, emae_with, energy_error_pu, kde_grid, kde_on_grid, silverman_bandwidth, time_error_pu,
    DistributionSummary, EmaeDomain, EmaeNormalizer,
};
use crate::pipeline::TrainedModels;
use crate::profile::grid_index;
use crate::refiner::run_rolling_session;
use crate::rf::predict_unconnected;
use crate::seed::rng_for;
use crate::transpose::{apply_scenario, bin_average, scheduled_energy, transpose_to_time, ScenarioFlags};

/// Iteration labels: "0" is the unconnected forecast with estimated
/// capacity, "0C" the one with known capacity, then 1, 2, … refinements.
pub fn iteration_labels(iterations: usize) -> Vec<String> {
    let mut out = vec!["0".to_string(), "0C".to_string()];
    out.extend((1..=iterations).map(|i| i.to_string()));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionForecast {
    pub session_id: String,
    pub estimated_capacity: f64,
    /// EMAE per label, aligned with `iteration_labels`; `None` once the
    /// session has run out of minutes.
    pub emae: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub label: String,
    pub summary: Option<DistributionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastExperiment {
    pub normalizer: EmaeNormalizer,
    pub sessions: Vec<SessionForecast>,
    pub iterations: Vec<IterationStats>,
}

impl ForecastExperiment {
    pub fn stats(&self, label: &str) -> Option<&DistributionSummary> {
        self.iterations
            .iter()
            .find(|s| s.label == label)
            .and_then(|s| s.summary.as_ref())
    }

    pub fn values(&self, label_index: usize) -> Vec<f64> {
        self.sessions.iter().filter_map(|s| s.emae[label_index]).collect()
    }
}

fn soc_emae(pred: &[f64], real: &[f64], normalizer: EmaeNormalizer) -> Result<f64> {
    Ok(emae_with(pred, real, EmaeDomain::SocIndexed, normalizer)?.value)
}

/// Scores the unconnected forecasts (estimated and known capacity) over the
/// realized SoC span, then each refinement over the remaining span up to the
/// departure SoC.
pub fn forecast_session(
    models: &TrainedModels,
    session: &ChargingSession,
    iterations: usize,
    normalizer: EmaeNormalizer,
    seed: u64,
    index: u64,
) -> Result<SessionForecast> {
    let temp = session.temp_at_arrival.ok_or_else(|| Error::WeatherJoin {
        session_id: session.session_id.clone(),
        message: "no arrival temperature".into(),
    })?;
    let real = resample_to_soc_grid(session)?;
    let (a, d) = (grid_index(session.soc_a()), grid_index(session.soc_d()));
    let mut rng = rng_for(seed, &[index]);
    let c_hat = estimate_capacity(&models.capacity, &mut rng);
    let est = predict_unconnected(&models.rf, temp, c_hat);
    let known = predict_unconnected(&models.rf, temp, session.capacity_kwh);

    let mut emae = vec![
        Some(soc_emae(est.slice(a, d), real.slice(a, d), normalizer)?),
        Some(soc_emae(known.slice(a, d), real.slice(a, d), normalizer)?),
    ];
    emae.resize(iterations + 2, None);
    let updates = run_rolling_session(&models.matrix, session, &est, iterations)?;
    for u in updates.iter().skip(1) {
        let r = real.slice(u.soc_start, u.soc_end);
        emae[u.iteration + 1] = Some(soc_emae(&u.powers, r, normalizer)?);
    }
    Ok(SessionForecast {
        session_id: session.session_id.clone(),
        estimated_capacity: c_hat,
        emae,
    })
}

pub fn run_forecast_experiment(
    models: &TrainedModels,
    test: &[ChargingSession],
    iterations: usize,
    normalizer: EmaeNormalizer,
    seed: u64,
) -> Result<ForecastExperiment> {
    let sessions = test
        .par_iter()
        .enumerate()
        .map(|(i, s)| forecast_session(models, s, iterations, normalizer, seed, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let iterations = iteration_labels(iterations)
        .into_iter()
        .enumerate()
        .map(|(k, label)| {
            let v: Vec<f64> = sessions.iter().filter_map(|s| s.emae[k]).collect();
            IterationStats {
                label,
                summary: DistributionSummary::from_samples(&v),
            }
        })
        .collect();
    Ok(ForecastExperiment {
        normalizer,
        sessions,
        iterations,
    })
}

/// Realized power on a `dt` grid from arrival: each record's power holds
/// until the next record, averaged per window.
pub fn realized_time_series(session: &ChargingSession, dt: f64) -> Vec<f64> {
    let t0 = session.t_a();
    let mins = |t: chrono::NaiveDateTime| (t - t0).num_seconds() as f64 / 60.0;
    let segs: Vec<(f64, f64, f64)> = session
        .records
        .windows(2)
        .map(|w| (mins(w[0].timestamp), mins(w[1].timestamp), w[0].power))
        .collect();
    bin_average(&segs, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub session_id: String,
    pub seed_index: usize,
    pub emae_pct: f64,
    pub time_err_pu: f64,
    /// `None` under perfect information, where the energy is known.
    pub energy_err_pu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub flags: ScenarioFlags,
    pub rows: Vec<AblationRow>,
    pub emae: Option<DistributionSummary>,
    pub time_err: Option<DistributionSummary>,
    pub energy_err: Option<DistributionSummary>,
}

impl ScenarioReport {
    pub fn session_count(&self) -> usize {
        let mut ids: Vec<&str> = self.rows.iter().map(|r| r.session_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

fn ablation_row(
    models: &TrainedModels,
    session: &ChargingSession,
    flags: ScenarioFlags,
    dt: f64,
    seed: u64,
    path: [u64; 3],
) -> Result<AblationRow> {
    let temp = session.temp_at_arrival.ok_or_else(|| Error::WeatherJoin {
        session_id: session.session_id.clone(),
        message: "no arrival temperature".into(),
    })?;
    let mut rng = rng_for(seed, &path);
    let inputs = apply_scenario(session, flags, &models.capacity, &models.soc, &mut rng);
    let profile = predict_unconnected(&models.rf, temp, inputs.capacity);
    let ts = transpose_to_time(&inputs.with_profile(profile, dt))?;
    let realized = realized_time_series(session, dt);
    let real_energy = scheduled_energy(session.capacity_kwh, session.soc_a(), session.soc_d());
    let known = flags == ScenarioFlags::PERFECT;
    Ok(AblationRow {
        session_id: session.session_id.clone(),
        seed_index: path[2] as usize,
        emae_pct: emae_padded(&ts.powers, &realized)?.value,
        time_err_pu: time_error_pu(session.duration_minutes(), ts.duration)?,
        energy_err_pu: if known {
            None
        } else {
            Some(energy_error_pu(real_energy, ts.scheduled_energy)?)
        },
    })
}

/// Runs every session through the eight scenarios `n_seeds` times each and
/// pools the metrics per scenario.
pub fn run_ablation(
    models: &TrainedModels,
    uncontrolled: &[ChargingSession],
    n_seeds: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<ScenarioReport>> {
    ScenarioFlags::all()
        .iter()
        .enumerate()
        .map(|(k, &flags)| {
            let jobs: Vec<(usize, usize)> = (0..uncontrolled.len())
                .flat_map(|i| (0..n_seeds).map(move |r| (i, r)))
                .collect();
            let rows = jobs
                .par_iter()
                .map(|&(i, r)| {
                    ablation_row(
                        models,
                        &uncontrolled[i],
                        flags,
                        dt,
                        seed,
                        [i as u64, k as u64, r as u64],
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let col = |f: &dyn Fn(&AblationRow) -> Option<f64>| {
                DistributionSummary::from_samples(&rows.iter().filter_map(f).collect::<Vec<_>>())
            };
            Ok(ScenarioReport {
                flags,
                emae: col(&|r| Some(r.emae_pct)),
                time_err: col(&|r| Some(r.time_err_pu)),
                energy_err: col(&|r| r.energy_err_pu),
                rows,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourBin {
    pub hour: usize,
    /// `None` when no test session falls in this hour.
    pub summary: Option<DistributionSummary>,
}

impl HourBin {
    pub fn populated(&self) -> bool {
        self.summary.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlySocErrors {
    pub arrival: Vec<HourBin>,
    pub departure: Vec<HourBin>,
}

/// Signed errors (real − imputed) of arrival SoC by arrival hour and of
/// departure SoC by departure hour.
pub fn soc_error_by_hour(
    test: &[ChargingSession],
    models: &HourlySocModels,
    n_seeds: usize,
    seed: u64,
) -> HourlySocErrors {
    let mut arr: Vec<Vec<f64>> = vec![Vec::new(); HOURS];
    let mut dep: Vec<Vec<f64>> = vec![Vec::new(); HOURS];
    for (i, s) in test.iter().enumerate() {
        let (ha, hd) = (s.arrival_hour(), s.departure_hour());
        for r in 0..n_seeds {
            let mut rng = rng_for(seed, &[i as u64, r as u64]);
            arr[ha].push(s.soc_a() - estimate_soc(models, TargetKind::ArrivalSoc, ha, &mut rng));
            dep[hd].push(s.soc_d() - estimate_soc(models, TargetKind::DepartureSoc, hd, &mut rng));
        }
    }
    let bins = |v: Vec<Vec<f64>>| {
        v.into_iter()
            .enumerate()
            .map(|(hour, e)| HourBin {
                hour,
                summary: DistributionSummary::from_samples(&e),
            })
            .collect()
    };
    HourlySocErrors {
        arrival: bins(arr),
        departure: bins(dep),
    }
}

/// Real and imputed capacity densities on one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityDensities {
    pub grid: Vec<f64>,
    pub real: Vec<f64>,
    pub predicted: Vec<f64>,
    pub real_bandwidth: f64,
    pub predicted_bandwidth: f64,
}

impl CapacityDensities {
    /// ½∫|f_real − f_pred| by the trapezoid rule.
    pub fn total_variation(&self) -> f64 {
        let d: Vec<f64> = self
            .real
            .iter()
            .zip(&self.predicted)
            .map(|(a, b)| (a - b).abs())
            .collect();
        0.5 * self
            .grid
            .windows(2)
            .zip(d.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
            .sum::<f64>()
    }
}

pub fn capacity_densities(real: &[f64], predicted: &[f64]) -> Result<CapacityDensities> {
    if real.len() < 2 || predicted.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: real.len().min(predicted.len()),
        });
    }
    let (hr, hp) = (silverman_bandwidth(real), silverman_bandwidth(predicted));
    let lo = real.iter().chain(predicted).cloned().fold(f64::INFINITY, f64::min);
    let hi = real.iter().chain(predicted).cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid = kde_grid(lo, hi, hr.max(hp), 512);
    Ok(CapacityDensities {
        real: kde_on_grid(real, hr, &grid),
        predicted: kde_on_grid(predicted, hp, &grid),
        grid,
        real_bandwidth: hr,
        predicted_bandwidth: hp,
    })
}

/// One capacity draw per session from the capacity model.
pub fn sample_capacities(model: &GmmModel, n: usize, seed: u64) -> Vec<f64> {
    (0..n)
        .map(|i| estimate_capacity(model, &mut rng_for(seed, &[i as u64])))
        .collect()
}
