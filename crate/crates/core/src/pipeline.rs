//! Run configuration, data preparation and training of every model the
//! experiments need.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    join_weather, resample_to_soc_grid, split_dataset, ChargingSession, DatasetSplit, LoadReport, SessionSchema,
    SplitMode, WeatherTable,
};
use crate::error::{Error, Result};
use crate::gmm::{fit_capacity_model, fit_hourly_soc_models, CvConfig, CvScore, GmmModel, HourlySocModels};
use crate::metrics::EmaeNormalizer;
use crate::refiner::{build_history_matrix, HistoryMatrix};
use crate::rf::{train_unconnected_rf, RfHyperparams, RfModel, UnconnectedSample};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratio: f64,
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratio: 0.7,
            mode: SplitMode::Chronological,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub mc_max: usize,
    pub k_folds: usize,
    pub score: CvScore,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            mc_max: 11,
            k_folds: 5,
            score: CvScore::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub n_trials: usize,
    pub k_folds: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            n_trials: 100,
            k_folds: 5,
        }
    }
}

/// Everything a run depends on. Serialized as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sessions_path: Option<PathBuf>,
    pub weather_path: Option<PathBuf>,
    pub schema: SessionSchema,
    pub split: SplitConfig,
    pub rf: RfHyperparams,
    pub gmm: GmmConfig,
    pub tune: TuneConfig,
    /// Transposition step, minutes.
    pub dt_minutes: f64,
    /// Refinements replayed by `simulate-session`.
    pub max_refinements: usize,
    /// Refinement iterations scored by the forecast experiment.
    pub forecast_iterations: usize,
    pub ablation_seeds: usize,
    pub emae_normalizer: EmaeNormalizer,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sessions_path: None,
            weather_path: None,
            schema: SessionSchema::default(),
            split: SplitConfig::default(),
            rf: RfHyperparams::default(),
            gmm: GmmConfig::default(),
            tune: TuneConfig::default(),
            dt_minutes: 1.0,
            max_refinements: 10,
            forecast_iterations: 30,
            ablation_seeds: 5,
            emae_normalizer: EmaeNormalizer::default(),
            seed: 42,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(Error::param("split.ratio must lie in (0, 1)"));
        }
        if !(self.dt_minutes > 0.0 && self.dt_minutes.is_finite()) {
            return Err(Error::param("dt_minutes must be positive"));
        }
        if self.ablation_seeds < 1 {
            return Err(Error::param("ablation_seeds must be >= 1"));
        }
        if self.gmm.mc_max < 1 || self.gmm.k_folds < 2 {
            return Err(Error::param("gmm needs mc_max >= 1 and k_folds >= 2"));
        }
        if self.tune.n_trials < 1 || self.tune.k_folds < 2 {
            return Err(Error::param("tune needs n_trials >= 1 and k_folds >= 2"));
        }
        self.rf.validate()
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            mc_max: self.gmm.mc_max,
            k_folds: self.gmm.k_folds,
            seed: derive_seed(self.seed, &[11]),
            score: self.gmm.score,
            ..CvConfig::default()
        }
    }

    pub fn rf_seed(&self) -> u64 {
        derive_seed(self.seed, &[10])
    }
}

/// Counts reported by `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub sessions: usize,
    pub records: usize,
    pub rejected: usize,
    pub rejected_by_reason: BTreeMap<String, usize>,
    pub controlled: usize,
    pub uncontrolled: usize,
}

impl IngestSummary {
    pub fn from_report(report: &LoadReport) -> Self {
        let mut by_reason = BTreeMap::new();
        for r in &report.rejected {
            *by_reason.entry(r.reason.to_string()).or_insert(0) += 1;
        }
        let controlled = report.sessions.iter().filter(|s| s.controlled).count();
        IngestSummary {
            rows_read: report.rows_read,
            sessions: report.sessions.len(),
            records: report.accepted_records(),
            rejected: report.rejected.len(),
            rejected_by_reason: by_reason,
            controlled,
            uncontrolled: report.sessions.len() - controlled,
        }
    }
}

/// Sessions ready for modelling and the ones set aside on the way.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub split: DatasetSplit,
    /// (session id, reason) for sessions dropped after loading.
    pub skipped: Vec<(String, String)>,
}

/// Joins weather, drops sessions without a temperature or without SoC
/// progress, and splits the rest.
pub fn prepare(sessions: Vec<ChargingSession>, weather: &WeatherTable, split: &SplitConfig) -> Result<PreparedData> {
    let (joined, errors) = join_weather(sessions, weather);
    let join_msgs: BTreeMap<String, String> = errors
        .into_iter()
        .filter_map(|e| match e {
            Error::WeatherJoin { session_id, message } => Some((session_id, message)),
            _ => None,
        })
        .collect();
    let mut skipped = Vec::new();
    let mut usable = Vec::with_capacity(joined.len());
    for s in joined {
        match (s.temp_at_arrival, resample_to_soc_grid(&s)) {
            (None, _) => {
                let msg = join_msgs.get(&s.session_id).cloned();
                skipped.push((
                    s.session_id.clone(),
                    msg.unwrap_or_else(|| "no arrival temperature".into()),
                ));
            }
            (_, Err(e)) => skipped.push((s.session_id.clone(), e.to_string())),
            _ => usable.push(s),
        }
    }
    if usable.is_empty() {
        return Err(Error::EmptyDataset("no usable sessions after weather join".into()));
    }
    Ok(PreparedData {
        split: split_dataset(usable, split.ratio, split.mode, split.seed)?,
        skipped,
    })
}

/// The four trained artifacts.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub rf: RfModel,
    pub capacity: GmmModel,
    pub soc: HourlySocModels,
    pub matrix: HistoryMatrix,
}

pub fn unconnected_samples(train: &[ChargingSession]) -> Result<Vec<UnconnectedSample>> {
    train
        .iter()
        .map(|s| {
            let temp = s.temp_at_arrival.ok_or_else(|| Error::WeatherJoin {
                session_id: s.session_id.clone(),
                message: "no arrival temperature".into(),
            })?;
            Ok(UnconnectedSample {
                temp_at_arrival: temp,
                capacity_kwh: s.capacity_kwh,
                profile: resample_to_soc_grid(s)?,
            })
        })
        .collect()
}

pub fn train_models(train: &[ChargingSession], cfg: &RunConfig) -> Result<TrainedModels> {
    let cv = cfg.cv_config();
    let samples = unconnected_samples(train)?;
    log::info!("training forest on {} profiles", samples.len());
    let rf = train_unconnected_rf(&samples, &cfg.rf, cfg.rf_seed())?;
    let capacity = fit_capacity_model(train, &cv)?;
    let soc = fit_hourly_soc_models(train, &cv)?;
    let matrix = build_history_matrix(train)?;
    Ok(TrainedModels {
        rf,
        capacity,
        soc,
        matrix,
    })
}
