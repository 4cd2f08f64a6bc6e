//! Random forest mapping (arrival temperature, battery capacity) to a full
//! 101-point charging profile.

mod tree;
pub mod tune;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{SocGridProfile, GRID_LEN};
use crate::seed::rng_for;

pub use tree::{Node, RegressionTree};
pub use tune::{tune_rf, SearchSpace, TrialRecord, TuneResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
}

impl MaxFeatures {
    /// Features drawn per split: ⌈√n⌉ or ⌈log₂ n⌉, at least 1.
    pub fn count(&self, n_features: usize) -> usize {
        let n = n_features as f64;
        let k = match self {
            MaxFeatures::Sqrt => n.sqrt().ceil(),
            MaxFeatures::Log2 => n.log2().ceil(),
        };
        (k as usize).clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Squared,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfHyperparams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub criterion: Criterion,
}

impl Default for RfHyperparams {
    /// The tuned configuration reported for the DESL data.
    fn default() -> Self {
        RfHyperparams {
            n_estimators: 600,
            max_depth: 47,
            min_samples_split: 2,
            min_samples_leaf: 18,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            criterion: Criterion::Squared,
        }
    }
}

impl RfHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators < 1 {
            return Err(Error::param("n_estimators must be >= 1"));
        }
        if self.max_depth < 1 {
            return Err(Error::param("max_depth must be >= 1"));
        }
        if self.min_samples_split < 2 {
            return Err(Error::param("min_samples_split must be >= 2"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::param("min_samples_leaf must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel {
    pub format_version: u32,
    pub hyperparams: RfHyperparams,
    pub feature_names: Vec<String>,
    /// Per-output (min, max) over the training targets.
    pub train_target_bounds: Vec<(f64, f64)>,
    pub trees: Vec<RegressionTree>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Fits a multi-output forest. Each tree gets its own RNG derived from
/// `seed` and the tree index, so results do not depend on thread scheduling.
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    feature_names: Vec<String>,
    hp: &RfHyperparams,
    seed: u64,
) -> Result<RfModel> {
    hp.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyDataset("no training rows for the forest".into()));
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n_features = x[0].len();
    let n_outputs = y[0].len();
    if x.iter()
        .any(|r| r.len() != n_features || r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::param("features must be finite with a consistent width"));
    }
    if y.iter().any(|r| r.len() != n_outputs) {
        return Err(Error::param("targets must have a consistent width"));
    }
    let data = tree::TrainView {
        x,
        y,
        n_features,
        n_outputs,
    };
    let n = x.len();
    let trees = (0..hp.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[t as u64]);
            let rows: Vec<usize> = if hp.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            RegressionTree::fit(&data, rows, hp, &mut rng)
        })
        .collect();

    let train_target_bounds = (0..n_outputs)
        .map(|o| {
            y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r[o]), hi.max(r[o]))
            })
        })
        .collect();
    Ok(RfModel {
        format_version: MODEL_FORMAT_VERSION,
        hyperparams: *hp,
        feature_names,
        train_target_bounds,
        trees,
    })
}

impl RfModel {
    /// Mean of the trees' leaf vectors, clipped at zero and to the per-output
    /// training range (absorbs rounding in the averages).
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let n_outputs = self.train_target_bounds.len();
        let mut acc = vec![0.0; n_outputs];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.predict(x)) {
                *a += v;
            }
        }
        let k = self.trees.len() as f64;
        acc.iter()
            .zip(&self.train_target_bounds)
            .map(|(a, &(lo, hi))| (a / k).clamp(lo, hi).max(0.0))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.trees.is_empty() {
            return Err(Error::Model("forest has no trees".into()));
        }
        Ok(())
    }
}

/// One training example for the unconnected forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconnectedSample {
    pub temp_at_arrival: f64,
    pub capacity_kwh: f64,
    pub profile: SocGridProfile,
}

pub const UNCONNECTED_FEATURES: [&str; 2] = ["temp_at_arrival", "capacity_kwh"];

pub(crate) fn unconnected_xy(samples: &[UnconnectedSample]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    samples
        .iter()
        .map(|s| (vec![s.temp_at_arrival, s.capacity_kwh], s.profile.powers().to_vec()))
        .unzip()
}

pub fn train_unconnected_rf(samples: &[UnconnectedSample], hp: &RfHyperparams, seed: u64) -> Result<RfModel> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no training profiles".into()));
    }
    let (x, y) = unconnected_xy(samples);
    fit_forest(
        &x,
        &y,
        UNCONNECTED_FEATURES.iter().map(|s| s.to_string()).collect(),
        hp,
        seed,
    )
}

pub fn predict_unconnected(model: &RfModel, temp_at_arrival: f64, capacity_kwh: f64) -> SocGridProfile {
    let p = model.predict(&[temp_at_arrival, capacity_kwh]);
    debug_assert_eq!(p.len(), GRID_LEN);
    SocGridProfile::new(p).expect("forest trained on valid profiles")
}
