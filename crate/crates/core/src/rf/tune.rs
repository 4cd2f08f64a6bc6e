//! Seeded random search over forest hyperparameters with K-fold scoring and
//! early abandonment of unpromising trials.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fit_forest, unconnected_xy, Criterion, MaxFeatures, RfHyperparams, UnconnectedSample};
use crate::error::{Error, Result};
use crate::gmm::kfold_indices;
use crate::seed::{derive_seed, rng_for};

/// A trial is abandoned once its running fold mean exceeds the best complete
/// score by more than this fraction.
pub const PRUNE_MARGIN: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Inclusive range and step.
    pub n_estimators: (usize, usize, usize),
    pub max_depth: (usize, usize),
    pub min_samples_split: (usize, usize),
    pub min_samples_leaf: (usize, usize),
    pub max_features: Vec<MaxFeatures>,
    pub bootstrap: Vec<bool>,
    pub criterion: Vec<Criterion>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            n_estimators: (100, 1000, 50),
            max_depth: (2, 50),
            min_samples_split: (2, 20),
            min_samples_leaf: (1, 20),
            max_features: vec![MaxFeatures::Sqrt, MaxFeatures::Log2],
            bootstrap: vec![true, false],
            criterion: vec![Criterion::Squared, Criterion::Absolute],
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        let (lo, hi, step) = self.n_estimators;
        let ranges = [(lo, hi), self.max_depth, self.min_samples_split, self.min_samples_leaf];
        if step == 0 || ranges.iter().any(|(a, b)| a > b) {
            return Err(Error::param("empty search range"));
        }
        if self.max_features.is_empty() || self.bootstrap.is_empty() || self.criterion.is_empty() {
            return Err(Error::param("empty categorical search set"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RfHyperparams {
        let (lo, hi, step) = self.n_estimators;
        let n_steps = (hi - lo) / step;
        RfHyperparams {
            n_estimators: lo + step * rng.random_range(0..=n_steps),
            max_depth: rng.random_range(self.max_depth.0..=self.max_depth.1),
            min_samples_split: rng.random_range(self.min_samples_split.0..=self.min_samples_split.1),
            min_samples_leaf: rng.random_range(self.min_samples_leaf.0..=self.min_samples_leaf.1),
            max_features: *self.max_features.choose(rng).expect("validated"),
            bootstrap: *self.bootstrap.choose(rng).expect("validated"),
            criterion: *self.criterion.choose(rng).expect("validated"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub params: RfHyperparams,
    /// Mean profile MAE over the folds that were run.
    pub score: f64,
    pub folds_completed: usize,
    pub pruned: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: RfHyperparams,
    pub best_score: f64,
    pub trials: Vec<TrialRecord>,
}

fn profile_mae(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64
}

pub fn tune_rf(
    samples: &[UnconnectedSample],
    space: &SearchSpace,
    n_trials: usize,
    k_folds: usize,
    seed: u64,
) -> Result<TuneResult> {
    if n_trials < 1 {
        return Err(Error::param("n_trials must be >= 1"));
    }
    if k_folds < 2 || k_folds > samples.len() {
        return Err(Error::param(format!(
            "k_folds must lie in [2, {}], got {k_folds}",
            samples.len()
        )));
    }
    space.validate()?;
    let (x, y) = unconnected_xy(samples);
    let folds = kfold_indices(samples.len(), k_folds, seed);
    let mut sampler = rng_for(seed, &[0x7E57]);

    let mut trials = Vec::with_capacity(n_trials);
    let mut best: Option<(usize, f64)> = None;
    for trial in 0..n_trials {
        let params = space.sample(&mut sampler);
        let mut fold_scores = Vec::with_capacity(k_folds);
        let mut pruned = false;
        for (f, fold) in folds.iter().enumerate() {
            let mut held = vec![false; samples.len()];
            for &i in fold {
                held[i] = true;
            }
            let train: Vec<usize> = (0..samples.len()).filter(|&i| !held[i]).collect();
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let ty: Vec<Vec<f64>> = train.iter().map(|&i| y[i].clone()).collect();
            let model = fit_forest(
                &tx,
                &ty,
                Vec::new(),
                &params,
                derive_seed(seed, &[trial as u64, f as u64]),
            )?;
            let score = fold
                .iter()
                .map(|&i| profile_mae(&model.predict(&x[i]), &y[i]))
                .sum::<f64>()
                / fold.len() as f64;
            fold_scores.push(score);

            let partial = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
            if let Some((_, b)) = best {
                if fold_scores.len() < k_folds && partial > b * (1.0 + PRUNE_MARGIN) {
                    pruned = true;
                    break;
                }
            }
        }
        let score = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
        if !pruned && best.is_none_or(|(_, b)| score < b) {
            best = Some((trial, score));
        }
        log::info!(
            "trial {trial}: score {score:.4}{}",
            if pruned { " (pruned)" } else { "" }
        );
        trials.push(TrialRecord {
            trial,
            params,
            score,
            folds_completed: fold_scores.len(),
            pruned,
        });
    }
    let (best_trial, best_score) = best.expect("first trial is never pruned");
    Ok(TuneResult {
        best: trials[best_trial].params,
        best_score,
        trials,
    })
}

/// Writes `trial,params…,score,pruned`.
pub fn write_trial_log<W: Write>(w: W, trials: &[TrialRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "trial",
        "n_estimators",
        "max_depth",
        "min_samples_split",
        "min_samples_leaf",
        "max_features",
        "bootstrap",
        "criterion",
        "score",
        "pruned",
    ])?;
    for t in trials {
        let p = &t.params;
        wtr.write_record([
            t.trial.to_string(),
            p.n_estimators.to_string(),
            p.max_depth.to_string(),
            p.min_samples_split.to_string(),
            p.min_samples_leaf.to_string(),
            format!("{:?}", p.max_features).to_lowercase(),
            p.bootstrap.to_string(),
            format!("{:?}", p.criterion).to_lowercase(),
            format!("{:.6}", t.score),
            t.pruned.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
