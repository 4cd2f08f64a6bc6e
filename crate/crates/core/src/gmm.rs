//! Univariate Gaussian mixtures: EM fitting, K-fold selection of the number
//! of components, and sampling of battery capacity and arrival/departure SoC.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::dataset::ChargingSession;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const CAPACITY_RANGE_KWH: (f64, f64) = (5.0, 200.0);
pub const HOURS: usize = 24;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Capacity,
    ArrivalSoc,
    DepartureSoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (LN_2PI + self.variance.ln() + d * d / self.variance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub target_kind: TargetKind,
    pub components: Vec<Component>,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Model("mixture has no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Model(format!("mixture weights sum to {total}")));
        }
        for c in &self.components {
            if !(c.weight >= 0.0 && c.mean.is_finite() && c.variance >= VARIANCE_FLOOR * (1.0 - 1e-12)) {
                return Err(Error::Model(format!("invalid component {c:?}")));
            }
        }
        Ok(())
    }

    /// Mixture expectation, Σ weight·mean.
    pub fn expectation(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        log_sum_exp(self.components.iter().map(|c| c.weight.ln() + c.log_density(x)))
    }

    /// Mean log-likelihood per sample.
    pub fn mean_log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&x| self.log_density(x)).sum::<f64>() / samples.len() as f64
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * normal_cdf((x - c.mean) / c.variance.sqrt()))
            .sum()
    }

    /// E|x - Y| for Y drawn from the mixture.
    pub fn expected_abs_error(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * abs_normal_mean(x - c.mean, c.variance.sqrt()))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        Normal::new(chosen.mean, chosen.variance.sqrt())
            .expect("validated variance")
            .sample(rng)
    }

    /// Half of E|Y - Y'| for independent draws Y, Y' of the mixture.
    pub fn half_mean_spread(&self) -> f64 {
        let mut total = 0.0;
        for a in &self.components {
            for b in &self.components {
                total += a.weight * b.weight * abs_normal_mean(a.mean - b.mean, (a.variance + b.variance).sqrt());
            }
        }
        0.5 * total
    }

    /// Continuous ranked probability score of the mixture at `x`.
    pub fn crps(&self, x: f64) -> f64 {
        self.expected_abs_error(x) - self.half_mean_spread()
    }
}

/// E|Z| for Z ~ N(m, sd²).
fn abs_normal_mean(m: f64, sd: f64) -> f64 {
    let z = m / sd;
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    sd * 2.0 * pdf + m * (2.0 * normal_cdf(z) - 1.0)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Convergence threshold on the change in mean log-likelihood.
    pub tol: f64,
    pub variance_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 200,
            tol: 1e-6,
            variance_floor: VARIANCE_FLOOR,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    /// Mean log-likelihood of the parameters at every iterate, starting with
    /// the initialization.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

pub fn fit_gmm_em(
    samples: &[f64],
    n_components: usize,
    target_kind: TargetKind,
    seed: u64,
    opts: &EmOptions,
) -> Result<EmFit> {
    if n_components == 0 {
        return Err(Error::param("n_components must be >= 1"));
    }
    if samples.len() < n_components {
        return Err(Error::InsufficientData {
            needed: n_components,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("samples must be finite"));
    }
    let n = samples.len();
    let floor = opts.variance_floor;
    let mut rng = rng_for(seed, &[n_components as u64]);

    // k-means++ style spread of the initial means
    let mut means = vec![samples[rng.random_range(0..n)]];
    while means.len() < n_components {
        let d2: Vec<f64> = samples
            .iter()
            .map(|&x| means.iter().map(|m| (x - m) * (x - m)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            samples[idx]
        } else {
            samples[rng.random_range(0..n)]
        };
        means.push(next);
    }
    let mean_all = samples.iter().sum::<f64>() / n as f64;
    let var_all = (samples.iter().map(|x| (x - mean_all).powi(2)).sum::<f64>() / n as f64).max(floor);
    let mut comps: Vec<Component> = means
        .into_iter()
        .map(|mean| Component {
            weight: 1.0 / n_components as f64,
            mean,
            variance: var_all,
        })
        .collect();

    let mut resp = vec![0.0; n * n_components];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iter = 0;
    loop {
        // E-step
        let mut ll = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let row = &mut resp[i * n_components..(i + 1) * n_components];
            for (r, c) in row.iter_mut().zip(&comps) {
                *r = c.weight.ln() + c.log_density(x);
            }
            let lse = log_sum_exp(row.iter().cloned());
            ll += lse;
            for r in row.iter_mut() {
                *r = (*r - lse).exp();
            }
        }
        let ll = ll / n as f64;
        if let Some(prev) = trace.last() {
            if (ll - prev).abs() < opts.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iter == opts.max_iter {
            break;
        }
        iter += 1;

        // M-step
        for (k, c) in comps.iter_mut().enumerate() {
            let nk: f64 = (0..n).map(|i| resp[i * n_components + k]).sum();
            c.weight = nk / n as f64;
            if nk <= f64::MIN_POSITIVE * 1e6 {
                continue;
            }
            let mean = (0..n).map(|i| resp[i * n_components + k] * samples[i]).sum::<f64>() / nk;
            let var = (0..n)
                .map(|i| resp[i * n_components + k] * (samples[i] - mean).powi(2))
                .sum::<f64>()
                / nk;
            c.mean = mean;
            c.variance = var.max(floor);
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        for c in comps.iter_mut() {
            c.weight /= total;
        }
    }

    comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    Ok(EmFit {
        model: GmmModel {
            target_kind,
            components: comps,
        },
        log_likelihood: trace,
        converged,
    })
}

/// Held-out score used to pick the number of components. Lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvScore {
    /// Mean |x - E[Y]| against the mixture expectation.
    ExpectationMae,
    /// Mean E|x - Y| for a random draw Y of the mixture (closed form).
    DrawMae,
    /// Negative mean held-out log-likelihood.
    #[default]
    NegLogLikelihood,
    /// Mean continuous ranked probability score, E|x - Y| - E|Y - Y'|/2.
    Crps,
}

impl CvScore {
    pub fn evaluate(&self, model: &GmmModel, held_out: &[f64]) -> f64 {
        let n = held_out.len() as f64;
        match self {
            CvScore::ExpectationMae => {
                let e = model.expectation();
                held_out.iter().map(|x| (x - e).abs()).sum::<f64>() / n
            }
            CvScore::DrawMae => held_out.iter().map(|&x| model.expected_abs_error(x)).sum::<f64>() / n,
            CvScore::NegLogLikelihood => -model.mean_log_likelihood(held_out),
            CvScore::Crps => {
                let spread = model.half_mean_spread();
                held_out.iter().map(|&x| model.expected_abs_error(x)).sum::<f64>() / n - spread
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub mc_max: usize,
    pub k_folds: usize,
    pub seed: u64,
    #[serde(default)]
    pub score: CvScore,
    #[serde(default)]
    pub em: EmOptions,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            mc_max: 11,
            k_folds: 5,
            seed: 0,
            score: CvScore::default(),
            em: EmOptions::default(),
        }
    }
}

impl CvConfig {
    fn check(&self) -> Result<()> {
        if self.mc_max < 1 {
            return Err(Error::param("mc_max must be >= 1"));
        }
        if self.k_folds < 2 {
            return Err(Error::param("k_folds must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CvSelection {
    pub model: GmmModel,
    /// Mean fold score per candidate MC = 1..=mc_max; `None` when the
    /// candidate could not be fitted on every fold.
    pub scores: Vec<Option<f64>>,
}

impl CvSelection {
    pub fn selected_components(&self) -> usize {
        self.model.n_components()
    }
}

/// Shuffled K-fold partition: fold sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[0xF01D]));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        folds.push(idx[start..start + size].to_vec());
        start += size;
    }
    folds
}

/// Mean held-out score of one candidate over all folds.
pub fn cv_score_for(
    samples: &[f64],
    folds: &[Vec<usize>],
    n_components: usize,
    target_kind: TargetKind,
    cv: &CvConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (f, fold) in folds.iter().enumerate() {
        let mut held = vec![false; samples.len()];
        for &i in fold {
            held[i] = true;
        }
        let train: Vec<f64> = (0..samples.len()).filter(|&i| !held[i]).map(|i| samples[i]).collect();
        let test: Vec<f64> = fold.iter().map(|&i| samples[i]).collect();
        let seed = derive_seed(cv.seed, &[n_components as u64, f as u64]);
        let fit = fit_gmm_em(&train, n_components, target_kind, seed, &cv.em)?;
        total += cv.score.evaluate(&fit.model, &test);
    }
    Ok(total / folds.len() as f64)
}

pub fn select_gmm_by_cv(samples: &[f64], target_kind: TargetKind, cv: &CvConfig) -> Result<CvSelection> {
    cv.check()?;
    if samples.len() < cv.k_folds {
        return Err(Error::InsufficientData {
            needed: cv.k_folds,
            got: samples.len(),
        });
    }
    let refit = |mc: usize| {
        fit_gmm_em(
            samples,
            mc,
            target_kind,
            derive_seed(cv.seed, &[mc as u64, u64::MAX]),
            &cv.em,
        )
    };
    if cv.mc_max == 1 {
        return Ok(CvSelection {
            model: refit(1)?.model,
            scores: vec![None],
        });
    }

    let folds = kfold_indices(samples.len(), cv.k_folds, cv.seed);
    let scores: Vec<Option<f64>> = (1..=cv.mc_max)
        .into_par_iter()
        .map(|mc| {
            cv_score_for(samples, &folds, mc, target_kind, cv)
                .ok()
                .filter(|s| s.is_finite())
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i + 1, s));
            }
        }
    }
    let (mc, _) = best.ok_or_else(|| Error::Selection("no candidate could be fitted".into()))?;
    Ok(CvSelection {
        model: refit(mc)?.model,
        scores,
    })
}

/// CV selection that stays total on tiny groups: fewer than `k_folds`
/// samples shrink K, and fewer than two fall back to a single component.
fn select_total(samples: &[f64], target_kind: TargetKind, cv: &CvConfig) -> Result<GmmModel> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if samples.len() < 2 {
        return Ok(fit_gmm_em(samples, 1, target_kind, cv.seed, &cv.em)?.model);
    }
    let cv = CvConfig {
        k_folds: cv.k_folds.min(samples.len()),
        ..*cv
    };
    Ok(select_gmm_by_cv(samples, target_kind, &cv)?.model)
}

pub fn fit_capacity_model(train: &[ChargingSession], cv: &CvConfig) -> Result<GmmModel> {
    let caps: Vec<f64> = train.iter().map(|s| s.capacity_kwh).collect();
    select_total(&caps, TargetKind::Capacity, cv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlySocModels {
    pub arrival: Vec<Option<GmmModel>>,
    pub departure: Vec<Option<GmmModel>>,
    pub arrival_fallback: GmmModel,
    pub departure_fallback: GmmModel,
}

impl HourlySocModels {
    pub fn model_for(&self, kind: TargetKind, hour: usize) -> &GmmModel {
        let (hourly, fallback) = match kind {
            TargetKind::DepartureSoc => (&self.departure, &self.departure_fallback),
            _ => (&self.arrival, &self.arrival_fallback),
        };
        hourly.get(hour).and_then(|m| m.as_ref()).unwrap_or(fallback)
    }

    pub fn has_hourly(&self, kind: TargetKind, hour: usize) -> bool {
        let hourly = match kind {
            TargetKind::DepartureSoc => &self.departure,
            _ => &self.arrival,
        };
        matches!(hourly.get(hour), Some(Some(_)))
    }
}

/// Minimum group size for an hour to get its own model.
pub fn hourly_threshold(cv: &CvConfig) -> usize {
    cv.k_folds.max(10)
}

pub fn fit_hourly_soc_models(train: &[ChargingSession], cv: &CvConfig) -> Result<HourlySocModels> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training sessions for SoC models".into()));
    }
    let fit_kind = |kind: TargetKind| -> Result<(Vec<Option<GmmModel>>, GmmModel)> {
        let mut by_hour: Vec<Vec<f64>> = vec![Vec::new(); HOURS];
        for s in train {
            let (hour, soc) = match kind {
                TargetKind::DepartureSoc => (s.departure_hour(), s.soc_d()),
                _ => (s.arrival_hour(), s.soc_a()),
            };
            by_hour[hour].push(soc);
        }
        let all: Vec<f64> = by_hour.iter().flatten().cloned().collect();
        let fallback = select_total(&all, kind, cv)?;
        let threshold = hourly_threshold(cv);
        let hourly = by_hour
            .par_iter()
            .enumerate()
            .map(|(h, samples)| {
                if samples.len() < threshold {
                    return Ok(None);
                }
                let cv_h = CvConfig {
                    seed: derive_seed(cv.seed, &[h as u64, kind as u64]),
                    ..*cv
                };
                select_gmm_by_cv(samples, kind, &cv_h).map(|sel| Some(sel.model))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((hourly, fallback))
    };
    let (arrival, arrival_fallback) = fit_kind(TargetKind::ArrivalSoc)?;
    let (departure, departure_fallback) = fit_kind(TargetKind::DepartureSoc)?;
    Ok(HourlySocModels {
        arrival,
        departure,
        arrival_fallback,
        departure_fallback,
    })
}

/// Samples a SoC (percent) for the given hour, clamped to [0, 100].
pub fn estimate_soc<R: Rng + ?Sized>(models: &HourlySocModels, kind: TargetKind, hour: usize, rng: &mut R) -> f64 {
    models
        .model_for(kind, hour.min(HOURS - 1))
        .sample(rng)
        .clamp(0.0, 100.0)
}

/// Samples a battery capacity (kWh), clamped to [5, 200].
pub fn estimate_capacity<R: Rng + ?Sized>(model: &GmmModel, rng: &mut R) -> f64 {
    model.sample(rng).clamp(CAPACITY_RANGE_KWH.0, CAPACITY_RANGE_KWH.1)
}
