//! Accuracy metrics and distribution summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator of the envelope-weighted error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmaeNormalizer {
    /// Σ max(predicted, realized)
    #[default]
    Envelope,
    /// Σ realized
    Realized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmaeDomain {
    SocIndexed,
    TimeIndexed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaeResult {
    /// Percent.
    pub value: f64,
    pub n_points: usize,
    pub domain: EmaeDomain,
}

/// Envelope-weighted mean absolute error in percent:
/// 100 · Σ|p̂ − p| / Σ max(p̂, p), or 0 when both series are all zero.
pub fn emae(predicted: &[f64], realized: &[f64], domain: EmaeDomain) -> Result<EmaeResult> {
    emae_with(predicted, realized, domain, EmaeNormalizer::Envelope)
}

pub fn emae_with(
    predicted: &[f64],
    realized: &[f64],
    domain: EmaeDomain,
    normalizer: EmaeNormalizer,
) -> Result<EmaeResult> {
    if predicted.len() != realized.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: realized.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::param("EMAE needs at least one point"));
    }
    let mut err = 0.0;
    let mut norm = 0.0;
    for (&p, &r) in predicted.iter().zip(realized) {
        err += (p - r).abs();
        norm += match normalizer {
            EmaeNormalizer::Envelope => p.max(r),
            EmaeNormalizer::Realized => r,
        };
    }
    let value = if norm > 0.0 { 100.0 * err / norm } else { 0.0 };
    Ok(EmaeResult {
        value: match normalizer {
            EmaeNormalizer::Envelope => value.min(100.0),
            EmaeNormalizer::Realized => value,
        },
        n_points: predicted.len(),
        domain,
    })
}

/// Time-domain EMAE over the union horizon; the shorter series is padded
/// with zeros.
pub fn emae_padded(predicted: &[f64], realized: &[f64]) -> Result<EmaeResult> {
    let n = predicted.len().max(realized.len());
    let pad = |v: &[f64]| {
        let mut out = v.to_vec();
        out.resize(n, 0.0);
        out
    };
    emae(&pad(predicted), &pad(realized), EmaeDomain::TimeIndexed)
}

/// (real − predicted)/real; positive means the charging time was
/// underestimated.
pub fn time_error_pu(real_minutes: f64, predicted_minutes: f64) -> Result<f64> {
    if real_minutes <= 0.0 {
        return Err(Error::param("real duration must be positive"));
    }
    Ok((real_minutes - predicted_minutes) / real_minutes)
}

/// (real − scheduled)/real; positive means the energy was underestimated.
pub fn energy_error_pu(real_kwh: f64, scheduled_kwh: f64) -> Result<f64> {
    if real_kwh <= 0.0 {
        return Err(Error::param("real energy must be positive"));
    }
    Ok((real_kwh - scheduled_kwh) / real_kwh)
}

/// Percentile with linear interpolation between order statistics
/// (position (n − 1)·q). `sorted` must be ascending and nonempty.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Box-plot statistics. Whiskers reach the most extreme samples within
/// 1.5·IQR of the quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lo: f64,
    pub hi: f64,
    pub outliers: usize,
}

impl DistributionSummary {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        let mut s: Vec<f64> = samples.iter().cloned().filter(|x| x.is_finite()).collect();
        if s.is_empty() {
            return None;
        }
        s.sort_by(f64::total_cmp);
        let q1 = percentile_sorted(&s, 0.25);
        let median = percentile_sorted(&s, 0.5);
        let q3 = percentile_sorted(&s, 0.75);
        let iqr = q3 - q1;
        let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let lo = s.iter().cloned().find(|&x| x >= fence_lo).unwrap_or(q1);
        let hi = s.iter().rev().cloned().find(|&x| x <= fence_hi).unwrap_or(q3);
        let outliers = s.iter().filter(|&&x| x < fence_lo || x > fence_hi).count();
        Some(DistributionSummary {
            n: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            q1,
            median,
            q3,
            lo,
            hi,
            outliers,
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Gaussian KDE evaluated on an evenly spaced grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityCurve {
    /// Trapezoid integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| (xw[1] - xw[0]) * (yw[0] + yw[1]) / 2.0)
        .sum()
}

/// Silverman's rule: 0.9 · min(σ, IQR/1.34) · n^(−1/5), falling back to
/// whichever spread is positive, then to a small fraction of the magnitude.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = percentile_sorted(&s, 0.75) - percentile_sorted(&s, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => 1e-3 * mean.abs().max(1.0),
    };
    0.9 * spread * n.powf(-0.2)
}

/// Density of the samples on a caller-supplied grid.
pub fn kde_on_grid(samples: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            samples
                .iter()
                .map(|&x| {
                    let z = (g - x) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Evenly spaced grid covering `[min − 4h, max + 4h]` with spacing at most
/// h/4, and never fewer than `min_points` points.
pub fn kde_grid(lo: f64, hi: f64, bandwidth: f64, min_points: usize) -> Vec<f64> {
    let (a, b) = (lo - 4.0 * bandwidth, hi + 4.0 * bandwidth);
    let n = (((b - a) / (bandwidth / 4.0)).ceil() as usize + 1)
        .max(min_points)
        .max(2);
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

pub fn kde_1d(samples: &[f64], bandwidth: Option<f64>) -> Result<DensityCurve> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    if h.is_nan() || h <= 0.0 {
        return Err(Error::param("bandwidth must be positive"));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid = kde_grid(lo, hi, h, 256);
    let density = kde_on_grid(samples, h, &grid);
    Ok(DensityCurve {
        grid,
        density,
        bandwidth: h,
    })
}

/// Total-variation distance ½∫|f − g| between the KDEs of two samples, each
/// with its own Silverman bandwidth, on a shared grid.
pub fn kde_total_variation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: a.len().min(b.len()),
        });
    }
    let (ha, hb) = (silverman_bandwidth(a), silverman_bandwidth(b));
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid = kde_grid(lo, hi, ha.min(hb), 512);
    let fa = kde_on_grid(a, ha, &grid);
    let fb = kde_on_grid(b, hb, &grid);
    let diff: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).collect();
    Ok(0.5 * trapezoid(&grid, &diff))
}
