//! Power-vs-SoC to power-vs-time transposition through an energy-balance EV
//! surrogate, and the known/estimated information scenarios feeding it.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ChargingSession;
use crate::error::{Error, Result};
use crate::gmm::{estimate_capacity, estimate_soc, GmmModel, HourlySocModels, TargetKind};
use crate::profile::{SocGridProfile, GRID_LEN};

/// Lower bound on the power used for dwell times, kW.
pub const P_MIN_KW: f64 = 0.5;
/// Attempts at redrawing estimated SoCs before swapping an inverted pair.
pub const SOC_RESAMPLE_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranspositionInput {
    pub profile: SocGridProfile,
    pub capacity: f64,
    pub soc_start: f64,
    pub soc_end: f64,
    /// Sampling step, minutes.
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTimeSeries {
    /// Minutes after arrival of the first sample.
    pub start_offset: f64,
    /// Mean power over each `dt` interval, kW.
    pub powers: Vec<f64>,
    pub dt: f64,
    /// Exact surrogate charging time, minutes.
    pub duration: f64,
    pub scheduled_energy: f64,
}

impl PowerTimeSeries {
    /// Σ power·dt, kWh.
    pub fn delivered_energy(&self) -> f64 {
        self.powers.iter().sum::<f64>() * self.dt / 60.0
    }
}

pub fn scheduled_energy(capacity: f64, soc_start: f64, soc_end: f64) -> f64 {
    capacity * (soc_end - soc_start) / 100.0
}

/// Constant-power pieces (start min, end min, kW) between soc_start and
/// soc_end. Power inside each 1 % SoC cell is the grid value at the cell's
/// lower edge.
fn segments(input: &TranspositionInput) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    let mut t = 0.0;
    let mut s = input.soc_start;
    while s < input.soc_end {
        let cell = (s.floor() as usize).min(GRID_LEN - 1);
        let next = ((cell + 1) as f64).min(input.soc_end);
        let p = input.profile.at(cell).max(P_MIN_KW);
        let minutes = input.capacity * (next - s) / 100.0 / p * 60.0;
        out.push((t, t + minutes, p));
        t += minutes;
        s = next;
    }
    out
}

/// Surrogate charging time in minutes, without resampling.
pub fn charging_duration(input: &TranspositionInput) -> Result<f64> {
    check(input)?;
    Ok(segments(input).last().map_or(0.0, |s| s.1))
}

fn check(input: &TranspositionInput) -> Result<()> {
    if input.soc_end < input.soc_start {
        return Err(Error::param(format!(
            "end SoC {} % below start SoC {} %",
            input.soc_end, input.soc_start
        )));
    }
    if !(0.0..=100.0).contains(&input.soc_start) || !(0.0..=100.0).contains(&input.soc_end) {
        return Err(Error::param("SoC bounds must lie in [0, 100] %"));
    }
    if !(input.capacity > 0.0 && input.capacity.is_finite()) {
        return Err(Error::param("capacity must be positive"));
    }
    if input.dt.is_nan() || input.dt <= 0.0 {
        return Err(Error::param("dt must be positive"));
    }
    Ok(())
}

/// Integrates the profile over SoC to obtain SoC(t), then averages the power
/// over consecutive `dt` windows. The last window is partial; its average is
/// taken over the full `dt`, so Σ power·dt equals the scheduled energy.
pub fn transpose_to_time(input: &TranspositionInput) -> Result<PowerTimeSeries> {
    check(input)?;
    let segs = segments(input);
    let duration = segs.last().map_or(0.0, |s| s.1);
    let powers = bin_average(&segs, input.dt);
    Ok(PowerTimeSeries {
        start_offset: 0.0,
        powers,
        dt: input.dt,
        duration,
        scheduled_energy: scheduled_energy(input.capacity, input.soc_start, input.soc_end),
    })
}

/// Mean power over consecutive `dt` windows of a piecewise-constant curve
/// given as contiguous (start min, end min, kW) pieces starting at 0.
pub(crate) fn bin_average(segs: &[(f64, f64, f64)], dt: f64) -> Vec<f64> {
    let duration = segs.last().map_or(0.0, |s| s.1);
    let n_bins = if duration > 0.0 {
        ((duration / dt) - 1e-9).ceil().max(1.0) as usize
    } else {
        0
    };
    let mut powers = vec![0.0; n_bins];
    let mut j = 0;
    for (k, out) in powers.iter_mut().enumerate() {
        let (b0, b1) = (k as f64 * dt, (k + 1) as f64 * dt);
        let mut energy = 0.0;
        while j < segs.len() && segs[j].1 <= b0 {
            j += 1;
        }
        let mut i = j;
        while i < segs.len() && segs[i].0 < b1 {
            let overlap = segs[i].1.min(b1) - segs[i].0.max(b0);
            if overlap > 0.0 {
                energy += overlap * segs[i].2;
            }
            i += 1;
        }
        *out = energy / dt;
    }
    powers
}

/// Which of capacity, arrival SoC and departure SoC are known before
/// connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioFlags {
    pub capacity_known: bool,
    pub soc_start_known: bool,
    pub soc_end_known: bool,
}

impl ScenarioFlags {
    pub const PERFECT: ScenarioFlags = ScenarioFlags {
        capacity_known: true,
        soc_start_known: true,
        soc_end_known: true,
    };
    pub const NONE: ScenarioFlags = ScenarioFlags {
        capacity_known: false,
        soc_start_known: false,
        soc_end_known: false,
    };

    /// All eight combinations, perfect information first and no information
    /// last.
    pub fn all() -> [ScenarioFlags; 8] {
        let mut out = [Self::NONE; 8];
        // bit set = estimated
        for (i, o) in out.iter_mut().enumerate() {
            *o = ScenarioFlags {
                capacity_known: i & 4 == 0,
                soc_start_known: i & 2 == 0,
                soc_end_known: i & 1 == 0,
            };
        }
        out
    }

    pub fn known_count(&self) -> usize {
        [self.capacity_known, self.soc_start_known, self.soc_end_known]
            .iter()
            .filter(|k| **k)
            .count()
    }
}

impl fmt::Display for ScenarioFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = |b: bool| if b { "kn" } else { "est" };
        write!(
            f,
            "C-{}_SoCa-{}_SoCd-{}",
            k(self.capacity_known),
            k(self.soc_start_known),
            k(self.soc_end_known)
        )
    }
}

/// The three scenario variables after imputation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInputs {
    pub flags: ScenarioFlags,
    pub capacity: f64,
    pub soc_start: f64,
    pub soc_end: f64,
}

impl ScenarioInputs {
    pub fn with_profile(&self, profile: SocGridProfile, dt: f64) -> TranspositionInput {
        TranspositionInput {
            profile,
            capacity: self.capacity,
            soc_start: self.soc_start,
            soc_end: self.soc_end,
            dt,
        }
    }
}

pub fn apply_scenario<R: Rng + ?Sized>(
    session: &ChargingSession,
    flags: ScenarioFlags,
    capacity_model: &GmmModel,
    soc_models: &HourlySocModels,
    rng: &mut R,
) -> ScenarioInputs {
    let capacity = if flags.capacity_known {
        session.capacity_kwh
    } else {
        estimate_capacity(capacity_model, rng)
    };
    let (h_a, h_d) = (session.arrival_hour(), session.departure_hour());
    let draw = |rng: &mut R| {
        let start = if flags.soc_start_known {
            session.soc_a()
        } else {
            estimate_soc(soc_models, TargetKind::ArrivalSoc, h_a, rng)
        };
        let end = if flags.soc_end_known {
            session.soc_d()
        } else {
            estimate_soc(soc_models, TargetKind::DepartureSoc, h_d, rng)
        };
        (start, end)
    };
    let (mut soc_start, mut soc_end) = draw(rng);
    let mut attempts = 0;
    while soc_end < soc_start && attempts < SOC_RESAMPLE_ATTEMPTS && !(flags.soc_start_known && flags.soc_end_known) {
        (soc_start, soc_end) = draw(rng);
        attempts += 1;
    }
    if soc_end < soc_start {
        std::mem::swap(&mut soc_start, &mut soc_end);
    }
    ScenarioInputs {
        flags,
        capacity,
        soc_start,
        soc_end,
    }
}
