//! Deterministic synthetic fleet: three EV archetypes with taper-shaped
//! charging curves, hour-dependent arrival and departure SoC, and an hourly
//! temperature table. Sessions follow an energy balance minute by minute.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ChargingSession, SessionRecord, WeatherTable};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct Archetype {
    pub name: &'static str,
    pub capacities_kwh: &'static [f64],
    pub peak_kw: f64,
    /// SoC (%) where the constant-power phase ends.
    pub taper_soc: f64,
    /// Power at 100 % SoC.
    pub end_kw: f64,
    /// Share of the fleet.
    pub share: f64,
}

pub const ARCHETYPES: [Archetype; 3] = [
    Archetype {
        name: "compact",
        capacities_kwh: &[38.0, 42.0],
        peak_kw: 48.0,
        taper_soc: 55.0,
        end_kw: 10.0,
        share: 0.35,
    },
    Archetype {
        name: "midsize",
        capacities_kwh: &[58.0, 64.0],
        peak_kw: 105.0,
        taper_soc: 60.0,
        end_kw: 18.0,
        share: 0.40,
    },
    Archetype {
        name: "large",
        capacities_kwh: &[77.0, 82.0],
        peak_kw: 150.0,
        taper_soc: 48.0,
        end_kw: 25.0,
        share: 0.25,
    },
];

impl Archetype {
    /// Requested power at a SoC for a given arrival temperature and
    /// per-vehicle scale.
    pub fn power_at(&self, soc: f64, temp_c: f64, scale: f64) -> f64 {
        let cold = (1.0 - 0.012 * (15.0 - temp_c).max(0.0)).clamp(0.6, 1.0);
        let peak = self.peak_kw * cold * scale;
        let p = if soc < 8.0 {
            peak * (0.8 + 0.2 * soc / 8.0)
        } else if soc <= self.taper_soc {
            peak
        } else {
            let x = (soc - self.taper_soc) / (100.0 - self.taper_soc);
            self.end_kw * scale + (peak - self.end_kw * scale) * (1.0 - x).powf(1.6)
        };
        p.max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sessions: usize,
    pub seed: u64,
    pub controlled_fraction: f64,
    /// Relative sd of the per-minute power noise.
    pub power_noise: f64,
    /// Power cap applied to controlled sessions, kW.
    pub control_cap_kw: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sessions: 300,
            seed: 7,
            controlled_fraction: 0.3,
            power_noise: 0.02,
            control_cap_kw: 40.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthFleet {
    pub sessions: Vec<ChargingSession>,
    pub weather: WeatherTable,
    /// Archetype index per session, aligned with `sessions`.
    pub archetype: Vec<usize>,
}

/// Relative arrival intensity per hour of day; no arrivals 02:00–04:59.
const HOUR_WEIGHTS: [f64; 24] = [
    0.3, 0.2, 0.0, 0.0, 0.0, 0.3, 1.0, 2.0, 3.0, 3.5, 3.5, 3.0, 3.5, 3.5, 3.0, 3.0, 3.5, 4.0, 3.5, 2.5, 1.8, 1.2, 0.8,
    0.5,
];

pub fn start_date() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2022, 4, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

const SPAN_DAYS: i64 = 480;

fn temperature(t: NaiveDateTime, noise: f64) -> f64 {
    let hours = (t - start_date()).num_minutes() as f64 / 60.0;
    let season = (2.0 * std::f64::consts::PI * (hours / 24.0 + 15.0) / 365.25).sin();
    let daily = (2.0 * std::f64::consts::PI * (hours % 24.0 - 9.0) / 24.0).sin();
    10.0 + 9.0 * season + 4.0 * daily + noise
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

pub fn generate(cfg: &SynthConfig) -> SynthFleet {
    let mut wrng = rng_for(cfg.seed, &[1]);
    let wnoise = Normal::<f64>::new(0.0, 1.0).expect("valid sd");
    let weather = WeatherTable::from_pairs((0..(SPAN_DAYS + 2) * 24).map(|h| {
        let t = start_date() + Duration::hours(h);
        (t, (temperature(t, wnoise.sample(&mut wrng)) * 10.0).round() / 10.0)
    }));

    let mut rng = rng_for(cfg.seed, &[2]);
    let shares: Vec<f64> = ARCHETYPES.iter().map(|a| a.share).collect();
    let unit = Normal::<f64>::new(0.0, 1.0).expect("valid sd");
    let mut sessions = Vec::with_capacity(cfg.n_sessions);
    let mut archetype = Vec::with_capacity(cfg.n_sessions);

    for i in 0..cfg.n_sessions {
        let day = (i as i64 * SPAN_DAYS) / cfg.n_sessions.max(1) as i64;
        let hour = pick_weighted(&mut rng, &HOUR_WEIGHTS);
        let minute = rng.random_range(0..60);
        let t_a = start_date() + Duration::days(day) + Duration::hours(hour as i64) + Duration::minutes(minute);

        let a_idx = pick_weighted(&mut rng, &shares);
        let arch = &ARCHETYPES[a_idx];
        let capacity = arch.capacities_kwh[rng.random_range(0..arch.capacities_kwh.len())];
        let scale = (1.0 + 0.04 * unit.sample(&mut rng)).clamp(0.85, 1.15);
        let temp = weather.nearest(t_a).unwrap_or(10.0);

        // evening arrivals come in emptier, midday ones fuller
        let soc_mean = 28.0 - 8.0 * ((hour as f64 - 12.0) / 6.0).tanh();
        let soc_a = (soc_mean + 9.0 * unit.sample(&mut rng)).clamp(3.0, 75.0).round();
        let target: f64 =
            (78.0 + 6.0 * ((hour as f64 - 14.0) / 5.0).tanh() + 8.0 * unit.sample(&mut rng)).clamp(soc_a + 8.0, 100.0);
        let controlled = rng.random::<f64>() < cfg.controlled_fraction;

        let mut records = Vec::new();
        let mut soc = soc_a;
        let mut t = t_a;
        loop {
            let mut p = arch.power_at(soc, temp, scale) * (1.0 + cfg.power_noise * unit.sample(&mut rng));
            if controlled {
                p = p.min(cfg.control_cap_kw);
            }
            let p = (p.max(0.5) * 100.0).round() / 100.0;
            records.push(SessionRecord {
                timestamp: t,
                soc: (soc * 100.0).round() / 100.0,
                power: p,
            });
            if soc >= target || records.len() > 600 {
                break;
            }
            soc = (soc + p / 60.0 / capacity * 100.0).min(100.0);
            t += Duration::minutes(1);
        }
        let session = ChargingSession::new(
            format!("S{:05}", i + 1),
            if i % 2 == 0 { "CH1" } else { "CH2" },
            records,
            capacity,
            controlled,
        )
        .expect("generator emits valid sessions");
        sessions.push(session);
        archetype.push(a_idx);
    }
    SynthFleet {
        sessions,
        weather,
        archetype,
    }
}
