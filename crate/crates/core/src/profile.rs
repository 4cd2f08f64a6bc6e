//! Fixed 1 %-resolution charging profile: requested power (kW) at every
//! integer SoC from 0 % to 100 %.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of grid points, SoC = 0, 1, ..., 100 %.
pub const GRID_LEN: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SocGridProfile(Vec<f64>);

impl SocGridProfile {
    /// Wraps 101 finite, non-negative powers.
    pub fn new(powers: Vec<f64>) -> Result<Self> {
        if powers.len() != GRID_LEN {
            return Err(Error::LengthMismatch {
                left: powers.len(),
                right: GRID_LEN,
            });
        }
        if let Some((soc, p)) = powers.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(Error::param(format!(
                "profile power at SoC {soc} % must be finite and >= 0, got {p}"
            )));
        }
        Ok(SocGridProfile(powers))
    }

    pub fn constant(power: f64) -> Result<Self> {
        Self::new(vec![power; GRID_LEN])
    }

    pub fn powers(&self) -> &[f64] {
        &self.0
    }

    /// Power at an integer SoC (clamped to the grid).
    pub fn at(&self, soc: usize) -> f64 {
        self.0[soc.min(GRID_LEN - 1)]
    }

    /// Values on the inclusive integer SoC range `[from, to]`.
    pub fn slice(&self, from: usize, to: usize) -> &[f64] {
        let to = to.min(GRID_LEN - 1);
        if from > to {
            return &[];
        }
        &self.0[from..=to]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for SocGridProfile {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SocGridProfile::new(v)
    }
}

impl From<SocGridProfile> for Vec<f64> {
    fn from(p: SocGridProfile) -> Self {
        p.0
    }
}

/// Nearest grid index for a SoC percentage.
pub fn grid_index(soc: f64) -> usize {
    soc.round().clamp(0.0, 100.0) as usize
}
