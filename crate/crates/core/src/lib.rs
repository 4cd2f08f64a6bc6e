//! Forecasting of individual EV fast-charging profiles.
//!
//! The pipeline predicts the power-vs-SoC curve before the EV connects
//! (random forest on arrival temperature and battery capacity), refines it
//! every minute from realized power (nearest historical session), and maps it
//! to a power-vs-time curve under known or imputed capacity and SoC.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod metrics;
pub mod pipeline;
pub mod profile;
pub mod refiner;
pub mod rf;
pub mod seed;
pub mod synth;
pub mod transpose;

pub use error::{Error, Result};
pub use profile::{SocGridProfile, GRID_LEN};
