pub mod config;
pub mod error;
pub mod events;
pub mod inversion;
pub mod model;
pub mod passage;
pub mod qoe;
pub mod sim;
pub mod spectral;
pub mod starvation;
pub mod startup;
pub mod util;

pub use error::{Error, Result};
pub use model::{DriftReport, FluidModel, RateMode, SessionParams};
