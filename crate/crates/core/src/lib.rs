//! Simulation and verification toolkit for McKean-Vlasov equations driven by
//! weighted cylindrical fractional Brownian motion on a K-mode truncation.

pub mod error;
pub mod exec;
pub mod fraccalc;
pub mod rng;
pub mod spectrum;

pub use error::{Error, Result};
pub use exec::Exec;
pub mod girsanov;
pub mod measure;
pub mod mkv;
pub mod noise;
