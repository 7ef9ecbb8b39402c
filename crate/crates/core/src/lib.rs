//! GNSS-R soil-moisture retrieval pipeline.
//!
//! Observations are matched to ancillary surface context and a gridded daily
//! target in the [`warehouse`], screened and normalized by [`conditioning`],
//! and fed to the residual CNN in [`model`]. Trained models produce trackwise
//! (L2) and gridded (L3) [`products`], which [`validation`] scores against
//! in-situ sites. [`synthgen`] builds a deterministic synthetic world for
//! end-to-end testing and [`pipeline`] wires everything into the CLI.

pub mod conditioning;
pub mod container;
pub mod geogrid;
pub mod model;
pub mod pipeline;
pub mod products;
pub mod scalar;
pub mod studies;
pub mod synthgen;
pub mod timeutil;
pub mod validation;
pub mod warehouse;

pub use scalar::{DType, Scalar};

/// Missing-value sentinel used in stored rasters, samples and products.
pub const MISSING: f64 = -9999.0;

/// Residual CNN in single precision (training and operational inference).
pub type Network32 = model::Network<f32>;
/// Residual CNN in double precision (gradient checks, reference runs).
pub type Network64 = model::Network<f64>;
pub type ModelWeights32 = model::ModelWeights<f32>;
pub type ModelWeights64 = model::ModelWeights<f64>;
pub type SiteStats64 = validation::SiteStats<f64>;

/// True when `v` is the missing sentinel (or not finite).
pub fn is_missing(v: f64) -> bool {
    !v.is_finite() || v == MISSING
}
