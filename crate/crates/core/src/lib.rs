//! Cooperative 5G mmWave vehicle positioning and mapping.
//!
//! Each vehicle runs a Rao-Blackwellized particle filter whose particles carry
//! Gaussian-mixture PHD maps of virtual anchors (VAs) and scattering points
//! (SPs). Vehicles periodically upload their maps to the base station, which
//! fuses them by arithmetic averaging restricted to the vehicles' fields of view
//! and may send the fused map back.

pub mod ckf;
pub mod config;
pub mod export;
pub mod fusion;
pub mod geometry;
pub mod gm;
pub mod metrics;
pub mod motion;
pub mod sim;
pub mod slam;

pub use geometry::{Measurement, MeasurementModel, RadioGeometry, Source, SourceType};
pub use gm::{GaussianComponent, GaussianMixture, NumericError, PruneParams, TypedMap};
pub use motion::{ProcessNoise, VehicleState};
