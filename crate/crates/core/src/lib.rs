//! Channel extrapolation for FDD massive-MIMO downlink beamforming.
//!
//! Uplink pilots observed over a narrow band are used to estimate the
//! downlink channel at a different frequency. The crate provides the
//! multipath channel model, low-resolution (LS, LMMSE) and high-resolution
//! (SAGE) estimators, the Cramér-Rao bound on any unbiased extrapolation,
//! downlink beamforming metrics, and a scenario harness that ties them
//! together.

pub mod channel;
pub mod crlb;
pub mod downlink;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lowres;
pub mod rng;
pub mod sage;

pub use error::{Error, Result};
