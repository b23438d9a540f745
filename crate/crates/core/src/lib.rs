//! Component-based modeling of raw ultrasound channel signals.
//!
//! Each raw per-element echo is split into a strong-reflector component
//! (a few delayed, scaled copies of the known transmit pulse) and a speckle
//! background. The background is coded over a learned patch dictionary and
//! beamformed straight from its sparse coefficients; the reflectors are
//! localized and injected into the beamformed lines.

pub mod beamform;
pub mod decomposition;
pub mod error;
pub mod hashing;
pub mod metrics;
pub mod phantom;
pub mod sparse;
pub mod signal;

pub use error::{Error, Result};
