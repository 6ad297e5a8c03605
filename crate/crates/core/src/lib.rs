//! Nonlinear spectroscopy of a single two-level atom in a driven, lossy
//! cavity: the Jaynes–Cummings ladder, Lindblad steady states, Maxwell–Bloch
//! bistability, trapped-atom Langevin motion, the check/probe measurement
//! protocol and spectrum analysis.

pub mod analysis;
pub mod banded;
pub mod cli;
pub mod config;
pub mod error;
pub mod hilbert;
pub mod motion;
pub mod protocol;
pub mod seeding;
pub mod semiclassical;
pub mod spectrum;
pub mod steadystate;
pub mod units;

pub use error::{Error, Result};
pub use hilbert::SystemParams;
pub use spectrum::{Model, ScanPoint, Spectrum, SpectrumPoint};
pub use steadystate::{DensityMatrix, PowerCalibration};

#[cfg(test)]
mod invariants;
