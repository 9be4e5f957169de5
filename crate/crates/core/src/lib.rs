//! Ensemble stochastic simulator and analysis toolkit for a stroboscopic
//! nanomechanical state amplifier: a levitated nanoparticle is switched
//! between a trapping parabolic potential and an inverted one, which
//! stretches one phase-space quadrature and squeezes the conjugate one.
//!
//! The crate simulates the underdamped Langevin dynamics through such
//! protocols, post-selects trajectory subsets with prescribed initial
//! statistics, fits the amplifier gain matrix and offset, locates the four
//! operating modes by a timing scan, and computes the amplifier metrics
//! (noise figure, force-sensing SNR, harmonic distortion) along with PSD
//! calibration of the normalization scales.

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod estimation;
pub mod io;
pub mod postselect;
pub mod protocol;
pub mod psd;
pub mod tuning;

pub use error::{Error, Result};
