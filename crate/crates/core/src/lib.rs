//! Simulator for a spin-wave atomic frequency comb (AFC) optical memory whose
//! spin storage is protected by dynamical-decoupling pulse sequences.
//!
//! * [`ensemble`] holds the inhomogeneous spin line and its free evolution.
//! * [`pulses`] models population-inversion pulses, instantaneous or chirped.
//! * [`sequences`] builds XX, XY-4, XY-8 and KDD trains and measures their errors.
//! * [`afc`] covers the comb, echo timing and the efficiency chain.
//! * [`detection`] has the noise budget, SNR, mu1 and fidelity bounds.
//! * [`experiment`] loads configs and presets and writes reports.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod afc;
pub mod detection;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod pulses;
pub mod seeds;
pub mod sequences;

pub use error::{Error, Result};
