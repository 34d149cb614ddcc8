//! Simulation, reconstruction and entanglement certification for the
//! multimode Gaussian output of a bichromatically pumped parametric resonator.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); the aliases below fix it to `f64`, which is what the
//! file formats and the command-line pipeline use.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod comb;
pub mod entanglement;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod jpa;
pub mod loss;
pub mod random;
pub mod reconstruction;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type CovarianceF64 = gaussian::CovarianceMatrix<f64>;
pub type CovarianceF32 = gaussian::CovarianceMatrix<f32>;
pub type PhysicalityReportF64 = gaussian::PhysicalityReport<f64>;
pub type PumpConfigF64 = jpa::PumpConfig<f64>;
pub type UncertaintyF64 = reconstruction::UncertaintyMatrix<f64>;
pub type SvlReportF64 = entanglement::SvlReport<f64>;
pub type LossSweepF64 = loss::LossSweepResult<f64>;
