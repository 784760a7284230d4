//! Mechanism-mixing trajectories: simulation, recovery of the mixing weights
//! from distorted latents, and the diagnostics that say when to trust them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! `f64` aliases at the bottom of this file are what the harness and CLI use.

pub mod basis;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod generator;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod recovery;
pub mod rng;
pub mod selftest;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub use error::{Error, Result};

/// Floating-point element type used throughout the crate.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for finite inputs.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type Matrix = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type MechanismSet = generator::MechanismSet<f64>;
pub type MixingSchedule = generator::MixingSchedule<f64>;
pub type TrajectoryBundle = generator::TrajectoryBundle<f64>;
pub type EncoderDistortion = encoder::EncoderDistortion<f64>;
pub type DomainBasis = basis::DomainBasis<f64>;
pub type RecoveryResult = recovery::RecoveryResult<f64>;
pub type DiagnosticsReport = diagnostics::DiagnosticsReport<f64>;
pub type ScoreCard = metrics::ScoreCard<f64>;
