//! Quaternion-enhanced attention for music-conditioned motion prediction.
//!
//! The numeric core ([`numerics`], [`quaternion`], [`spe`], [`qra`], [`tape`])
//! is generic over [`Scalar`]; the application layers ([`model`],
//! [`training`], [`features`], [`metrics`]) run in `f64`.

pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod qra;
pub mod quaternion;
mod scalar;
pub mod spe;
pub mod tape;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = numerics::Matrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type Quaternion64 = quaternion::Quaternion<f64>;
pub type Quaternion32 = quaternion::Quaternion<f32>;
pub type ConvKernel64 = numerics::ConvKernel<f64>;
pub type QraParams64 = qra::QraParams<f64>;
pub type QraParams32 = qra::QraParams<f32>;
pub type RotarySchedule64 = spe::RotarySchedule<f64>;
pub type Tape64 = tape::Tape<f64>;
