//! Joint channel estimation and prediction for frequency-hopping massive MIMO sounding.
//!
//! The crate is `no_std` (with `alloc`). It covers the sounding geometry and sampling
//! grids, synthetic multipath channels, the off-grid delay-angle-Doppler dictionary,
//! the hybrid message-passing estimator with hyper-parameter learning, greedy and AMP
//! baselines, and Doppler-domain prediction.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod baselines;
pub mod channel;
pub mod config;
pub mod dictionary;
pub mod error;
pub mod hmp;
pub mod hyper;
pub mod predict;
pub mod seed;
pub mod steering;

/// Complex double.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix (column-major).
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense real matrix (column-major).
pub type RMat = nalgebra::DMatrix<f64>;

pub use config::{Axis, GridSpec, OffGridParams, SystemConfig};
pub use error::{Error, Result};
