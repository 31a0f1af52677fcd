//! Downlink spatial covariance estimation from uplink measurements for FDD
//! massive MIMO base stations with cross-polarized planar arrays.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: directions, angular grids, the cross-polarized UPA and
//!   the BS/UE radiation patterns.
//! - [`channel`]: clustered multipath scenario drawing and narrow-band /
//!   OFDM channel synthesis, plus the ground-truth polarized angular power
//!   spectra.
//! - [`covariance`]: quadrature covariances, sample covariance, PSD
//!   projection and the UPA structure (averaging, compressed vectorization).
//! - [`conversion`]: kernel operators, projection onto the affine variety
//!   (Algorithm 1), extrapolated alternating projections with the
//!   nonnegativity cone (Algorithm 2) and the full conversion pipeline.
//! - [`metrics`]: normalized Frobenius and principal-subspace errors.
//! - [`simharness`]: the Monte Carlo campaign, its config and CSV output.
//! - [`io`]: covariance and operator file formats.

pub mod channel;
pub mod conversion;
pub mod covariance;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod simharness;

pub use error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Complex = num_complex::Complex64;
pub type CMatrix = nalgebra::DMatrix<Complex>;
pub type CVector = nalgebra::DVector<Complex>;
pub type RMatrix = nalgebra::DMatrix<f64>;
pub type RVector = nalgebra::DVector<f64>;
