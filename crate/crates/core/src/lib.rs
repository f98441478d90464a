//! Discrete stochastic parametrization of multiscale ODEs.
//!
//! The resolved variables of a two-scale Lorenz 96 system are observed at a
//! fixed interval `delta`. Against a deterministic one-step map of the
//! truncated model, the per-step discrepancy is extracted exactly from the
//! data and identified as a NARMAX time series. The resulting reduced model is
//! compared with the full system and with a polynomial + AR(1) closure
//! (POLYAR) through long-run statistics and ensemble forecast skill.
//!
//! Module map:
//!
//! - [`lorenz96`]: two-scale vector field, RK4 and ground-truth generation.
//! - [`reduction`]: the truncated one-step map and discrepancy extraction.
//! - [`narmax`]: NARMAX evaluation, conditional likelihood, fitting, simulation.
//! - [`optimizer`]: BFGS and QR least squares.
//! - [`polyar`]: the polynomial + AR(1) baseline.
//! - [`stats`]: mean/std, KDE, ACF/CCF and two-sample KS.
//! - [`forecast`]: ensemble forecast RMSE and anomaly correlation.

pub mod error;
pub mod forecast;
pub mod lorenz96;
pub mod narmax;
pub mod optimizer;
pub mod polyar;
pub mod reduction;
pub mod seed;
pub mod series;
pub mod stats;

pub use error::{Error, Result};
pub use series::SeriesSet;
