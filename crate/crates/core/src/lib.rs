//! VIX futures curve modelling and expected-utility trading signals.
//!
//! The pipeline runs from raw settlements to cross-validated backtests:
//! [`ingest`] aligns spot and futures data, [`curve`] builds constant-maturity
//! prices and roll yields, [`dynamics`] fits a mode-centred vector AR(1) model
//! and simulates from it, [`network`] trains a dense PReLU network on simulated
//! expected utilities, [`signal`] turns network outputs into positions, and
//! [`backtest`] runs the k-fold protocol and computes performance metrics.

// `!(x > 0.0)` is how validation rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod curve;
pub mod dynamics;
pub mod error;
pub mod ingest;
pub mod network;
pub mod signal;
pub mod synthetic;
pub mod utility;

pub use error::{Error, Result};

/// A curve state `[log VIX, log V¹..V⁵, Roll¹..Roll⁵]`, or a lower-dimensional
/// state for toy models.
pub type StateVector = nalgebra::DVector<f64>;
