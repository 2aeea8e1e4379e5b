//! Liability-threshold (bivariate probit) models for right-censored twin
//! data under competing risks.
//!
//! The crate fits flexible bivariate probit and polygenic (ACE/ADE/AE/...)
//! models to paired time-to-event data by solving inverse-probability-of-
//! censoring-weighted (IPCW) score equations, reports genetic/environmental
//! variance decompositions and dependence measures with sandwich standard
//! errors, and ships a simulation harness for coverage studies.

pub mod biprobit;
pub mod censoring;
pub mod cli;
pub mod data;
pub mod error;
pub(crate) mod fmt;
pub mod intervals;
pub(crate) mod linalg;
pub mod measures;
pub mod normal;
pub mod polygenic;
pub mod sim;

pub use error::{Error, Result};
