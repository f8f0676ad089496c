//! Frame-level simulator of the GSM/GPRS uplink access pipeline (RACH
//! contention, AGCH grants, USF-scheduled data transfer) under mass
//! machine-type traffic, with the AGCH-multi-grant and extended-USF
//! improvements.
//!
//! Start from [`config::SimConfig`] and a [`traffic::Scenario`], then call
//! [`engine::run`]. [`sweep`] and [`recipes`] build on top of that.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod access;
pub mod analytics;
pub mod calendar;
pub mod config;
pub mod data_plane;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod grant;
pub mod output;
pub mod recipes;
pub mod rng;
pub mod sweep;
pub mod traffic;

pub use config::SimConfig;
pub use engine::{run, RunReport};
pub use error::{Error, Result};
pub use grant::Variant;
pub use traffic::Scenario;
