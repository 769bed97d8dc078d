//! Throughput models for LiFi attocell networks with limited channel
//! feedback.
//!
//! The crate covers the optical channel ([`channel`]), UE motion
//! ([`mobility`]), the OFDMA downlink ([`downlink`]), the CSMA/CA uplink
//! ([`uplink`]), feedback schemes ([`feedback`]), the optimal feedback
//! update interval ([`interval`]) and the Monte-Carlo experiments built on
//! them ([`montecarlo`]).
//!
//! ```
//! use lifi_feedback::config::NetworkConfig;
//! use lifi_feedback::interval::{t_opt_closed_form, UpdateIntervalParams};
//!
//! let cfg = NetworkConfig::default();
//! let p = UpdateIntervalParams::from_config(&cfg, 1.0).unwrap();
//! let t = t_opt_closed_form(&p, false).unwrap();
//! assert!(t > 0.1 && t < 0.2);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod downlink;
pub mod error;
pub mod feedback;
pub mod interval;
pub mod mobility;
pub mod montecarlo;
pub mod quad;
pub mod stats;
pub mod uplink;

pub use error::{Error, Result};
