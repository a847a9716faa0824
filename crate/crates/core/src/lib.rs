//! Overlay routing over an uncontrolled underlay: a slotted queueing
//! network simulator, the price-based overlay controller with its Q-learning,
//! price and budget layers, baseline policies and exact oracles for small
//! networks.

pub mod budget;
pub mod controllers;
pub mod diagnose;
pub mod error;
pub mod network;
pub mod oracle;
pub mod price;
pub mod qlearning;
pub mod scenario;
pub mod schedule;
pub mod sim;

pub use error::{Error, Result};
