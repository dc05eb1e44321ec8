//! Availability-aware redundancy for peer-to-peer backup.
//!
//! The crate models peers with availability traces and access links, decides
//! how many erasure-coded fragments an owner needs, and simulates backup,
//! maintenance and restore over a population of peers.

pub mod config;
pub mod experiment;
pub mod model;
pub mod report;
pub mod policy;
pub mod sim;
pub mod trace;
pub mod traces;
