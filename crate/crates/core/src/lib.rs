//! Indoor infrared uplink simulator.
//!
//! Ray traces an empty room up to second-order Lambertian reflections toward
//! a ceiling grid of four-branch angle diversity receivers, turns the
//! resulting impulse responses into OOK link metrics, and runs the quadrant
//! search that steers the transmitter beam onto the best receiver.
//!
//! Modules, bottom up:
//! - [`scene`]: room, transmitter, receivers, scenario documents
//! - [`raytrace`]: LOS kernel, reflection tracing, impulse responses
//! - [`metrics`]: power, delay spread, eye powers, SNR, BER
//! - [`steering`]: quadrant-search acquisition and the steered beam
//! - [`cli`]: command-line subcommands

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod geom;
pub mod metrics;
pub mod raytrace;
pub mod report;
pub mod scene;
pub mod steering;

pub use geom::Vec3;
