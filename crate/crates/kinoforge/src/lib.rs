//! Kinodynamic motion-planning toolkit for differential-drive robots.
//!
//! The pipeline: generate a dispersion-bounded dataset of high-quality
//! constant controls ([`dataset`]), train a small steering network on it
//! ([`controller`]), precompute medial-axis vector fields for a workspace
//! ([`medial_axis`]), then run an informed blossom tree planner that expands
//! with learned controls ([`planner`]). [`maps`] parses benchmark grid maps
//! and [`bench`] drives the full planner comparison protocol.

pub mod error;

pub mod bench;
pub mod controller;
pub mod dataset;
pub mod dynamics;
pub mod maps;
pub mod medial_axis;
pub mod planner;

pub use error::{Error, Result};
