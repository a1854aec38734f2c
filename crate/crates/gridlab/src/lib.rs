//! A laboratory for studying power-grid robustness.
//!
//! The crate models transmission grids as graphs with bus injections and line
//! susceptances, solves DC power flow per island, grows families of line-limit
//! profiles, runs randomised attack/cascade campaigns, embeds loaded grids as
//! damped spring systems, and evaluates how cheap embedding-derived metrics
//! predict expensive cascade outcomes (spline regression, cross-validation,
//! and kriging of embedding surfaces back onto the plane).
//!
//! Everything is deterministic given a master seed: identical inputs produce
//! byte-identical artifact trees regardless of worker count.

pub mod cascade;
pub mod config;
pub mod dcflow;
pub mod evaluation;
pub mod geospatial;
pub mod grid;
pub mod metrics;
pub mod orchestrator;
pub mod profiles;
pub mod seeds;
pub mod setse;
pub mod spline;
pub mod topology;

pub use grid::{Bus, GridError, GridFormat, Line, PowerGrid};
