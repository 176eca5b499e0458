//! Microscopic simulator and control library for highway on-ramp merging
//! with mixed automated cars (CAV) and trucks (CAT) on a dual mainline.
//!
//! The crate provides:
//!
//! - kinematic vehicle models and piecewise constant-acceleration plans
//!   ([`model`]),
//! - the safe-spacing error budget and merge-gap arithmetic ([`safety`]),
//! - an uncontrolled baseline (IDM car-following plus gap-acceptance lane
//!   changes, [`baseline`]),
//! - the preemptive cooperative merge planner and its constraint solvers
//!   ([`controller`], [`solver`]),
//! - a deterministic fixed-step engine ([`engine`]),
//! - delay/speed metrics, trace exports and a paired scenario-grid runner
//!   ([`metrics`], [`export`], [`report`]).
//!
//! The `merge-sim` binary exposes `simulate`, `grid` and `export`
//! subcommands over the same machinery.

pub mod baseline;
pub mod config;
pub mod controller;
pub mod engine;
pub mod export;
pub mod metrics;
pub mod model;
pub mod report;
pub mod safety;
pub mod solver;
pub mod trace;

pub use config::{ScenarioConfig, Strategy};
pub use engine::{run, spawn_stream};
pub use model::{Lane, VehicleClass, VehicleId, VehicleState};
pub use safety::SafetyParams;
pub use trace::TraceLog;
