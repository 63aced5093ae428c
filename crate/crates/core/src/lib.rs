//! Balanced, contiguous and compact partitioning of spatial contiguity graphs.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] holds the contiguity graph, the [`Plan`] representation and
//!   the connectivity queries every algorithm relies on.
//! * [`geometry`] provides the polygon arithmetic behind Polsby-Popper
//!   compactness.
//! * [`instance`] loads and generates problem instances and (de)serializes
//!   plans.
//! * [`objective`] scores plans: the weighted balance/compactness objective,
//!   percentage metrics and planner-facing reports.
//! * [`init`], [`search`] and [`memetic`] implement the solvers: seeded
//!   guided growth, flip-based local search with its sampling and
//!   metaheuristic baselines, and the memetic loop with spatially-aware
//!   recombination and BFS repair.
//! * [`oracle`] enumerates every feasible plan of tiny instances.
//!
//! Data-parallel loops (per-member search, trials) go through [`par`], which
//! uses rayon when the `parallel` feature is on and falls back to plain
//! iteration otherwise. Results never depend on the execution mode.

// `!(x >= 0.0)` is used on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod graph;
pub mod init;
pub mod instance;
pub mod memetic;
pub mod objective;
pub mod oracle;
pub mod par;
pub mod search;

pub use error::{Error, Result};
pub use graph::{ContiguityGraph, FeatureRecord, Level, LevelCounts, NodeId, Plan};
pub use instance::Instance;
pub use objective::{CompactnessMode, ObjectiveConfig, ObjectiveReport, PlanState};
