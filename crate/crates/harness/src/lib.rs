//! Driver for the volvol estimators: scenario configuration, Monte Carlo
//! replications, market-data ingestion and the daily empirical pipeline.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod empirical;
pub mod ingest;
pub mod mc;
pub mod pipeline;
pub mod truth;

pub use config::{ScenarioConfig, Truncation, V0Spec};
pub use empirical::{run_empirical, EmpiricalRun};
pub use ingest::{ingest_panels, AuditLog, DayPanels, PanelWriter};
pub use mc::{run_mc, run_replication, McSummary, Scenario};
pub use pipeline::{EstimateRecord, EstimatorKind};
pub use truth::{ground_truth, Truth};
