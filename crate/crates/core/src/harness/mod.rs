//! Desk-scale models with known or measurable loss landscapes.

mod experiment;
mod quadratic;
mod tiny;

pub use experiment::{
    run_allocation_experiment, run_linearity_experiment, AllocationReport, AllocationRow, ExperimentSpec, LinearityReport,
    ReportRow, SweepConfig, DIVERGENCE_THRESHOLD,
};
pub use quadratic::{quadratic_model, QuadraticModel};
pub use tiny::{train_tiny, HeldoutLoss, TinyConfig, TinyModel, TraceEntry};
