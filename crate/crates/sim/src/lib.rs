//! Deterministic scenario runner for the bazaar kernel.
//!
//! Scenarios script kernel commands directly or through seeded policy
//! blocks. Runs are reproducible from `(scenario, seed)` and their logs can
//! be re-checked offline with [`check::check_properties`].

pub mod check;
pub mod fuzz;
pub mod metrics;
pub mod runner;
pub mod scenario;

pub use check::{check_properties, PropertyVerdict};
pub use metrics::{emit_metrics, MetricsFormat};
pub use runner::{run_scenario, SimReport, SimRun};
pub use scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("scenario does not parse: {0}")]
    ScenarioParse(String),
    #[error("step {step} ({command}) failed unexpectedly: {error}")]
    PolicyPreconditionViolation {
        step: usize,
        command: String,
        error: String,
    },
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("i/o failure: {0}")]
    Io(String),
}
