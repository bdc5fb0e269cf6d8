//! Synthetic sessions, scripted replay, leakage metrics and consistency
//! auditing for the anonymization pipeline.

pub mod audit;
pub mod generate;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod scenario;

pub use audit::{consistency_audit, EntityObservation, Violation, ViolationClass};
pub use generate::{generate_scenario, GenError, GenParams, ModalitySkew};
pub use report::{render_table, MetricsReport};
pub use runner::{run_scenario, RunError, RunOptions, Transcript};
pub use scenario::{PlantedEntity, Scenario, ScenarioError};
