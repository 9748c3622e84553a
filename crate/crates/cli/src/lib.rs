//! Command-line orchestration: ingestion, run configuration, the
//! analysis pipeline and the simulation driver.

pub mod analyze;
pub mod config;
pub mod ingest;
pub mod simulate;

pub use analyze::{analyze, analyze_dataset, run, Analysis, AnalysisReport};
pub use config::{CriterionChoice, OutputFormat, RunConfig};
pub use ingest::{ingest, ingest_reader, IngestOptions};
pub use simulate::{simulate, GridSpec, SimulationRun};
