//! Missing-data pattern analysis: missingness indicators, pattern tables,
//! binary correlation, component extraction, retention criteria,
//! missingness-mechanism screens and a Monte Carlo recovery study.

pub mod correlation;
pub mod error;
pub mod extraction;
pub mod indicators;
pub mod linalg;
pub mod mechanism;
pub mod registry;
pub mod retention;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod synthetic;

pub use correlation::{
    correlation_registry, pearson, repair_pd, tetrachoric, CorrelationEstimator, CorrelationKind,
    CorrelationMatrix,
};
pub use error::{Error, Result};
pub use extraction::{
    extraction_registry, paf, pca, scores, EigenSolution, ExtractionMethod, Extractor,
};
pub use indicators::{
    build_indicators, tabulate_patterns, Column, ColumnData, Dataset, IndicatorMatrix, PatternTable,
};
pub use registry::Registry;
pub use retention::{
    criteria_registry, guidance, CriterionKind, ParallelAnalysis, RetentionCriterion,
    RetentionDecision, RetentionInput,
};
