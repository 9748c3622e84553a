//! Mechanism probes on dichotomized components: variable screens,
//! logistic regressions with classification diagnostics, and reruns
//! within strata.

mod logistic;
mod roc;
mod screen;
mod stratified;

pub use logistic::{
    design_matrix, fit_logistic, fit_logistic_columns, Design, LogisticFit, CLASSIFICATION_CUTOFF,
    MAX_ITERATIONS, SATURATION, STEP_TOLERANCE, STANDARDIZED_COEF_LIMIT,
};
pub use roc::roc_auc;
pub use screen::{screen, screen_labels, GroupSummary, ScreenResult, ScreenTest};
pub use stratified::{stratified_rerun, StratumOutcome, StratumReport};
