use super::{check_descending, CriterionKind, RetentionCriterion, RetentionDecision, RetentionInput};
use crate::error::Result;

/// Retain components with eigenvalue strictly greater than one.
pub struct Kaiser;

impl RetentionCriterion for Kaiser {
    fn kind(&self) -> CriterionKind {
        CriterionKind::Kaiser
    }

    fn decide(&self, input: &RetentionInput<'_>) -> Result<RetentionDecision> {
        kaiser(input.eigenvalues)
    }
}

pub fn kaiser(eigenvalues: &[f64]) -> Result<RetentionDecision> {
    check_descending(eigenvalues, 1)?;
    Ok(RetentionDecision {
        criterion: CriterionKind::Kaiser,
        k_retained: eigenvalues.iter().filter(|&&v| v > 1.0).count(),
        diagnostics: vec![1.0; eigenvalues.len()],
        converged: true,
        dropped_replications: 0,
    })
}
