use super::{
    check_descending, leading_exceedances, CriterionKind, RetentionCriterion, RetentionDecision,
    RetentionInput,
};
use crate::error::{Error, Result};

/// Empirical Kaiser criterion: sample-size and serial-position adjusted
/// reference eigenvalues, floored at one.
pub struct EmpiricalKaiser;

impl RetentionCriterion for EmpiricalKaiser {
    fn kind(&self) -> CriterionKind {
        CriterionKind::Ekc
    }

    fn decide(&self, input: &RetentionInput<'_>) -> Result<RetentionDecision> {
        ekc(input.eigenvalues, input.n)
    }
}

/// `ref_j = max((1 + sqrt(k/n))^2 * (k - sum_{i<j} λ_i) / (k - j + 1), 1)`;
/// retains the leading run of eigenvalues above their reference.
pub fn ekc(eigenvalues: &[f64], n: usize) -> Result<RetentionDecision> {
    check_descending(eigenvalues, 1)?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("sample size must be at least 2, got {n}")));
    }
    let k = eigenvalues.len() as f64;
    let inflation = (1.0 + (k / n as f64).sqrt()).powi(2);
    let mut preceding = 0.0;
    let reference: Vec<f64> = eigenvalues
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let remaining = (k - preceding) / (k - j as f64);
            preceding += lambda;
            (inflation * remaining).max(1.0)
        })
        .collect();
    Ok(RetentionDecision {
        criterion: CriterionKind::Ekc,
        k_retained: leading_exceedances(eigenvalues, &reference),
        diagnostics: reference,
        converged: true,
        dropped_replications: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_spectrum_retains_nothing() {
        let d = ekc(&[1.0; 5], 100).unwrap();
        // (1 + sqrt(0.05))^2 = 1.4972...
        assert_abs_diff_eq!(d.diagnostics[0], (1.0 + 0.05f64.sqrt()).powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(d.diagnostics[0], 1.498, epsilon = 1e-3);
        assert_eq!(d.k_retained, 0);
    }

    #[test]
    fn large_sample_approaches_kaiser() {
        let d = ekc(&[2.5, 1.2, 0.8], 1_000_000_000).unwrap();
        assert_eq!(d.k_retained, 2);
        assert_abs_diff_eq!(d.diagnostics[0], 1.0, epsilon = 1e-3);
        // second reference: remaining variance (3 - 2.5) / 2 is below one
        assert_eq!(d.diagnostics[1], 1.0);
    }

    #[test]
    fn serial_correction_binds() {
        // first eigenvalue leaves little variance, yet the second reference
        // is inflated by the small sample
        let eigs = [1.8, 1.05, 0.9, 0.75, 0.5];
        let d = ekc(&eigs, 200).unwrap();
        let inflation = (1.0 + 0.025f64.sqrt()).powi(2);
        assert_abs_diff_eq!(d.diagnostics[1], inflation * 3.2 / 4.0, epsilon = 1e-12);
        assert!(d.diagnostics[1] > 1.05);
        assert_eq!(d.k_retained, 1);
        assert_eq!(super::super::kaiser::kaiser(&eigs).unwrap().k_retained, 2);
    }
}
