use super::{check_descending, CriterionKind, RetentionCriterion, RetentionDecision, RetentionInput};
use crate::error::Result;

/// Lower bound on the pooled variance of the two-group model.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Scree split maximizing a two-group normal profile likelihood.
pub struct ProfileLikelihood;

impl RetentionCriterion for ProfileLikelihood {
    fn kind(&self) -> CriterionKind {
        CriterionKind::ProfileLikelihood
    }

    fn decide(&self, input: &RetentionInput<'_>) -> Result<RetentionDecision> {
        profile_likelihood(input.eigenvalues)
    }
}

/// For each split q in 1..k-1 the leading q and trailing k-q eigenvalues
/// are two normal samples with their own means and a common (ML) variance.
/// The maximized log-likelihood is `-k/2 (ln(2πσ²) + 1)`; ties go to the
/// smaller q.
pub fn profile_likelihood(eigenvalues: &[f64]) -> Result<RetentionDecision> {
    check_descending(eigenvalues, 2)?;
    let k = eigenvalues.len();
    let kf = k as f64;
    let log_lik: Vec<f64> = (1..k)
        .map(|q| {
            let sse = sum_sq_dev(&eigenvalues[..q]) + sum_sq_dev(&eigenvalues[q..]);
            let var = (sse / kf).max(VARIANCE_FLOOR);
            -0.5 * kf * ((2.0 * std::f64::consts::PI * var).ln() + sse / (kf * var))
        })
        .collect();
    let mut best = 0;
    for (i, &ll) in log_lik.iter().enumerate() {
        if ll > log_lik[best] {
            best = i;
        }
    }
    Ok(RetentionDecision {
        criterion: CriterionKind::ProfileLikelihood,
        k_retained: best + 1,
        diagnostics: log_lik,
        converged: true,
        dropped_replications: 0,
    })
}

fn sum_sq_dev(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dominant_eigenvalue() {
        let d = profile_likelihood(&[10.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.k_retained, 1);
        assert_eq!(d.diagnostics.len(), 4);
    }

    #[test]
    fn flat_spectrum_ties_to_one() {
        let d = profile_likelihood(&[1.0; 6]).unwrap();
        assert_eq!(d.k_retained, 1);
        assert!(d.diagnostics.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn needs_two_values() {
        assert!(profile_likelihood(&[3.0]).is_err());
    }
}
