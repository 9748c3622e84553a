use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{
    check_descending, leading_exceedances, CriterionKind, RetentionCriterion, RetentionDecision,
    RetentionInput,
};
use crate::correlation::{cross_counts, phi_from_counts};
use crate::error::{Error, Result};
use crate::extraction::reduced_matrix;
use crate::indicators::IndicatorMatrix;
use crate::linalg::sym_eigenvalues;
use crate::rng::stream_rng;
use crate::stats::quantile_sorted;

/// More dropped replications than this marks the decision unconverged.
pub const MAX_DROPPED_FRACTION: f64 = 0.10;

/// Horn's parallel analysis with a column-permutation null.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallelAnalysis {
    pub reps: usize,
    pub percentile: f64,
}

impl Default for ParallelAnalysis {
    fn default() -> Self {
        Self {
            reps: 100,
            percentile: 0.95,
        }
    }
}

impl RetentionCriterion for ParallelAnalysis {
    fn kind(&self) -> CriterionKind {
        CriterionKind::Parallel
    }

    fn decide(&self, input: &RetentionInput<'_>) -> Result<RetentionDecision> {
        let ind = input.indicators.ok_or_else(|| {
            Error::InvalidArgument("parallel analysis needs the indicator matrix".into())
        })?;
        run(ind, input.eigenvalues, *self, input.seed, input.reduced)
    }
}

/// Compares observed eigenvalues with the `percentile` of eigenvalues from
/// `reps` copies of the indicators whose columns were independently
/// permuted. Replication r draws from the stream `(seed, r)`.
pub fn parallel_analysis(
    ind: &IndicatorMatrix,
    eigenvalues: &[f64],
    reps: usize,
    percentile: f64,
    seed: u64,
) -> Result<RetentionDecision> {
    run(ind, eigenvalues, ParallelAnalysis { reps, percentile }, seed, false)
}

fn run(
    ind: &IndicatorMatrix,
    eigenvalues: &[f64],
    pa: ParallelAnalysis,
    seed: u64,
    reduced: bool,
) -> Result<RetentionDecision> {
    check_descending(eigenvalues, 1)?;
    if pa.reps == 0 {
        return Err(Error::InvalidArgument("parallel analysis needs at least one replication".into()));
    }
    if !(pa.percentile > 0.0 && pa.percentile < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile must lie in (0, 1), got {}",
            pa.percentile
        )));
    }
    let k = ind.n_cols();
    if eigenvalues.len() != k {
        return Err(Error::Dimension(format!(
            "{} eigenvalues for {k} indicators",
            eigenvalues.len()
        )));
    }

    let spectra: Vec<Option<Vec<f64>>> = (0..pa.reps)
        .into_par_iter()
        .map(|r| permuted_spectrum(ind, seed, r as u64, reduced))
        .collect();
    let kept: Vec<Vec<f64>> = spectra.into_iter().flatten().collect();
    let dropped = pa.reps - kept.len();
    let converged = (dropped as f64) <= MAX_DROPPED_FRACTION * pa.reps as f64;

    if kept.is_empty() {
        return Ok(RetentionDecision {
            criterion: CriterionKind::Parallel,
            k_retained: 0,
            diagnostics: vec![f64::NAN; k],
            converged: false,
            dropped_replications: dropped,
        });
    }
    let reference: Vec<f64> = (0..k)
        .map(|j| {
            let mut column: Vec<f64> = kept.iter().map(|s| s[j]).collect();
            column.sort_by(f64::total_cmp);
            quantile_sorted(&column, pa.percentile)
        })
        .collect();
    Ok(RetentionDecision {
        criterion: CriterionKind::Parallel,
        k_retained: leading_exceedances(eigenvalues, &reference),
        diagnostics: reference,
        converged,
        dropped_replications: dropped,
    })
}

/// Eigenvalues of one permuted copy, or `None` if degenerate.
fn permuted_spectrum(ind: &IndicatorMatrix, seed: u64, rep: u64, reduced: bool) -> Option<Vec<f64>> {
    let n = ind.n_rows();
    let mut rng = stream_rng(seed, &[rep]);
    let mut x: DMatrix<f64> = ind.values().clone();
    for column in x.as_mut_slice().chunks_mut(n) {
        column.shuffle(&mut rng);
    }
    // permutation preserves every column total, so the phi formula applies
    let mut r = phi_from_counts(&cross_counts(&x), n);
    if reduced {
        r = reduced_matrix(&r);
    }
    sym_eigenvalues(&r)
        .ok()
        .filter(|v| v.iter().all(|x| x.is_finite()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise(n: usize, k: usize, seed: u64) -> IndicatorMatrix {
        let mut rng = stream_rng(seed, &[]);
        let m = DMatrix::from_fn(n, k, |_, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        IndicatorMatrix::from_binary((0..k).map(|j| format!("v{j}")).collect(), &m).unwrap()
    }

    fn observed(ind: &IndicatorMatrix) -> Vec<f64> {
        sym_eigenvalues(&crate::correlation::pearson(ind).unwrap().values).unwrap()
    }

    #[test]
    fn single_replication_reference_is_that_spectrum() {
        let ind = noise(200, 6, 1);
        let eig = observed(&ind);
        let a = parallel_analysis(&ind, &eig, 1, 0.95, 42).unwrap();
        let b = parallel_analysis(&ind, &eig, 1, 0.5, 42).unwrap();
        assert_eq!(a.diagnostics, b.diagnostics);
        assert_eq!(a.diagnostics, permuted_spectrum(&ind, 42, 0, false).unwrap());
        let again = parallel_analysis(&ind, &eig, 1, 0.95, 42).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn deterministic_across_thread_pools() {
        let ind = noise(300, 8, 2);
        let eig = observed(&ind);
        let run_in = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| parallel_analysis(&ind, &eig, 40, 0.95, 9).unwrap())
        };
        assert_eq!(run_in(1), run_in(4));
    }

    #[test]
    fn independent_noise_retains_nothing_mostly() {
        let mut zero = 0;
        let runs = 40;
        for s in 0..runs {
            let ind = noise(1000, 8, 100 + s);
            let eig = observed(&ind);
            let d = parallel_analysis(&ind, &eig, 50, 0.95, s).unwrap();
            assert!(d.converged);
            assert_eq!(d.dropped_replications, 0);
            if d.k_retained == 0 {
                zero += 1;
            }
        }
        assert!(zero as f64 >= 0.9 * runs as f64, "{zero}/{runs}");
    }

    #[test]
    fn argument_checks() {
        let ind = noise(50, 3, 3);
        let eig = observed(&ind);
        assert!(parallel_analysis(&ind, &eig, 0, 0.95, 0).is_err());
        assert!(parallel_analysis(&ind, &eig, 10, 1.0, 0).is_err());
        assert!(parallel_analysis(&ind, &eig[..2], 10, 0.95, 0).is_err());
    }
}
