use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenpairs sorted by descending
/// eigenvalue. Columns of `vectors` are unit norm.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SortedEigen> {
    check_square(m)?;
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Decomposition("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decomposition("non-finite eigenvalue".into()));
    }
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok(SortedEigen { values, vectors })
}

/// Eigenvalues only, descending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decomposition("non-finite matrix entry".into()));
    }
    let mut values: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decomposition("non-finite eigenvalue".into()));
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "expected a nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Squared multiple correlations `1 - 1/diag(R^-1)`, or `None` when `R` is
/// numerically singular.
pub fn squared_multiple_correlations(r: &DMatrix<f64>) -> Option<Vec<f64>> {
    let chol = r.clone().cholesky()?;
    let inv = chol.inverse();
    let smc: Vec<f64> = (0..r.nrows()).map(|i| 1.0 - 1.0 / inv[(i, i)]).collect();
    if smc.iter().all(|v| v.is_finite() && (-1e-12..=1.0).contains(v)) {
        Some(smc.into_iter().map(|v| v.max(0.0)).collect())
    } else {
        None
    }
}

/// Largest absolute off-diagonal entry of each row.
pub fn max_abs_off_diagonal(r: &DMatrix<f64>) -> Vec<f64> {
    (0..r.nrows())
        .map(|i| {
            (0..r.ncols())
                .filter(|&j| j != i)
                .map(|j| r[(i, j)].abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sorted_descending_with_unit_vectors() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 3.0]);
        let e = sym_eigen(&m).unwrap();
        assert_eq!(e.values, vec![5.0, 3.0, 2.0]);
        for c in 0..3 {
            assert_abs_diff_eq!(e.vectors.column(c).norm(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(e.vectors[(1, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_eq!(sym_eigenvalues(&m).unwrap(), vec![5.0, 3.0, 2.0]);
    }

    #[test]
    fn smc_of_equicorrelation() {
        // one-factor structure with loading 0.7: SMC of 3 items has closed form
        let rho: f64 = 0.49;
        let m = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { rho });
        let smc = squared_multiple_correlations(&m).unwrap();
        let expected = 2.0 * rho * rho / (1.0 + rho);
        for v in smc {
            assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        }
        let singular = DMatrix::from_element(2, 2, 1.0);
        assert!(squared_multiple_correlations(&singular).is_none());
    }
}
