use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::roc::roc_auc;
use super::screen::check_flag;
use crate::error::{Error, Result};
use crate::indicators::{ColumnData, Dataset};

pub const MAX_ITERATIONS: usize = 100;
/// Convergence when every Newton step component is below this magnitude.
/// The final step is still applied, so the coefficients are accurate well past it.
pub const STEP_TOLERANCE: f64 = 1e-10;
/// Fitted probabilities this close to 0 or 1 count as saturated.
pub const SATURATION: f64 = 1e-8;
/// Coefficient magnitude (per predictor standard deviation) treated as
/// divergence.
pub const STANDARDIZED_COEF_LIMIT: f64 = 15.0;
pub const CLASSIFICATION_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// `"intercept"` followed by the retained predictors.
    pub parameters: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Absent when the fit is separated.
    pub standard_errors: Option<Vec<f64>>,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub lr_chi2: f64,
    pub df: usize,
    /// McFadden.
    pub pseudo_r2: f64,
    pub auc: f64,
    /// Classification rates at [`CLASSIFICATION_CUTOFF`], as proportions.
    pub sensitivity: f64,
    pub specificity: f64,
    pub correct_pct: f64,
    pub separated: bool,
    pub converged: bool,
    pub iterations: usize,
    /// Predictors dropped as linearly dependent on earlier columns.
    pub aliased: Vec<String>,
    pub n: usize,
    pub n_positive: usize,
    /// Rows left out for missing predictor values (complete-case).
    pub n_excluded: usize,
}

/// Numerically safe `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(design: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter().zip(y).map(|(&e, &yi)| yi * e - softplus(e)).sum()
}

/// Columns kept after left-to-right elimination of linear dependence.
fn independent_columns(design: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for j in 0..design.ncols() {
        let col = design.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r = col.clone();
        for b in &basis {
            let proj = b.dot(&r);
            r -= b * proj;
        }
        let rn = r.norm();
        if rn > 1e-9 * norm {
            basis.push(r / rn);
            keep.push(j);
        }
    }
    keep
}

/// Step 7: maximum-likelihood logistic regression of `y` on the columns of
/// `x` (an intercept is always added) by iteratively reweighted least
/// squares.
pub fn fit_logistic(y: &[u8], x: &DMatrix<f64>, names: &[String]) -> Result<LogisticFit> {
    let n = y.len();
    if x.nrows() != n || names.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "design is {}x{} with {} names for {n} outcomes",
            x.nrows(),
            x.ncols(),
            names.len()
        )));
    }
    check_flag(y, n)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("design contains non-finite values".into()));
    }

    let full = DMatrix::from_fn(n, x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let keep = independent_columns(&full);
    let design = full.select_columns(&keep);
    let mut parameters = vec!["intercept".to_string()];
    parameters.extend(keep.iter().skip(1).map(|&j| names[j - 1].clone()));
    let aliased: Vec<String> = (1..full.ncols())
        .filter(|j| !keep.contains(j))
        .map(|j| names[j - 1].clone())
        .collect();
    let sds: Vec<f64> = (0..design.ncols())
        .map(|j| {
            let c = design.column(j);
            let m = c.mean();
            (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt()
        })
        .collect();

    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let n_positive = y.iter().filter(|&&v| v == 1).count();
    let ybar = n_positive as f64 / n as f64;
    let null_ll = n_positive as f64 * ybar.ln() + (n - n_positive) as f64 * (1.0 - ybar).ln();

    let p = design.ncols();
    let mut beta = DVector::zeros(p);
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut ll = log_likelihood(&design, &yf, &beta);
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        let eta = &design * &beta;
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_iterator(n, yf.iter().zip(&prob).map(|(yi, pi)| yi - pi));
        let score = design.tr_mul(&resid);
        if saturated(&prob, y) {
            separated = true;
            break;
        }
        iterations += 1;
        let info = information(&design, &prob);
        let Some(step) = solve(info, &score) else {
            break;
        };
        if step.amax() < STEP_TOLERANCE {
            beta += &step;
            ll = log_likelihood(&design, &yf, &beta);
            converged = true;
            break;
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &beta + &step * scale;
            let cand_ll = log_likelihood(&design, &yf, &candidate);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        if beta
            .iter()
            .zip(&sds)
            .skip(1)
            .any(|(b, sd)| (b * sd).abs() > STANDARDIZED_COEF_LIMIT)
        {
            separated = true;
            break;
        }
    }

    let eta = &design * &beta;
    let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    separated |= saturated(&prob, y);
    if separated {
        converged = false;
    }
    let standard_errors = if separated {
        None
    } else {
        information(&design, &prob)
            .try_inverse()
            .map(|inv| (0..p).map(|j| inv[(j, j)].max(0.0).sqrt()).collect())
    };

    let (mut tp, mut tn) = (0usize, 0usize);
    for (&pi, &yi) in prob.iter().zip(y) {
        let predicted = pi >= CLASSIFICATION_CUTOFF;
        match (yi, predicted) {
            (1, true) => tp += 1,
            (0, false) => tn += 1,
            _ => {}
        }
    }
    let n_negative = n - n_positive;
    Ok(LogisticFit {
        parameters,
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        lr_chi2: 2.0 * (ll - null_ll),
        df: p - 1,
        pseudo_r2: (1.0 - ll / null_ll).clamp(0.0, 1.0),
        auc: roc_auc(&prob, y)?,
        sensitivity: tp as f64 / n_positive as f64,
        specificity: tn as f64 / n_negative as f64,
        correct_pct: (tp + tn) as f64 / n as f64,
        separated,
        converged,
        iterations,
        aliased,
        n,
        n_positive,
        n_excluded: 0,
    })
}

/// Every observation of some class has a fitted probability within
/// [`SATURATION`] of its label.
fn saturated(prob: &[f64], y: &[u8]) -> bool {
    let ones = prob
        .iter()
        .zip(y)
        .filter(|(_, &yi)| yi == 1)
        .all(|(&p, _)| p > 1.0 - SATURATION);
    let zeros = prob
        .iter()
        .zip(y)
        .filter(|(_, &yi)| yi == 0)
        .all(|(&p, _)| p < SATURATION);
    ones || zeros
}

fn information(design: &DMatrix<f64>, prob: &[f64]) -> DMatrix<f64> {
    let mut weighted = design.clone();
    for (i, &p) in prob.iter().enumerate() {
        let w = p * (1.0 - p);
        weighted.row_mut(i).scale_mut(w);
    }
    design.tr_mul(&weighted)
}

fn solve(info: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = info.clone().cholesky() {
        let s = chol.solve(rhs);
        if s.iter().all(|v| v.is_finite()) {
            return Some(s);
        }
    }
    info.lu().solve(rhs).filter(|s| s.iter().all(|v| v.is_finite()))
}

/// Predictor matrix built from dataset columns over complete cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    /// Rows of the source dataset that entered the design.
    pub rows: Vec<usize>,
    pub n_excluded: usize,
}

/// Numeric columns enter as-is; categorical columns are dummy coded
/// against their first (sorted) level. Rows missing any listed column are
/// excluded.
pub fn design_matrix(data: &Dataset, columns: &[String]) -> Result<Design> {
    let cols = columns
        .iter()
        .map(|c| data.column(c))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<usize> = (0..data.n_rows())
        .filter(|&i| cols.iter().all(|c| !c.data.is_missing(i)))
        .collect();
    let mut names = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for c in &cols {
        match &c.data {
            ColumnData::Numeric(v) => {
                names.push(c.name.clone());
                blocks.push(rows.iter().map(|&i| v[i].expect("complete case")).collect());
            }
            ColumnData::Categorical(v) => {
                let levels: BTreeSet<&String> = rows.iter().filter_map(|&i| v[i].as_ref()).collect();
                for level in levels.into_iter().skip(1) {
                    names.push(format!("{}={}", c.name, level));
                    blocks.push(
                        rows.iter()
                            .map(|&i| f64::from(v[i].as_ref() == Some(level)))
                            .collect(),
                    );
                }
            }
        }
    }
    let x = DMatrix::from_fn(rows.len(), blocks.len(), |i, j| blocks[j][i]);
    Ok(Design {
        x,
        names,
        n_excluded: data.n_rows() - rows.len(),
        rows,
    })
}

/// Complete-case logistic fit of `flag` on dataset columns.
pub fn fit_logistic_columns(data: &Dataset, flag: &[u8], columns: &[String]) -> Result<LogisticFit> {
    if flag.len() != data.n_rows() {
        return Err(Error::Dimension(format!(
            "flag has {} rows, data has {}",
            flag.len(),
            data.n_rows()
        )));
    }
    let design = design_matrix(data, columns)?;
    let y: Vec<u8> = design.rows.iter().map(|&i| flag[i]).collect();
    let mut fit = fit_logistic(&y, &design.x, &design.names)?;
    fit.n_excluded = design.n_excluded;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicators::Column;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn grouped(a: usize, b: usize, c: usize, d: usize) -> (Vec<u8>, DMatrix<f64>) {
        // a: x=1,y=1  b: x=1,y=0  c: x=0,y=1  d: x=0,y=0
        let mut y = Vec::new();
        let mut x = Vec::new();
        for (xi, yi, n) in [(1.0, 1, a), (1.0, 0, b), (0.0, 1, c), (0.0, 0, d)] {
            for _ in 0..n {
                x.push(xi);
                y.push(yi);
            }
        }
        let n = y.len();
        (y, DMatrix::from_vec(n, 1, x))
    }

    #[test]
    fn balanced_independent_cells() {
        let (y, x) = grouped(25, 25, 25, 25);
        let fit = fit_logistic(&y, &x, &["x".into()]).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.coefficients[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.lr_chi2, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.pseudo_r2, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn grouped_slope_is_log_odds_ratio() {
        let (a, b, c, d) = (30usize, 12usize, 9usize, 41usize);
        let (y, x) = grouped(a, b, c, d);
        let fit = fit_logistic(&y, &x, &["x".into()]).unwrap();
        let want = ((a * d) as f64 / (b * c) as f64).ln();
        assert_abs_diff_eq!(fit.coefficients[1], want, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.coefficients[0], (c as f64 / d as f64).ln(), epsilon = 1e-8);
        // closed-form standard error of a log odds ratio
        let se = (1.0 / a as f64 + 1.0 / b as f64 + 1.0 / c as f64 + 1.0 / d as f64).sqrt();
        assert_abs_diff_eq!(fit.standard_errors.unwrap()[1], se, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.pseudo_r2, 1.0 - fit.log_likelihood / fit.null_log_likelihood, epsilon = 1e-10);
    }

    #[test]
    fn sparse_cell_slope_is_exact() {
        let (y, x) = grouped(1, 21, 10, 17);
        let fit = fit_logistic(&y, &x, &["x".into()]).unwrap();
        assert!(fit.converged);
        let expected = (17.0f64 / (21.0 * 10.0)).ln();
        assert_abs_diff_eq!(fit.coefficients[1], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[0], (10.0f64 / 17.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn complete_separation() {
        let x: Vec<f64> = (-10..10).map(|v| v as f64 + 0.5).collect();
        let y: Vec<u8> = x.iter().map(|&v| u8::from(v > 0.0)).collect();
        let fit = fit_logistic(&y, &DMatrix::from_vec(20, 1, x), &["x".into()]).unwrap();
        assert!(fit.separated);
        assert!(!fit.converged);
        assert!(fit.standard_errors.is_none());
        assert_eq!(fit.correct_pct, 1.0);
        assert_eq!(fit.auc, 1.0);
    }

    #[test]
    fn aliased_columns_are_dropped_left_to_right() {
        let mut rng = crate::rng::stream_rng(11, &[]);
        let n = 200;
        let x1: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<u8> = x1.iter().map(|&v| u8::from(rng.random::<f64>() < v)).collect();
        let mut flat = Vec::new();
        flat.extend(&x1);
        flat.extend(x1.iter().map(|v| 2.0 * v + 1.0));
        let x = DMatrix::from_vec(n, 2, flat);
        let fit = fit_logistic(&y, &x, &["a".into(), "b".into()]).unwrap();
        assert_eq!(fit.aliased, vec!["b".to_string()]);
        assert_eq!(fit.parameters, vec!["intercept".to_string(), "a".to_string()]);
    }

    #[test]
    fn classification_identity_and_gradient() {
        let mut rng = crate::rng::stream_rng(12, &[]);
        let n = 500;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let y: Vec<u8> = x
            .iter()
            .map(|&v| u8::from(rng.random::<f64>() < sigmoid(0.3 + 1.2 * v)))
            .collect();
        let xm = DMatrix::from_vec(n, 1, x);
        let fit = fit_logistic(&y, &xm, &["x".into()]).unwrap();
        assert!(fit.converged && !fit.separated);
        let n1 = fit.n_positive as f64;
        let n0 = n as f64 - n1;
        assert_abs_diff_eq!(
            fit.correct_pct,
            (fit.sensitivity * n1 + fit.specificity * n0) / n as f64,
            epsilon = 1e-12
        );
        // central differences of the log-likelihood at the estimate
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xm[(i, 0)] });
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let h = 1e-6;
        for j in 0..2 {
            let mut up = DVector::from_vec(fit.coefficients.clone());
            let mut down = up.clone();
            up[j] += h;
            down[j] -= h;
            let g = (log_likelihood(&design, &yf, &up) - log_likelihood(&design, &yf, &down)) / (2.0 * h);
            assert!(g.abs() < 1e-6, "score {j} = {g}");
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let x = DMatrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
        assert!(matches!(fit_logistic(&[1, 1, 1], &x, &["x".into()]), Err(Error::SingleClass(_))));
    }

    #[test]
    fn design_from_dataset_is_complete_case_with_dummies() {
        let data = Dataset::new(vec![
            Column::numeric("age", vec![Some(30.0), None, Some(50.0), Some(40.0)]),
            Column::categorical(
                "arm",
                vec![Some("b".into()), Some("a".into()), Some("a".into()), Some("c".into())],
            ),
        ])
        .unwrap();
        let d = design_matrix(&data, &["age".into(), "arm".into()]).unwrap();
        assert_eq!(d.names, vec!["age", "arm=b", "arm=c"]);
        assert_eq!(d.rows, vec![0, 2, 3]);
        assert_eq!(d.n_excluded, 1);
        assert_eq!(d.x.row(0).iter().copied().collect::<Vec<_>>(), vec![30.0, 1.0, 0.0]);
        assert_eq!(d.x.row(2).iter().copied().collect::<Vec<_>>(), vec![40.0, 0.0, 1.0]);
    }
}
