//! Principal components and principal-axis factoring on an indicator
//! correlation matrix, component scores and their dichotomization.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::indicators::IndicatorMatrix;
use crate::linalg::{max_abs_off_diagonal, squared_multiple_correlations, sym_eigen, sym_eigenvalues};
use crate::registry::Registry;

/// Loadings above this magnitude are highlighted in exported tables.
pub const LOADING_HIGHLIGHT: f64 = 0.550;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    Pca,
    Paf,
}

impl ExtractionMethod {
    pub fn name(self) -> &'static str {
        match self {
            ExtractionMethod::Pca => "pca",
            ExtractionMethod::Paf => "paf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSolution {
    /// Descending. For PAF these belong to the final reduced matrix.
    pub eigenvalues: Vec<f64>,
    /// Unit-norm eigenvectors, k×q.
    pub vectors: DMatrix<f64>,
    /// `vectors` scaled by the square roots of their eigenvalues.
    pub loadings: DMatrix<f64>,
    pub method: ExtractionMethod,
    pub converged: bool,
    pub iterations: usize,
    /// PAF only.
    pub communalities: Option<Vec<f64>>,
    /// A communality exceeded 1 and was clamped.
    pub heywood: bool,
    /// The correlation matrix was singular, so initial communalities fell
    /// back to the largest absolute off-diagonal correlation per row.
    pub smc_fallback: bool,
}

impl EigenSolution {
    pub fn n_components(&self) -> usize {
        self.loadings.ncols()
    }
}

/// An extraction method behind a common interface.
pub trait Extractor: Send + Sync {
    fn method(&self) -> ExtractionMethod;

    /// Eigenvalues that retention criteria are evaluated against.
    fn retention_eigenvalues(&self, c: &CorrelationMatrix) -> Result<Vec<f64>>;

    /// Solution with (at least) `q` components.
    fn extract(&self, c: &CorrelationMatrix, q: usize) -> Result<EigenSolution>;
}

pub struct Pca;

impl Extractor for Pca {
    fn method(&self) -> ExtractionMethod {
        ExtractionMethod::Pca
    }

    fn retention_eigenvalues(&self, c: &CorrelationMatrix) -> Result<Vec<f64>> {
        sym_eigenvalues(&c.values)
    }

    fn extract(&self, c: &CorrelationMatrix, _q: usize) -> Result<EigenSolution> {
        pca(c)
    }
}

pub struct Paf {
    pub options: PafOptions,
}

impl Extractor for Paf {
    fn method(&self) -> ExtractionMethod {
        ExtractionMethod::Paf
    }

    /// Eigenvalues of the correlation matrix with initial communalities on
    /// the diagonal.
    fn retention_eigenvalues(&self, c: &CorrelationMatrix) -> Result<Vec<f64>> {
        sym_eigenvalues(&reduced_matrix(&c.values))
    }

    fn extract(&self, c: &CorrelationMatrix, q: usize) -> Result<EigenSolution> {
        paf_with(c, q, self.options)
    }
}

pub fn extraction_registry() -> Registry<dyn Extractor> {
    let mut reg: Registry<dyn Extractor> = Registry::new("extraction method");
    reg.register("pca", Box::new(Pca)).register(
        "paf",
        Box::new(Paf {
            options: PafOptions::default(),
        }),
    );
    reg
}

/// Full eigendecomposition; loading column j = eigenvector j × √λ_j.
pub fn pca(c: &CorrelationMatrix) -> Result<EigenSolution> {
    let eig = sym_eigen(&c.values)?;
    let loadings = scale_columns(&eig.vectors, &eig.values);
    Ok(EigenSolution {
        eigenvalues: eig.values,
        vectors: eig.vectors,
        loadings,
        method: ExtractionMethod::Pca,
        converged: true,
        iterations: 0,
        communalities: None,
        heywood: false,
        smc_fallback: false,
    })
}

fn scale_columns(vectors: &DMatrix<f64>, values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] * values[j].max(0.0).sqrt()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PafOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PafOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 1000,
        }
    }
}

fn initial_communalities(r: &DMatrix<f64>) -> (Vec<f64>, bool) {
    match squared_multiple_correlations(r) {
        Some(smc) => (smc, false),
        None => (max_abs_off_diagonal(r), true),
    }
}

fn with_diagonal(r: &DMatrix<f64>, diag: &[f64]) -> DMatrix<f64> {
    let mut m = r.clone();
    for (i, &h) in diag.iter().enumerate() {
        m[(i, i)] = h;
    }
    m
}

pub(crate) fn reduced_matrix(r: &DMatrix<f64>) -> DMatrix<f64> {
    with_diagonal(r, &initial_communalities(r).0)
}

/// Iterated principal-axis factoring with `q` factors.
pub fn paf(c: &CorrelationMatrix, q: usize) -> Result<EigenSolution> {
    paf_with(c, q, PafOptions::default())
}

pub fn paf_with(c: &CorrelationMatrix, q: usize, options: PafOptions) -> Result<EigenSolution> {
    let k = c.dim();
    if q == 0 || q >= k {
        return Err(Error::Dimension(format!(
            "principal-axis factoring needs 0 < q < k, got q = {q}, k = {k}"
        )));
    }
    let (mut h, smc_fallback) = initial_communalities(&c.values);
    let mut heywood = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut eig = sym_eigen(&with_diagonal(&c.values, &h))?;

    while iterations < options.max_iterations {
        iterations += 1;
        let loadings = scale_columns(&eig.vectors.columns(0, q).into_owned(), &eig.values[..q]);
        let mut next: Vec<f64> = (0..k).map(|i| loadings.row(i).norm_squared()).collect();
        for v in &mut next {
            if *v > 1.0 {
                *v = 1.0;
                heywood = true;
            }
        }
        let change = h
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        h = next;
        eig = sym_eigen(&with_diagonal(&c.values, &h))?;
        if change < options.tolerance {
            converged = true;
            break;
        }
    }

    let vectors = eig.vectors.columns(0, q).into_owned();
    let loadings = scale_columns(&vectors, &eig.values[..q]);
    Ok(EigenSolution {
        eigenvalues: eig.values,
        vectors,
        loadings,
        method: ExtractionMethod::Paf,
        converged,
        iterations,
        communalities: Some(h),
        heywood,
        smc_fallback,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentScores {
    /// n×q scores on standardized indicators.
    pub scores: DMatrix<f64>,
    /// Column-major membership flags: `dichotomized[j][i]` is 1 iff
    /// `scores[(i, j)] > cutoff`.
    pub dichotomized: Vec<Vec<u8>>,
    pub cutoff: f64,
    /// Component j was sign-flipped to make its loading sum nonnegative.
    pub flipped: Vec<bool>,
    /// Loadings after orientation, k×q.
    pub loadings: DMatrix<f64>,
    /// Rows missing on every indicator; scored but flagged.
    pub fully_missing: Vec<bool>,
}

/// Scores with the default cutoff of zero.
pub fn scores(ind: &IndicatorMatrix, sol: &EigenSolution, q: usize) -> Result<ComponentScores> {
    scores_with_cutoff(ind, sol, q, 0.0)
}

/// Steps 4-5: eigenvector-weighted scores on standardized indicators,
/// oriented so positive means more missingness, split at `cutoff`.
pub fn scores_with_cutoff(
    ind: &IndicatorMatrix,
    sol: &EigenSolution,
    q: usize,
    cutoff: f64,
) -> Result<ComponentScores> {
    if q == 0 || q > sol.vectors.ncols() {
        return Err(Error::Dimension(format!(
            "requested {q} components, solution has {}",
            sol.vectors.ncols()
        )));
    }
    if sol.vectors.nrows() != ind.n_cols() {
        return Err(Error::Dimension(format!(
            "solution has {} indicators, matrix has {}",
            sol.vectors.nrows(),
            ind.n_cols()
        )));
    }
    let (n, k) = (ind.n_rows(), ind.n_cols());
    let x = ind.values();
    let mut z = DMatrix::zeros(n, k);
    for j in 0..k {
        let col = x.column(j);
        let m = col.mean();
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(Error::DegenerateColumn(ind.column_names()[j].clone()));
        }
        for i in 0..n {
            z[(i, j)] = (x[(i, j)] - m) / sd;
        }
    }

    let mut weights = sol.vectors.columns(0, q).into_owned();
    let mut loadings = sol.loadings.columns(0, q).into_owned();
    let mut flipped = vec![false; q];
    for j in 0..q {
        if loadings.column(j).sum() < 0.0 {
            weights.column_mut(j).neg_mut();
            loadings.column_mut(j).neg_mut();
            flipped[j] = true;
        }
    }
    let scores = &z * &weights;
    let dichotomized = (0..q)
        .map(|j| {
            scores
                .column(j)
                .iter()
                .map(|&s| u8::from(s > cutoff))
                .collect()
        })
        .collect();
    Ok(ComponentScores {
        scores,
        dichotomized,
        cutoff,
        flipped,
        loadings,
        fully_missing: ind.fully_missing_rows(),
    })
}

/// Loading table (indicator × component) as CSV with three decimals.
pub fn loadings_csv(names: &[String], loadings: &DMatrix<f64>) -> String {
    let mut out = String::from("indicator");
    for j in 0..loadings.ncols() {
        let _ = write!(out, ",component_{}", j + 1);
    }
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        out.push_str(name);
        for j in 0..loadings.ncols() {
            let _ = write!(out, ",{:.3}", loadings[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Loading table as Markdown, bolding loadings above [`LOADING_HIGHLIGHT`].
pub fn loadings_markdown(names: &[String], loadings: &DMatrix<f64>) -> String {
    let mut out = String::from("| Indicator |");
    for j in 0..loadings.ncols() {
        let _ = write!(out, " Component {} |", j + 1);
    }
    out.push_str("\n|:---|");
    out.push_str(&"---:|".repeat(loadings.ncols()));
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        let _ = write!(out, "| {name} |");
        for j in 0..loadings.ncols() {
            let v = loadings[(i, j)];
            let cell = format!("{v:.3}");
            if v > LOADING_HIGHLIGHT {
                let _ = write!(out, " **{cell}** |");
            } else {
                let _ = write!(out, " {cell} |");
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "\nBoldface indicates a loading > {LOADING_HIGHLIGHT:.3}.");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{pearson, CorrelationKind};
    use approx::assert_abs_diff_eq;

    fn corr(values: DMatrix<f64>) -> CorrelationMatrix {
        CorrelationMatrix {
            values,
            kind: CorrelationKind::Pearson,
            pd_repaired: false,
            min_eigenvalue_before_repair: None,
        }
    }

    fn equicorrelation(k: usize, rho: f64) -> CorrelationMatrix {
        corr(DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho }))
    }

    #[test]
    fn pca_two_by_two() {
        let sol = pca(&equicorrelation(2, 0.35)).unwrap();
        assert_abs_diff_eq!(sol.eigenvalues[0], 1.35, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.eigenvalues[1], 0.65, epsilon = 1e-12);
        assert!(sol.converged);
        assert_eq!(sol.method, ExtractionMethod::Pca);
    }

    #[test]
    fn pca_identity_and_equicorrelation() {
        let id = pca(&corr(DMatrix::identity(5, 5))).unwrap();
        for v in &id.eigenvalues {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
        let eq = pca(&equicorrelation(3, 0.7)).unwrap();
        assert_abs_diff_eq!(eq.eigenvalues[0], 2.4, epsilon = 1e-12);
        assert_abs_diff_eq!(eq.eigenvalues[1], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(eq.eigenvalues[2], 0.3, epsilon = 1e-12);
        let total: f64 = eq.eigenvalues.iter().sum();
        assert_abs_diff_eq!(total, 3.0, epsilon = 1e-8);
        // loading = vector * sqrt(value)
        assert_abs_diff_eq!(eq.loadings[(0, 0)].abs(), (2.4f64 / 3.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn paf_identity_has_no_common_variance() {
        let sol = paf(&corr(DMatrix::identity(4, 4)), 1).unwrap();
        assert!(sol.converged);
        for v in sol.loadings.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
        for h in sol.communalities.unwrap() {
            assert_abs_diff_eq!(h, 0.0, epsilon = 1e-12);
        }
    }

    /// Oracle: plain fixed-point iteration on the one-factor model where
    /// the reduced matrix's leading eigenvalue gives the common loading.
    fn one_factor_oracle(k: usize, rho: f64) -> f64 {
        let mut h = 0.0;
        for _ in 0..100_000 {
            // reduced equicorrelation leading eigenvalue: h + (k-1) rho
            let lead = h + (k as f64 - 1.0) * rho;
            h = lead / k as f64;
        }
        h.sqrt()
    }

    #[test]
    fn paf_one_factor_loadings() {
        let sol = paf(&equicorrelation(3, 0.49), 1).unwrap();
        assert!(sol.converged);
        let oracle = one_factor_oracle(3, 0.49);
        assert_abs_diff_eq!(oracle, 0.7, epsilon = 1e-6);
        for i in 0..3 {
            assert_abs_diff_eq!(sol.loadings[(i, 0)].abs(), 0.7, epsilon = 1e-4);
        }
        // fixed point: one more update changes nothing beyond tolerance
        let h = sol.communalities.clone().unwrap();
        let recomputed: Vec<f64> = (0..3).map(|i| sol.loadings.row(i).norm_squared()).collect();
        for (a, b) in h.iter().zip(&recomputed) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn paf_reports_non_convergence() {
        let sol = paf_with(
            &equicorrelation(4, 0.3),
            2,
            PafOptions {
                tolerance: 1e-6,
                max_iterations: 3,
            },
        )
        .unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
    }

    #[test]
    fn paf_heywood_and_fallback() {
        let singular = corr(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 1.0, 0.2, 1.0, 1.0, 0.2, 0.2, 0.2, 1.0],
        ));
        let sol = paf(&singular, 1).unwrap();
        assert!(sol.smc_fallback);
        assert!(sol.communalities.unwrap().iter().all(|&h| h <= 1.0));
        assert!(paf(&singular, 3).is_err());
    }

    fn sample_indicators() -> IndicatorMatrix {
        let rows: [[f64; 3]; 8] = [
            [1., 1., 0.],
            [1., 1., 1.],
            [0., 0., 0.],
            [0., 1., 0.],
            [1., 0., 1.],
            [0., 0., 1.],
            [1., 1., 1.],
            [0., 0., 0.],
        ];
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        IndicatorMatrix::from_binary(
            vec!["a".into(), "b".into(), "c".into()],
            &DMatrix::from_row_slice(8, 3, &flat),
        )
        .unwrap()
    }

    #[test]
    fn scores_are_uncorrelated_and_oriented() {
        let ind = sample_indicators();
        let sol = pca(&pearson(&ind).unwrap()).unwrap();
        let s = scores(&ind, &sol, 3).unwrap();
        for j in 0..3 {
            assert!(s.loadings.column(j).sum() >= 0.0);
        }
        let centered = |j: usize| {
            let c = s.scores.column(j);
            let m = c.mean();
            c.iter().map(|v| v - m).collect::<Vec<_>>()
        };
        for a in 0..3 {
            for b in a + 1..3 {
                let (x, y) = (centered(a), centered(b));
                let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
                let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((dot / (nx * ny)).abs() < 1e-8);
            }
        }
        assert_eq!(s.fully_missing, vec![false, true, false, false, false, false, true, false]);
    }

    #[test]
    fn flipping_the_solution_keeps_membership() {
        let ind = sample_indicators();
        let sol = pca(&pearson(&ind).unwrap()).unwrap();
        let mut neg = sol.clone();
        neg.vectors.neg_mut();
        neg.loadings.neg_mut();
        let a = scores(&ind, &sol, 2).unwrap();
        let b = scores(&ind, &neg, 2).unwrap();
        assert_eq!(a.dichotomized, b.dichotomized);
        assert_ne!(a.flipped, b.flipped);
    }

    #[test]
    fn single_indicator_scores_reproduce_the_indicator() {
        let m = DMatrix::from_column_slice(5, 1, &[0., 1., 1., 0., 1.]);
        let ind = IndicatorMatrix::from_binary(vec!["a".into()], &m).unwrap();
        let sol = EigenSolution {
            eigenvalues: vec![1.0],
            vectors: DMatrix::from_element(1, 1, -1.0),
            loadings: DMatrix::from_element(1, 1, -1.0),
            method: ExtractionMethod::Pca,
            converged: true,
            iterations: 0,
            communalities: None,
            heywood: false,
            smc_fallback: false,
        };
        let s = scores(&ind, &sol, 1).unwrap();
        assert_eq!(s.flipped, vec![true]);
        assert_eq!(s.dichotomized[0], vec![0, 1, 1, 0, 1]);
    }

    #[test]
    fn zero_score_is_not_missing() {
        // balanced pair of perfectly anti-correlated rows plus a middle row
        let m = DMatrix::from_row_slice(4, 2, &[1., 0., 0., 1., 1., 0., 0., 1.]);
        let ind = IndicatorMatrix::from_binary(vec!["a".into(), "b".into()], &m).unwrap();
        let sol = EigenSolution {
            eigenvalues: vec![1.0, 1.0],
            vectors: DMatrix::from_row_slice(2, 1, &[std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2]),
            loadings: DMatrix::from_row_slice(2, 1, &[0.5, 0.5]),
            method: ExtractionMethod::Pca,
            converged: true,
            iterations: 0,
            communalities: None,
            heywood: false,
            smc_fallback: false,
        };
        let s = scores(&ind, &sol, 1).unwrap();
        assert!(s.scores.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(s.dichotomized[0], vec![0, 0, 0, 0]);
    }

    #[test]
    fn too_many_components_is_a_dimension_error() {
        let ind = sample_indicators();
        let sol = pca(&pearson(&ind).unwrap()).unwrap();
        assert!(matches!(scores(&ind, &sol, 4), Err(Error::Dimension(_))));
    }

    #[test]
    fn loading_exports() {
        let names = vec!["m1".to_string(), "m2".to_string()];
        let l = DMatrix::from_row_slice(2, 1, &[0.429, 0.724]);
        assert_eq!(loadings_csv(&names, &l), "indicator,component_1\nm1,0.429\nm2,0.724\n");
        let md = loadings_markdown(&names, &l);
        assert!(md.contains("| m2 | **0.724** |"));
        assert!(md.contains("| m1 | 0.429 |"));
        assert!(md.contains("> 0.550"));
    }
}
